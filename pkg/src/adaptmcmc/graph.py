"""Directed acyclic model graphs over scalar and vector random variables.

A graph is built from node specifications (stochastic or deterministic),
validated, topologically sorted, and frozen. Sampled scalar elements get flat
dimension ids 0..m-1 in declaration (topological) order; observed nodes carry
their data and contribute fixed likelihood terms.

The build step resolves every distribution parameter to a compact source
tuple (see density.py), precomputes per-dimension Markov blankets as term
index plans, and detects beta-binomial conjugacy per dimension.

Supported distribution families: beta, gamma, uniform, normal (second
parameter is a precision), binomial, poisson, and a multivariate normal with
exponentially decaying covariance over a fixed distance matrix. Count-valued
families (binomial, poisson) must be observed. Deterministic nodes are scalar
and support the ops sum, exp, and invsq (x -> 1/x**2).
"""

import math
import re
from dataclasses import dataclass, field

import numpy as np

from . import density
from .density import NEG_INF
from .state import ModelState


class GraphError(ValueError):
    """Raised for structural problems: cycles, bad refs, bad parameters."""


_NAME_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


# ---------------------------------------------------------------- supports

@dataclass(frozen=True)
class Support:
    kind: str  # "real" | "positive" | "interval" | "count"
    lo: float = float("-inf")
    hi: float = float("inf")

    def initial_value(self):
        if self.kind == "real":
            return 0.0
        if self.kind == "positive":
            return 1.0
        if self.kind == "interval":
            return 0.5 * (self.lo + self.hi)
        raise GraphError("count-valued nodes cannot be sampled")

    @property
    def strictly_positive(self):
        return self.kind == "positive" or (self.kind == "interval" and self.lo >= 0.0)


# ------------------------------------------------------------- param forms

@dataclass(frozen=True)
class Ref:
    """Reference to another node, optionally with an element index map."""
    name: str
    idx: object = None  # None | int | ndarray


@dataclass(frozen=True)
class LogLin:
    """Log-link linear predictor: mean = exp(sum of weighted referenced terms).

    entries is a sequence of (ref, weight) pairs; weight is None or an array
    aligned with the child node's elements (zeros switch a term off per
    element).
    """
    entries: tuple


@dataclass(frozen=True)
class InvSq:
    """Precision from a scale parameter: value = 1 / ref**2."""
    name: str


@dataclass(frozen=True)
class ExpCov:
    """Covariance sigma^2 * exp(-d/rho) over a fixed distance matrix."""
    sigma: object  # name | Ref | float
    rho: object
    dists: np.ndarray


def ref(name, idx=None):
    return Ref(name, idx)


def loglin(*entries):
    """Build a LogLin from refs, names, or (ref, weight) pairs."""
    out = []
    for ent in entries:
        if isinstance(ent, tuple) and len(ent) == 2 and not isinstance(ent, Ref):
            r, w = ent
            out.append((_as_ref(r), None if w is None else np.asarray(w, dtype=float)))
        else:
            out.append((_as_ref(ent), None))
    return LogLin(tuple(out))


def _as_ref(x):
    if isinstance(x, Ref):
        return x
    if isinstance(x, str):
        return Ref(x)
    raise GraphError(f"expected a node reference, got {x!r}")


# ---------------------------------------------------------------- node spec

_DIST_ARITY = {
    "beta": 2,
    "gamma": 2,
    "uniform": 2,
    "normal": 2,
    "binomial": 2,
    "poisson": 1,
    "mvn_expcov": 2,
}

_DEFAULT_SUPPORT = {
    "beta": lambda p: Support("interval", 0.0, 1.0),
    "gamma": lambda p: Support("positive"),
    "uniform": lambda p: Support("interval", float(p[0]), float(p[1])),
    "normal": lambda p: Support("real"),
    "binomial": lambda p: Support("count"),
    "poisson": lambda p: Support("count"),
    "mvn_expcov": lambda p: Support("real"),
}


@dataclass
class DistributionSpec:
    kind: str
    params: tuple


@dataclass
class NodeSpec:
    name: str
    kind: str  # "stochastic" | "deterministic"
    dist: DistributionSpec = None
    shape: int = 1
    observed: np.ndarray = None
    support: str = None  # optional override, only "positive" on normal
    op: str = None  # deterministic op
    op_args: tuple = ()


def node(name, dist, *params, shape=1, support=None):
    """Sampled stochastic node."""
    return NodeSpec(name=name, kind="stochastic",
                    dist=DistributionSpec(dist, params), shape=int(shape),
                    support=support)


def data(name, dist, *params, value, shape=None):
    """Observed stochastic node; value fixes it and is never sampled."""
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if shape is None:
        shape = arr.shape[0]
    return NodeSpec(name=name, kind="stochastic",
                    dist=DistributionSpec(dist, params), shape=int(shape),
                    observed=arr)


def det(name, op, *args):
    """Deterministic scalar node: op in {sum, exp, invsq} over scalar refs."""
    return NodeSpec(name=name, kind="deterministic", op=op, op_args=args)


# ----------------------------------------------------------------- plans

class EvalPlan:
    """Resolved evaluation recipe for one stochastic node.

    f_vec/f_one are the bound density evaluators; use_eta marks log-link
    nodes whose linear predictor the state keeps cached per element."""

    __slots__ = ("kind", "node_i", "shape", "x_start", "x_const", "positive",
                 "p0", "p1", "p_sigma", "p_rho", "dists", "loglin",
                 "c_y", "c_n", "c_logc", "c_lgamma_y1", "term_start",
                 "f_vec", "f_one", "use_eta")

    def __init__(self):
        self.x_const = None
        self.positive = False
        self.loglin = None
        self.p0 = self.p1 = self.p_sigma = self.p_rho = None
        self.dists = None
        self.c_y = self.c_n = self.c_logc = self.c_lgamma_y1 = None
        self.f_vec = self.f_one = None
        self.use_eta = False


def _compact_index(arr):
    """int for singletons, a slice when evenly strided, else the array.

    Slices make downstream indexing return views instead of copies."""
    if len(arr) == 1:
        return int(arr[0])
    d = np.diff(arr)
    st = int(d[0])
    if st > 0 and np.all(d == st):
        return slice(int(arr[0]), int(arr[-1]) + st, st)
    return arr


def _node_step(ep):
    """Whole-node evaluation step tuple (see DimPlan.steps)."""
    ts = ep.term_start
    if ep.kind == "mvn_expcov":
        return (ep, None, ts, ep.shape)
    if ep.shape == 1:
        return (ep, 0, ts, 1)
    return (ep, None, slice(ts, ts + ep.shape), ep.shape)


class DimPlan:
    """Markov blanket of a dimension (or dimension set) as term indices.

    entries: tuple of (node_i, elems or None) to recompute after a write.
    steps: the same entries resolved for the hot path as 4-tuples
    (EvalPlan, element, term_target, n_elements) where element is an int,
    None for all, a slice, or an index array, and term_target addresses
    the same elements within the flat term vector.
    term_idx / term_tup: flat positions of every term the blanket sum
    reads (array and tuple forms; small blankets sum faster in Python).
    mvn_nodes: multivariate nodes among the entries, whose factor cache
    needs saving around a rejected proposal.
    eta_delta: per-dimension increments to cached linear predictors, as
    (node_i, positions, weights) with positions an int, slice, index
    array, or None for every element, and weights None meaning one.
    eta_nodes: cached-predictor nodes any dim of this plan feeds, rebuilt
    wholesale around block writes.
    """

    __slots__ = ("entries", "steps", "term_idx", "term_tup", "small",
                 "mvn_nodes", "eta_delta", "eta_nodes")

    def __init__(self, entries, term_idx, mvn_nodes=(), steps=(),
                 eta_delta=(), eta_nodes=()):
        self.entries = entries
        self.steps = steps
        self.term_idx = term_idx
        self.term_tup = tuple(int(i) for i in term_idx)
        self.small = len(self.term_tup) <= 24
        self.mvn_nodes = mvn_nodes
        self.eta_delta = eta_delta
        self.eta_nodes = eta_nodes


@dataclass(frozen=True)
class ConjugacyRelation:
    """Beta prior with purely binomial observed dependents.

    The full conditional is Beta(a + sum_y, b + sum_nmy) where a and b are the
    current prior parameter values.
    """
    dim: int
    node_i: int
    elem: int
    a_src: tuple
    b_src: tuple
    sum_y: float
    sum_nmy: float
    n_children: int

    def posterior_params(self, state):
        a = density.fetch_one(self.a_src, state, self.elem)
        b = density.fetch_one(self.b_src, state, self.elem)
        return a + self.sum_y, b + self.sum_nmy


# ---------------------------------------------------------------- the graph

class ModelGraph:
    """Frozen model graph with resolved evaluation and dependency plans."""

    def __init__(self, specs):
        self.nodes = self._toposort(list(specs))
        self.index = {n.name: i for i, n in enumerate(self.nodes)}
        self._validate_names()
        self._layout()
        self._resolve()
        self._dependency_plans()
        self._detect_all_conjugacy()

    # -- construction ------------------------------------------------

    @staticmethod
    def _parents_of(spec):
        names = []

        def add(x):
            if isinstance(x, Ref):
                names.append(x.name)
            elif isinstance(x, str):
                names.append(x)
            elif isinstance(x, InvSq):
                names.append(x.name)
            elif isinstance(x, LogLin):
                for r, _ in x.entries:
                    names.append(r.name)
            elif isinstance(x, ExpCov):
                for p in (x.sigma, x.rho):
                    if isinstance(p, (Ref, str)):
                        names.append(p if isinstance(p, str) else p.name)

        if spec.kind == "deterministic":
            for a in spec.op_args:
                if isinstance(a, (Ref, str)):
                    names.append(a if isinstance(a, str) else a.name)
        else:
            for p in spec.dist.params:
                add(p)
        return names

    def _toposort(self, specs):
        names = {}
        for s in specs:
            if s.name in names:
                raise GraphError(f"duplicate node name {s.name!r}")
            names[s.name] = s
        order = []
        state = {}  # 0 visiting, 1 done

        def visit(s, chain):
            st = state.get(s.name)
            if st == 1:
                return
            if st == 0:
                cyc = " -> ".join(chain + [s.name])
                raise GraphError(f"cycle detected: {cyc}")
            state[s.name] = 0
            for pn in self._parents_of(s):
                if pn not in names:
                    raise GraphError(f"node {s.name!r} references undeclared node {pn!r}")
                visit(names[pn], chain + [s.name])
            state[s.name] = 1
            order.append(s)

        for s in specs:
            visit(s, [])
        return order

    def _validate_names(self):
        for s in self.nodes:
            if not _NAME_RE.match(s.name):
                raise GraphError(f"invalid node name {s.name!r}")

    def _layout(self):
        """Assign flat dims to sampled elements and term slots to all
        stochastic nodes."""
        self.m = 0
        self.dim_index = []      # dim -> (node_i, elem)
        self.dim_names = []
        self.node_dim_start = [None] * len(self.nodes)
        self.term_start = [None] * len(self.nodes)
        self.supports = [None] * len(self.nodes)
        t = 0
        for i, s in enumerate(self.nodes):
            if s.kind == "deterministic":
                self._validate_det(s)
                continue
            if s.dist.kind not in _DIST_ARITY:
                raise GraphError(f"unknown distribution {s.dist.kind!r} on {s.name!r}")
            if len(s.dist.params) != _DIST_ARITY[s.dist.kind]:
                raise GraphError(
                    f"{s.dist.kind} takes {_DIST_ARITY[s.dist.kind]} parameters, "
                    f"node {s.name!r} has {len(s.dist.params)}")
            if s.shape < 1:
                raise GraphError(f"node {s.name!r} has shape {s.shape}")
            sup = self._node_support(s)
            self.supports[i] = sup
            if s.observed is None:
                if sup.kind == "count":
                    raise GraphError(
                        f"count-valued node {s.name!r} must be observed")
                if s.dist.kind == "mvn_expcov" and s.shape < 2:
                    raise GraphError(f"mvn node {s.name!r} needs shape >= 2")
                self.node_dim_start[i] = self.m
                for e in range(s.shape):
                    self.dim_index.append((i, e))
                    self.dim_names.append(
                        s.name if s.shape == 1 else f"{s.name}[{e}]")
                self.m += s.shape
            else:
                if s.observed.shape[0] != s.shape:
                    raise GraphError(
                        f"observed value length {s.observed.shape[0]} does not "
                        f"match shape {s.shape} on {s.name!r}")
            self.term_start[i] = t
            t += 1 if s.dist.kind == "mvn_expcov" else s.shape
        self.n_terms = t

    def _validate_det(self, s):
        if s.op not in ("sum", "exp", "invsq"):
            raise GraphError(f"unknown deterministic op {s.op!r} on {s.name!r}")
        if s.op in ("exp", "invsq"):
            refs = [a for a in s.op_args if isinstance(a, (Ref, str))]
            if len(refs) != 1:
                raise GraphError(f"{s.op} takes exactly one reference on {s.name!r}")

    def _node_support(self, s):
        if s.dist.kind == "uniform":
            lo, hi = s.dist.params
            if not (np.isscalar(lo) and np.isscalar(hi)):
                raise GraphError(f"uniform bounds must be constants on {s.name!r}")
            if not float(lo) < float(hi):
                raise GraphError(f"uniform bounds out of order on {s.name!r}")
        sup = _DEFAULT_SUPPORT[s.dist.kind](s.dist.params)
        if s.support is not None:
            if s.support == "positive" and s.dist.kind == "normal":
                sup = Support("positive")
            else:
                raise GraphError(
                    f"support override {s.support!r} not allowed on "
                    f"{s.dist.kind} node {s.name!r}")
        return sup

    # -- source resolution -------------------------------------------

    def _scalar_source(self, x, child):
        """Resolve a scalar-valued parameter."""
        if isinstance(x, (int, float, np.floating, np.integer)):
            return ("c", float(x))
        if isinstance(x, str):
            x = Ref(x)
        if isinstance(x, InvSq):
            inner = self._scalar_source(Ref(x.name), child)
            return ("invsq", inner)
        if isinstance(x, Ref):
            pi = self._parent_index(x.name, child)
            p = self.nodes[pi]
            if p.kind == "deterministic":
                return ("d", pi)
            if p.observed is not None:
                if p.shape == 1 and x.idx is None:
                    return ("c", float(p.observed[0]))
                ix = 0 if x.idx is None else int(x.idx)
                return ("c", float(p.observed[ix]))
            if p.shape == 1:
                return ("s", self.node_dim_start[pi])
            if x.idx is None or not np.isscalar(x.idx):
                raise GraphError(
                    f"reference to vector node {x.name!r} needs a scalar index here")
            return ("s", self.node_dim_start[pi] + int(x.idx))
        raise GraphError(f"cannot resolve parameter {x!r}")

    def _source(self, x, child):
        """Resolve a parameter that may broadcast over the child's elements."""
        if isinstance(x, np.ndarray):
            arr = np.asarray(x, dtype=float)
            if arr.shape[0] != child.shape:
                raise GraphError(
                    f"constant vector length {arr.shape[0]} does not match "
                    f"node {child.name!r} shape {child.shape}")
            return ("cv", arr)
        if isinstance(x, (list, tuple)):
            return self._source(np.asarray(x, dtype=float), child)
        if isinstance(x, (Ref, str)):
            r = x if isinstance(x, Ref) else Ref(x)
            pi = self._parent_index(r.name, child)
            p = self.nodes[pi]
            if p.kind == "deterministic":
                return ("d", pi)
            if p.observed is not None:
                vals = p.observed
                if p.shape == 1:
                    return ("c", float(vals[0]))
                if r.idx is None:
                    if p.shape != child.shape:
                        raise GraphError(
                            f"shape mismatch {p.name!r} -> {child.name!r}")
                    return ("cv", vals.copy())
                idx = np.asarray(r.idx, dtype=np.intp)
                return ("cv", vals[idx])
            if p.shape == 1:
                return ("s", self.node_dim_start[pi])
            start = self.node_dim_start[pi]
            if r.idx is None:
                if p.shape != child.shape:
                    raise GraphError(
                        f"vector reference {p.name!r} -> {child.name!r} needs "
                        f"matching shapes or an index array")
                return ("v", start, p.shape, None)
            if np.isscalar(r.idx):
                return ("s", start + int(r.idx))
            idx = np.asarray(r.idx, dtype=np.intp)
            if idx.shape[0] != child.shape:
                raise GraphError(
                    f"index array length {idx.shape[0]} does not match node "
                    f"{child.name!r} shape {child.shape}")
            if idx.min() < 0 or idx.max() >= p.shape:
                raise GraphError(f"index out of range into {p.name!r}")
            return ("v", start, p.shape, idx)
        return self._scalar_source(x, child)

    def _parent_index(self, name, child):
        if name not in self.index:
            raise GraphError(f"node {child.name!r} references undeclared node {name!r}")
        return self.index[name]

    def _resolve(self):
        self.plans = [None] * len(self.nodes)
        self.det_plans = [None] * len(self.nodes)
        for i, s in enumerate(self.nodes):
            if s.kind == "deterministic":
                srcs = tuple(self._scalar_source(a, s) for a in s.op_args
                             if isinstance(a, (Ref, str, InvSq)))
                bias = sum(float(a) for a in s.op_args
                           if isinstance(a, (int, float)))
                self.det_plans[i] = (s.op, srcs, bias)
                continue
            plan = EvalPlan()
            plan.kind = s.dist.kind
            plan.node_i = i
            plan.shape = s.shape
            plan.term_start = self.term_start[i]
            if s.observed is not None:
                plan.x_const = s.observed
            else:
                plan.x_start = self.node_dim_start[i]
            sup = self.supports[i]
            plan.positive = sup.kind == "positive"
            k = s.dist.kind
            pars = s.dist.params
            if k == "mvn_expcov":
                mean, cov = pars
                if not isinstance(cov, ExpCov):
                    raise GraphError(
                        f"mvn node {s.name!r} needs an ExpCov covariance")
                d = np.asarray(cov.dists, dtype=float)
                if d.shape != (s.shape, s.shape):
                    raise GraphError(f"distance matrix shape mismatch on {s.name!r}")
                if not np.allclose(d, d.T) or np.any(np.diagonal(d) != 0.0) or d.min() < 0.0:
                    raise GraphError(f"bad distance matrix on {s.name!r}")
                plan.dists = d
                plan.p0 = self._source(mean, s)
                plan.p_sigma = self._scalar_source(cov.sigma, s)
                plan.p_rho = self._scalar_source(cov.rho, s)
            elif k == "poisson":
                (mean,) = pars
                if s.observed is None:
                    raise GraphError(f"poisson node {s.name!r} must be observed")
                y = s.observed
                if np.any(y < 0) or np.any(y != np.round(y)):
                    raise GraphError(f"poisson observations must be counts on {s.name!r}")
                plan.c_y = y.astype(float)
                plan.c_lgamma_y1 = np.array(
                    [math.lgamma(v + 1.0) for v in plan.c_y])
                if isinstance(mean, LogLin):
                    entries = tuple(
                        (self._source(r, s), w) for r, w in mean.entries)
                    for (src, w) in entries:
                        if w is not None and len(w) != s.shape:
                            raise GraphError(
                                f"loglin weight length mismatch on {s.name!r}")
                    plan.loglin = entries
                else:
                    plan.p0 = self._source(mean, s)
            elif k == "binomial":
                n_par, p_par = pars
                if s.observed is None:
                    raise GraphError(f"binomial node {s.name!r} must be observed")
                if isinstance(n_par, (Ref, str, LogLin, InvSq)):
                    raise GraphError(
                        f"binomial size must be constant on {s.name!r}")
                n_arr = np.broadcast_to(
                    np.asarray(n_par, dtype=float).ravel(), (s.shape,)).copy()
                y = s.observed
                if np.any(y < 0) or np.any(y > n_arr) or np.any(y != np.round(y)):
                    raise GraphError(
                        f"binomial observations outside [0, n] on {s.name!r}")
                plan.c_y = y.astype(float)
                plan.c_n = n_arr
                plan.c_logc = np.array([
                    math.lgamma(n + 1.0) - math.lgamma(yy + 1.0)
                    - math.lgamma(n - yy + 1.0)
                    for n, yy in zip(plan.c_n, plan.c_y)])
                if isinstance(p_par, (LogLin, InvSq)):
                    raise GraphError(
                        f"binomial probability must be a constant or reference "
                        f"on {s.name!r}")
                plan.p1 = self._source(p_par, s)
            else:
                plan.p0 = self._source(pars[0], s)
                plan.p1 = self._source(pars[1], s)
                if k == "uniform":
                    if plan.p0[0] != "c" or plan.p1[0] != "c":
                        raise GraphError(
                            f"uniform bounds must be constants on {s.name!r}")
            plan.f_vec = density.EVAL_VEC.get(k)
            plan.f_one = density.EVAL_ONE.get(k)
            # predictors routed through deterministic or 1/x^2 sources are
            # not linear in the underlying dims, so they get no cache
            plan.use_eta = plan.loglin is not None and all(
                src[0] in ("c", "cv", "s", "v") for src, _ in plan.loglin)
            self.plans[i] = plan

    # -- dependency plans --------------------------------------------

    def _source_deps(self, src, child_shape, weight=None):
        """Yield (parent_node_i, mapping) pairs for a resolved source.

        mapping is one of:
            ("all",)                every parent element hits all child elems
            ("identity",)
            ("gather", idx)
            plus an optional weight mask folded into the affected elems.
        """
        tag = src[0]
        if tag in ("c", "cv"):
            return []
        if tag == "s":
            pos = src[1]
            ni, _ = self.dim_index[pos]
            return [(ni, ("scalar", pos, weight))]
        if tag == "v":
            _, start, n, idx = src
            ni, _ = self.dim_index[start]
            return [(ni, ("vector", start, idx, weight))]
        if tag == "invsq":
            return self._source_deps(src[1], child_shape, weight)
        if tag == "d":
            out = []
            op, srcs, _ = self.det_plans[src[1]]
            for inner in srcs:
                out.extend(self._source_deps(inner, child_shape, weight))
            return out
        raise AssertionError(src)

    def _eta_plans(self):
        """Cached linear predictor bookkeeping: which nodes carry a cache
        and how a write to each dim shifts the cached values."""
        self.loglin_cached = []
        delta = [[] for _ in range(self.m)]
        for ni, plan in enumerate(self.plans):
            if plan is None or not plan.use_eta:
                continue
            self.loglin_cached.append(ni)
            for src, w in plan.loglin:
                tag = src[0]
                if tag == "s":
                    # a scalar parent shifts every element of the predictor
                    if w is None:
                        delta[src[1]].append((ni, None, None))
                        continue
                    nz = np.flatnonzero(w)
                    if len(nz) == 0:
                        continue
                    if len(nz) == plan.shape:
                        delta[src[1]].append((ni, None, w))
                    else:
                        pos = _compact_index(nz)
                        we = float(w[nz[0]]) if type(pos) is int else w[nz].copy()
                        delta[src[1]].append((ni, pos, we))
                elif tag == "v":
                    _, start, n, idx = src
                    if idx is None:
                        for e in range(n):
                            we = None if w is None else float(w[e])
                            if we == 0.0:
                                continue
                            delta[start + e].append((ni, e, we))
                        continue
                    order = np.argsort(idx, kind="stable")
                    sorted_idx = idx[order]
                    bounds = np.searchsorted(sorted_idx, np.arange(n + 1))
                    for e in range(n):
                        sel = order[bounds[e]:bounds[e + 1]]
                        if w is not None:
                            sel = sel[w[sel] != 0.0]
                        if len(sel) == 0:
                            continue
                        sel = np.sort(sel)
                        pos = _compact_index(sel)
                        if type(pos) is int:
                            we = None if w is None else float(w[pos])
                        else:
                            we = None if w is None else w[sel].copy()
                        delta[start + e].append((ni, pos, we))
        self.loglin_cached = tuple(self.loglin_cached)
        self._eta_delta_dim = [tuple(d) for d in delta]

    def _eta_nodes_for(self, dims):
        seen = {ni for k in dims for ni, _, _ in self._eta_delta_dim[k]}
        return tuple(sorted(seen))

    def _dependency_plans(self):
        """Per-dimension invalidation and Markov blanket plans."""
        self._eta_plans()
        # children[dim] -> {node_i: set of elems or None (=all)}
        children = [dict() for _ in range(self.m)]

        def note(dim, node_i, elems):
            cur = children[dim].get(node_i, set())
            if cur is None:
                return
            if elems is None:
                children[dim][node_i] = None
            else:
                cur.update(elems)
                children[dim][node_i] = cur

        for ci, s in enumerate(self.nodes):
            plan = self.plans[ci]
            if plan is None:
                continue
            deps = []
            for src in (plan.p0, plan.p1, plan.p_sigma, plan.p_rho):
                if src is not None:
                    deps.extend(self._source_deps(src, s.shape))
            if plan.loglin is not None:
                for src, w in plan.loglin:
                    deps.extend(self._source_deps(src, s.shape, weight=w))
            is_mvn = plan.kind == "mvn_expcov"
            for pi, mapping in deps:
                if self.node_dim_start[pi] is None:
                    continue  # parent observed or deterministic-only
                kind = mapping[0]
                if kind == "scalar":
                    _, pos, w = mapping
                    elems = None
                    if w is not None and not is_mvn:
                        nz = np.flatnonzero(w)
                        elems = nz if len(nz) < s.shape else None
                    note(pos, ci, None if is_mvn else elems)
                else:
                    _, start, idx, w = mapping
                    p_shape = self.nodes[pi].shape
                    if idx is None:
                        for e in range(p_shape):
                            if w is not None and not is_mvn and w[e] == 0.0:
                                continue
                            affected = None if is_mvn else np.array([e])
                            note(start + e, ci, affected)
                    else:
                        order = np.argsort(idx, kind="stable")
                        sorted_idx = idx[order]
                        bounds = np.searchsorted(
                            sorted_idx, np.arange(p_shape + 1))
                        for e in range(p_shape):
                            sel = order[bounds[e]:bounds[e + 1]]
                            if w is not None:
                                sel = sel[w[sel] != 0.0]
                            if len(sel) == 0:
                                continue
                            note(start + e, ci,
                                 None if is_mvn else np.sort(sel))

        self.dim_plans = []
        self._children_raw = children
        for k in range(self.m):
            ni, e = self.dim_index[k]
            own_is_mvn = self.plans[ni].kind == "mvn_expcov"
            entries = {ni: None if own_is_mvn else {e}}
            for ci, elems in children[k].items():
                if ci == ni:
                    prev = entries[ni]
                    if prev is None or elems is None:
                        entries[ni] = None
                    else:
                        prev.update(elems)
                    continue
                entries[ci] = None if elems is None else set(elems)
            self.dim_plans.append(self._make_plan(
                entries, eta_delta=self._eta_delta_dim[k],
                eta_nodes=self._eta_nodes_for((k,))))
        self.node_steps = tuple(
            _node_step(p) for p in self.plans if p is not None)

    def _make_plan(self, entries, eta_delta=(), eta_nodes=()):
        ent = []
        steps = []
        idx_parts = []
        mvn = []
        for ni in sorted(entries):
            elems = entries[ni]
            ep = self.plans[ni]
            ts = self.term_start[ni]
            if ep.kind == "mvn_expcov":
                ent.append((ni, None))
                steps.append((ep, None, ts, ep.shape))
                idx_parts.append(np.array([ts], dtype=np.intp))
                mvn.append(ni)
            elif elems is None:
                ent.append((ni, None))
                steps.append(_node_step(ep))
                idx_parts.append(np.arange(ts, ts + ep.shape, dtype=np.intp))
            else:
                arr = np.array(sorted(elems), dtype=np.intp)
                ent.append((ni, arr))
                n = len(arr)
                if n == 1:
                    steps.append((ep, int(arr[0]), ts + int(arr[0]), 1))
                elif n <= 4:
                    # element loops beat vectorized evaluation this small
                    el = tuple(int(x) for x in arr)
                    steps.append((ep, el, tuple(ts + x for x in el), n))
                else:
                    el = _compact_index(arr)
                    if type(el) is slice:
                        tgt = slice(ts + el.start, ts + el.stop, el.step)
                    else:
                        tgt = ts + arr
                    steps.append((ep, el, tgt, n))
                idx_parts.append(ts + arr)
        return DimPlan(tuple(ent), np.concatenate(idx_parts), tuple(mvn),
                       tuple(steps), eta_delta, eta_nodes)

    def blanket_plan(self, dims):
        """Merged Markov blanket plan for a set of dimensions."""
        merged = {}
        for k in dims:
            for ni, elems in self.dim_plans[k].entries:
                cur = merged.get(ni, set())
                if cur is None:
                    continue
                if elems is None:
                    merged[ni] = None
                else:
                    cur.update(elems.tolist())
                    merged[ni] = cur
        return self._make_plan(merged, eta_nodes=self._eta_nodes_for(dims))

    def full_plan(self):
        entries = []
        steps = []
        idx_parts = []
        for i, plan in enumerate(self.plans):
            if plan is None:
                continue
            entries.append((i, None))
            steps.append(_node_step(plan))
            ts = self.term_start[i]
            n = 1 if plan.kind == "mvn_expcov" else plan.shape
            idx_parts.append(np.arange(ts, ts + n, dtype=np.intp))
        return DimPlan(tuple(entries), np.concatenate(idx_parts),
                       steps=tuple(steps), eta_nodes=self.loglin_cached)

    # -- conjugacy ----------------------------------------------------

    def _detect_all_conjugacy(self):
        self.conjugacy = [None] * self.m
        for k in range(self.m):
            self.conjugacy[k] = self._detect_one(k)

    def _detect_one(self, k):
        ni, e = self.dim_index[k]
        s = self.nodes[ni]
        if s.dist is None or s.dist.kind != "beta":
            return None
        plan = self.plans[ni]
        sum_y = 0.0
        sum_nmy = 0.0
        n_children = 0
        for ci, elems in self._children_raw[k].items():
            if ci == ni:
                continue
            child = self.nodes[ci]
            if child.dist is None or child.dist.kind != "binomial":
                return None
            if child.observed is None:
                return None
            cplan = self.plans[ci]
            el = range(child.shape) if elems is None else elems
            for ce in el:
                sum_y += cplan.c_y[ce]
                sum_nmy += cplan.c_n[ce] - cplan.c_y[ce]
                n_children += 1
        if n_children == 0:
            # a pure beta prior with no dependents is still conjugate
            pass
        return ConjugacyRelation(
            dim=k, node_i=ni, elem=e, a_src=plan.p0, b_src=plan.p1,
            sum_y=sum_y, sum_nmy=sum_nmy, n_children=n_children)

    # -- public helpers ------------------------------------------------

    def dim_support(self, k):
        ni, _ = self.dim_index[k]
        return self.supports[ni]

    def positive_dim(self, k):
        return self.dim_support(k).strictly_positive

    def mvn_blocks(self):
        """Dim id tuples of multivariate nodes, for blocked default kernels."""
        out = []
        for i, plan in enumerate(self.plans):
            if plan is not None and plan.kind == "mvn_expcov" \
                    and self.node_dim_start[i] is not None:
                st = self.node_dim_start[i]
                out.append(tuple(range(st, st + plan.shape)))
        return out

    def initial_values(self):
        vals = np.empty(self.m)
        for k in range(self.m):
            vals[k] = self.dim_support(k).initial_value()
        return vals

    def initial_state(self):
        st = ModelState(self, self.initial_values())
        if st.logp_full() == NEG_INF:
            raise GraphError("default initial values fall outside the support")
        return st

    def state(self, values):
        return ModelState(self, np.asarray(values, dtype=float).copy())


def build_graph(specs):
    """Validate and freeze a list of node specifications into a ModelGraph."""
    return ModelGraph(specs)


# -------------------------------------------------------------- module ops

def log_density_full(state):
    return state.logp_full()


def log_density_conditional(state, dims):
    """Markov blanket log density: terms of the owning nodes plus all their
    stochastic dependents. Differences of this quantity across changes to
    `dims` equal differences of the full log density."""
    return state.logp_plan(state.graph.blanket_plan(dims))


def detect_conjugacy(graph, k):
    """ConjugacyRelation for dimension k, or None."""
    return graph.conjugacy[k]


# ------------------------------------------------------------- text format

_GRAMMAR = """
Plain text model files, one node per line:

    <name> stoch <dist> <param> <param> ...
    <name> data  <dist> <param> <param> ... = <value>
    <name> det   <op>   <arg> ...

Comments run from '#' to end of line; blank lines are ignored. A parameter
token that parses as a number is a constant, anything else is a node
reference. A poisson mean may be written exp(a+b+c) for a log-link linear
predictor. Deterministic ops: sum, exp, invsq. All text format nodes are
scalar; vector and multivariate nodes are built programmatically.
"""

_EXP_RE = re.compile(r"^exp\(([A-Za-z0-9_+\s]+)\)$")


def parse_model(text):
    """Parse the plain text model format into a ModelGraph."""
    specs = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        value = None
        if "=" in line:
            line, _, vpart = line.partition("=")
            vpart = vpart.strip()
            try:
                value = float(vpart)
            except ValueError:
                raise GraphError(f"line {lineno}: bad observed value {vpart!r}")
        toks = line.split()
        if len(toks) < 3:
            raise GraphError(f"line {lineno}: expected name, kind, distribution")
        name, kind, dist = toks[0], toks[1], toks[2]
        params = [_parse_token(t, lineno) for t in toks[3:]]
        if kind == "det":
            specs.append(det(name, dist, *[
                p.name if isinstance(p, Ref) else p for p in params]))
        elif kind == "stoch":
            if value is not None:
                raise GraphError(f"line {lineno}: sampled node cannot carry a value")
            specs.append(node(name, dist, *params))
        elif kind == "data":
            if value is None:
                raise GraphError(f"line {lineno}: data node needs '= value'")
            specs.append(data(name, dist, *params, value=value))
        else:
            raise GraphError(f"line {lineno}: unknown node kind {kind!r}")
    if not specs:
        raise GraphError("empty model file")
    return build_graph(specs)


def _parse_token(tok, lineno):
    m = _EXP_RE.match(tok)
    if m:
        names = [t.strip() for t in m.group(1).split("+")]
        return loglin(*names)
    try:
        return float(tok)
    except ValueError:
        pass
    if _NAME_RE.match(tok):
        return Ref(tok)
    raise GraphError(f"line {lineno}: cannot parse parameter {tok!r}")


def parse_model_file(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_model(fh.read())
