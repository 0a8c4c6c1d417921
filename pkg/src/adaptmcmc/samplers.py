"""The sampler catalog: scalar and block kernels with internal adaptation.

Seven kinds, addressed by stable string names:

    arw        adaptive random walk on one dimension
    arwls      adaptive random walk on the log scale (positive support only)
    slice      univariate slice sampler, stepping out and shrinkage
    gibbs      exact beta draw where beta-binomial conjugacy holds
    block_arw  multivariate random walk with adapted proposal covariance
    afss       factor slice sampler along covariance eigenvectors
    afrw       per-factor random walk along covariance eigenvectors

Every sampler owns a SamplerState with its tuning parameters and an internal
clock. Adaptation is driven externally at a fixed invocation cadence with a
supplied step weight gamma; each update moves a parameter by at most gamma,
which is what makes the overall adaptation schedule diminishing.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .density import NEG_INF

SCALAR_KINDS = ("arw", "arwls", "slice", "gibbs")
BLOCK_KINDS = ("block_arw", "afss", "afrw")
ALL_KINDS = SCALAR_KINDS + BLOCK_KINDS

TARGET_ACCEPT_SCALAR = 0.44
TARGET_ACCEPT_BLOCK = 0.234
ADAPT_INTERVAL = 200

_LOG2 = math.log(2.0)


class SamplerError(ValueError):
    """Invalid sampler assignment (wrong support, no conjugacy, bad block)."""


@dataclass
class SamplerState:
    """Tuning parameters and bookkeeping for one sampler instance.

    Windowed counters are plain lists; per-step increments on them are
    cheaper than on arrays and they are only aggregated at adapt time."""
    clock: int = 0
    log_scale: np.ndarray = None
    mean: np.ndarray = None
    cov: np.ndarray = None
    rotation: np.ndarray = None
    rotation_default: bool = True
    prop_chol: np.ndarray = None
    widths: np.ndarray = None
    accept_count: list = None
    try_count: list = None
    expand_sum: list = None
    expand_n: list = None
    steps_since_adapt: int = 0
    adapt_rounds: int = 0

    def snapshot(self):
        """Deep copy of every field, for archive round-trip checks."""
        out = {}
        for name in self.__dataclass_fields__:
            v = getattr(self, name)
            if isinstance(v, np.ndarray):
                v = v.copy()
            elif isinstance(v, list):
                v = list(v)
            out[name] = v
        return out


def states_equal(a, b):
    """Field-for-field equality, exact on array contents."""
    sa = a.snapshot() if isinstance(a, SamplerState) else a
    sb = b.snapshot() if isinstance(b, SamplerState) else b
    if set(sa) != set(sb):
        return False
    for k, va in sa.items():
        vb = sb[k]
        if isinstance(va, (np.ndarray, list)) or isinstance(vb, (np.ndarray, list)):
            if va is None or vb is None:
                return va is vb
            va = np.asarray(va)
            vb = np.asarray(vb)
            if va.shape != vb.shape or not np.array_equal(va, vb):
                return False
        elif va != vb:
            return False
    return True


def default_state(kind, block, graph=None):
    """Fresh tuning state for a sampler of the given kind over block."""
    d = len(block)
    s = SamplerState()
    base = math.log(2.38 / math.sqrt(d))
    if kind in ("arw", "arwls"):
        s.log_scale = np.array([base])
        s.accept_count = [0]
        s.try_count = [0]
    elif kind == "slice":
        s.widths = np.ones(1)
        s.accept_count = [0]
        s.try_count = [0]
        s.expand_sum = [0.0]
        s.expand_n = [0]
    elif kind == "gibbs":
        s.accept_count = [0]
        s.try_count = [0]
    elif kind == "block_arw":
        s.log_scale = np.array([base])
        s.mean = np.zeros(d)
        s.cov = np.eye(d)
        s.prop_chol = np.eye(d)
        s.accept_count = [0]
        s.try_count = [0]
    elif kind == "afss":
        s.mean = np.zeros(d)
        s.cov = np.eye(d)
        s.rotation = np.eye(d)
        s.widths = np.ones(d)
        s.accept_count = [0] * d
        s.try_count = [0] * d
        s.expand_sum = [0.0] * d
        s.expand_n = [0] * d
    elif kind == "afrw":
        s.log_scale = np.full(d, base)
        s.mean = np.zeros(d)
        s.cov = np.eye(d)
        s.rotation = np.eye(d)
        s.accept_count = [0] * d
        s.try_count = [0] * d
    else:
        raise SamplerError(f"unknown sampler kind {kind!r}")
    return s


class SamplerAssignment:
    """A sampler kind bound to a dimension block with its tuning state."""

    __slots__ = ("kind", "block", "state", "plan", "dims_arr", "relation")

    def __init__(self, kind, block, state, graph):
        block = tuple(int(k) for k in block)
        if kind not in ALL_KINDS:
            raise SamplerError(f"unknown sampler kind {kind!r}")
        if len(block) == 0 or len(set(block)) != len(block):
            raise SamplerError(f"bad block {block!r}")
        if any(k < 0 or k >= graph.m for k in block):
            raise SamplerError(f"block {block!r} outside 0..{graph.m - 1}")
        if kind in SCALAR_KINDS and len(block) != 1:
            raise SamplerError(f"{kind} takes exactly one dimension")
        if kind in BLOCK_KINDS and len(block) < 2:
            raise SamplerError(f"{kind} needs at least two dimensions")
        self.relation = None
        if kind == "arwls" and not graph.positive_dim(block[0]):
            raise SamplerError(
                f"arwls needs strictly positive support on dim {block[0]}")
        if kind == "gibbs":
            rel = graph.conjugacy[block[0]]
            if rel is None:
                raise SamplerError(
                    f"no beta-binomial conjugacy at dim {block[0]}")
            self.relation = rel
        self.kind = kind
        self.block = block
        self.state = state
        self.dims_arr = np.array(block, dtype=np.intp)
        if len(block) == 1:
            self.plan = graph.dim_plans[block[0]]
        else:
            self.plan = graph.blanket_plan(block)

    def key(self):
        return (self.kind, self.block)

    def __repr__(self):
        return f"{self.kind}{list(self.block)}"


# ------------------------------------------------------------------ steps

def _accept(dl, rng):
    u = rng.random()
    return dl >= 0.0 or u < math.exp(dl)


def _step_arw(asg, model, rng):
    s = asg.state
    k = asg.block[0]
    x1 = model.values[k] + math.exp(s.log_scale[0]) * rng.standard_normal()
    lp0, lp1, stash = model.scalar_propose(k, x1)
    s.try_count[0] += 1
    if lp1 > NEG_INF and _accept(lp1 - lp0, rng):
        s.accept_count[0] += 1
        return True
    model.scalar_restore(k, stash)
    return False


def _step_arwls(asg, model, rng):
    s = asg.state
    k = asg.block[0]
    x0 = model.values[k]
    lx0 = math.log(x0)
    z = lx0 + math.exp(s.log_scale[0]) * rng.standard_normal()
    s.try_count[0] += 1
    if z > 700.0:  # exp would overflow; the move is hopeless anyway
        return False
    x1 = math.exp(z)
    lp0, lp1, stash = model.scalar_propose(k, x1)
    # proposal is symmetric in log space, so the ratio picks up x1/x0
    if lp1 > NEG_INF and _accept((lp1 + z) - (lp0 + lx0), rng):
        s.accept_count[0] += 1
        return True
    model.scalar_restore(k, stash)
    return False


def _step_gibbs(asg, model, rng):
    s = asg.state
    s.try_count[0] += 1
    a, b = asg.relation.posterior_params(model)
    if not (a > 0.0 and b > 0.0):
        return False
    v = rng.beta(a, b)
    v = min(max(v, 1e-300), 1.0 - 1e-16)
    model.scalar_set(asg.block[0], v)
    s.accept_count[0] += 1
    return True


MAX_SLICE_EXPANSIONS = 100


def _step_slice(asg, model, rng):
    s = asg.state
    k = asg.block[0]
    w = s.widths[0]
    x0 = model.values[k]
    stash = model.scalar_stash(k)
    lp0 = model.logp_dim(k)
    logy = lp0 + math.log(1.0 - rng.random())
    left = x0 - w * rng.random()
    right = left + w
    nexp = 0
    while nexp < MAX_SLICE_EXPANSIONS and model.probe_scalar(k, left) > logy:
        left -= w
        nexp += 1
    while nexp < MAX_SLICE_EXPANSIONS and model.probe_scalar(k, right) > logy:
        right += w
        nexp += 1
    s.expand_sum[0] += 1.0 + nexp
    s.expand_n[0] += 1
    while True:
        x1 = left + rng.random() * (right - left)
        if x1 == x0:
            model.scalar_restore(k, stash)
            break
        if model.probe_scalar(k, x1) > logy:
            break
        if x1 < x0:
            left = x1
        else:
            right = x1
    s.try_count[0] += 1
    s.accept_count[0] += 1
    return True


def _step_block_arw(asg, model, rng):
    s = asg.state
    d = len(asg.block)
    z = rng.standard_normal(d)
    step = math.exp(s.log_scale[0]) * (s.prop_chol @ z)
    prop = model.values[asg.dims_arr] + step
    lp0, lp1, stash = model.block_propose(asg.dims_arr, asg.plan, prop)
    s.try_count[0] += 1
    if lp1 > NEG_INF and _accept(lp1 - lp0, rng):
        s.accept_count[0] += 1
        return True
    model.block_restore(asg.dims_arr, asg.plan, stash)
    return False


def _step_afss(asg, model, rng):
    s = asg.state
    dims = asg.dims_arr
    plan = asg.plan
    for j in range(len(asg.block)):
        direction = s.rotation[:, j]
        w = s.widths[j]
        x0 = model.values[dims].copy()
        stash = model.block_stash(dims, plan)
        lp0 = model.logp_plan(plan)
        logy = lp0 + math.log(1.0 - rng.random())
        t_left = -w * rng.random()
        t_right = t_left + w
        nexp = 0
        while nexp < MAX_SLICE_EXPANSIONS and \
                model.probe_block(dims, plan, x0 + t_left * direction) > logy:
            t_left -= w
            nexp += 1
        while nexp < MAX_SLICE_EXPANSIONS and \
                model.probe_block(dims, plan, x0 + t_right * direction) > logy:
            t_right += w
            nexp += 1
        s.expand_sum[j] += 1.0 + nexp
        s.expand_n[j] += 1
        while True:
            t = t_left + rng.random() * (t_right - t_left)
            if t == 0.0:
                model.block_restore(dims, plan, stash)
                break
            if model.probe_block(dims, plan, x0 + t * direction) > logy:
                break
            if t < 0.0:
                t_left = t
            else:
                t_right = t
        s.try_count[j] += 1
        s.accept_count[j] += 1
    return True


def _step_afrw(asg, model, rng):
    s = asg.state
    dims = asg.dims_arr
    plan = asg.plan
    any_accept = False
    for j in range(len(asg.block)):
        step = math.exp(s.log_scale[j]) * rng.standard_normal() * s.rotation[:, j]
        prop = model.values[dims] + step
        lp0, lp1, stash = model.block_propose(dims, plan, prop)
        s.try_count[j] += 1
        if lp1 > NEG_INF and _accept(lp1 - lp0, rng):
            s.accept_count[j] += 1
            any_accept = True
        else:
            model.block_restore(dims, plan, stash)
    return any_accept


_STEP = {
    "arw": _step_arw,
    "arwls": _step_arwls,
    "slice": _step_slice,
    "gibbs": _step_gibbs,
    "block_arw": _step_block_arw,
    "afss": _step_afss,
    "afrw": _step_afrw,
}


def sampler_step(asg, model, rng):
    """Advance the chain with one invocation of this sampler. Returns whether
    the move was accepted (slice kinds always count as accepted)."""
    accepted = _STEP[asg.kind](asg, model, rng)
    asg.state.steps_since_adapt += 1
    return accepted


# ------------------------------------------------------------- adaptation

def _clamp_unit(h):
    return -1.0 if h < -1.0 else (1.0 if h > 1.0 else h)


def factor_rotation(state):
    """Eigenvectors of the covariance estimate, columns by descending
    eigenvalue, each column's first nonzero component positive.

    Before two adaptation rounds there is no usable estimate; the identity is
    returned and state.rotation_default is set."""
    d = len(state.mean)
    if state.adapt_rounds < 2 or state.cov is None:
        state.rotation_default = True
        return np.eye(d)
    try:
        w, v = np.linalg.eigh(state.cov)
    except np.linalg.LinAlgError:
        state.rotation_default = True
        return np.eye(d)
    order = np.argsort(-w, kind="stable")
    v = v[:, order].copy()
    for j in range(d):
        col = v[:, j]
        nz = np.flatnonzero(col)
        if len(nz) and col[nz[0]] < 0.0:
            v[:, j] = -col
    state.rotation_default = False
    return v


def _update_moments(s, x, gamma):
    dev = x - s.mean
    s.mean = s.mean + gamma * dev
    s.cov = s.cov + gamma * (np.outer(dev, dev) - s.cov)
    s.cov = 0.5 * (s.cov + s.cov.T)


def _chol_with_jitter(cov):
    jitter = 0.0
    scale = float(np.mean(np.diagonal(cov))) or 1.0
    for _ in range(10):
        try:
            return np.linalg.cholesky(cov + jitter * np.eye(cov.shape[0]))
        except np.linalg.LinAlgError:
            jitter = max(jitter * 10.0, 1e-12 * scale)
    return np.eye(cov.shape[0])


def _width_update(s, gamma):
    en = np.asarray(s.expand_n, dtype=float)
    es = np.asarray(s.expand_sum, dtype=float)
    upd = np.zeros_like(s.widths)
    have = en > 0
    if np.any(have):
        mean_ratio = es[have] / en[have]
        h = np.clip(np.log(mean_ratio) - _LOG2, -1.0, 1.0)
        upd[have] = gamma * h
    s.widths = s.widths * np.exp(upd)


def sampler_adapt(asg, gamma, model):
    """One adaptation round: move tuning parameters by at most gamma each,
    advance the internal clock, reset the windowed counters."""
    s = asg.state
    kind = asg.kind
    s.clock += 1
    s.adapt_rounds += 1
    if kind in ("arw", "arwls", "block_arw"):
        target = TARGET_ACCEPT_SCALAR if kind != "block_arw" else TARGET_ACCEPT_BLOCK
        if s.try_count[0] > 0:
            rate = s.accept_count[0] / s.try_count[0]
            s.log_scale[0] += gamma * _clamp_unit(rate - target)
    elif kind == "afrw":
        tc = np.asarray(s.try_count, dtype=float)
        tried = tc > 0
        if np.any(tried):
            ac = np.asarray(s.accept_count, dtype=float)
            rates = np.where(tried, ac / np.maximum(tc, 1.0), 0.0)
            delta = gamma * np.clip(rates - TARGET_ACCEPT_SCALAR, -1.0, 1.0)
            s.log_scale = s.log_scale + np.where(tried, delta, 0.0)
    elif kind in ("slice", "afss"):
        _width_update(s, gamma)
    if kind in BLOCK_KINDS:
        x = model.values[asg.dims_arr]
        _update_moments(s, x, gamma)
        if kind == "block_arw":
            s.prop_chol = _chol_with_jitter(s.cov)
        else:
            s.rotation = factor_rotation(s)
    d = len(s.try_count)
    s.accept_count = [0] * d
    s.try_count = [0] * d
    if s.expand_sum is not None:
        d = len(s.expand_sum)
        s.expand_sum = [0.0] * d
        s.expand_n = [0] * d
    s.steps_since_adapt = 0
