"""Two-level adaptive MCMC engine.

Inner level: every sampler tunes its own parameters (scales, widths,
covariance estimates) on a fixed invocation cadence, with diminishing step
weights gamma_c = (1 + c)^-0.7 driven by the sampler's own adaptation clock.
Clocks persist in an archive across structural changes, so a sampler that
returns to the kernel resumes where it left off rather than re-learning.

Outer level: after each measured segment the engine compares the minimum
effective-samples-per-time against the best seen. A worse kernel reverts to
the best structure. With probability p_k = min(1, k^-1/2) the engine then
replaces the sampler responsible for the worst-mixing dimension with a new
candidate, either a different scalar kind or a block sampler over that
dimension's correlation neighbourhood.

All decisions run on the deterministic cost clock by default, so a run is a
pure function of (graph, config, seed).
"""

import hashlib
import json
import time
from dataclasses import dataclass, field

import numpy as np

from .blocking import BLOCK_CAP, HEIGHT_GRID, cap_block, cluster, distance_matrix
from .diagnostics import MIN_CHAIN_LEN, ChainTrace, efficiency_report
from .samplers import (ALL_KINDS, BLOCK_KINDS, SCALAR_KINDS,
                       SamplerAssignment, default_state, sampler_adapt,
                       sampler_step)


class KernelError(ValueError):
    pass


@dataclass
class EngineConfig:
    """Knobs for one adaptation run."""
    n_inner: int = 2000
    max_outer: int = 10
    time_source: str = "cost"      # "cost" for reproducible decisions
    adapt_interval: int = 200
    height_grid: tuple = HEIGHT_GRID
    block_cap: int = BLOCK_CAP
    scalar_kinds: tuple = SCALAR_KINDS
    block_kinds: tuple = BLOCK_KINDS
    keep_traces: bool = False
    outer_p_override: float = None  # tests pin the replacement probability

    def __post_init__(self):
        if self.n_inner < MIN_CHAIN_LEN:
            raise ValueError(f"n_inner must be at least {MIN_CHAIN_LEN}")
        if self.max_outer < 0:
            raise ValueError("max_outer must be non-negative")
        if self.adapt_interval < 1:
            raise ValueError("adapt_interval must be positive")
        if self.time_source not in ("cost", "wall"):
            raise ValueError("time_source must be 'cost' or 'wall'")
        if not all(0.0 < h <= 1.0 for h in self.height_grid):
            raise ValueError("heights must lie in (0, 1]")
        if self.block_cap < 2:
            raise ValueError("block_cap must be at least 2")
        for k in self.scalar_kinds:
            if k not in SCALAR_KINDS:
                raise ValueError(f"unknown scalar kind {k!r}")
        for k in self.block_kinds:
            if k not in BLOCK_KINDS:
                raise ValueError(f"unknown block kind {k!r}")

    def to_dict(self):
        return {
            "n_inner": self.n_inner,
            "max_outer": self.max_outer,
            "time_source": self.time_source,
            "adapt_interval": self.adapt_interval,
            "height_grid": list(self.height_grid),
            "block_cap": self.block_cap,
            "scalar_kinds": list(self.scalar_kinds),
            "block_kinds": list(self.block_kinds),
        }

    @classmethod
    def from_dict(cls, d):
        kw = {}
        for k in ("n_inner", "max_outer", "adapt_interval", "block_cap"):
            if k in d:
                kw[k] = int(d[k])
        if "time_source" in d:
            kw["time_source"] = d["time_source"]
        for k in ("height_grid", "scalar_kinds", "block_kinds"):
            if k in d:
                kw[k] = tuple(d[k])
        return cls(**kw)


class AdaptSchedule:
    """Replacement probability and step-weight schedules."""

    @staticmethod
    def outer_p(k):
        return min(1.0, k ** -0.5)

    @staticmethod
    def inner_gamma(c):
        return (1.0 + c) ** -0.7


@dataclass
class ClockState:
    """Outer bookkeeping: external changes seen and segments since the last.

    A replacement advances externals and resets the wait; a quiet segment
    advances the wait. count = externals + since.
    """
    externals: int = 0
    since: int = 0

    @property
    def count(self):
        return self.externals + self.since

    def tick_external(self):
        self.externals += 1
        self.since = 0

    def tick_internal(self):
        self.since += 1


class SamplerArchive:
    """Shared tuning states keyed by (kind, block). Handing out the same
    object every time is what lets clocks survive kernel changes."""

    def __init__(self):
        self._states = {}

    def get(self, kind, block, graph=None):
        key = (kind, tuple(block))
        st = self._states.get(key)
        if st is None:
            st = default_state(kind, key[1], graph)
            self._states[key] = st
        return st

    def __contains__(self, key):
        return key in self._states

    def __len__(self):
        return len(self._states)

    def clocks(self):
        return {f"{k}{list(b)}": st.clock
                for (k, b), st in self._states.items()}


class KernelComposition:
    """An ordered list of sampler assignments covering every dimension."""

    def __init__(self, assignments, graph, created_at=0):
        validate_kernel(graph, assignments)
        self.assignments = list(assignments)
        self.graph = graph
        self.created_at = created_at

    def key(self):
        return tuple(a.key() for a in self.assignments)

    def kernel_id(self):
        """Short stable hash of the kind/block structure."""
        return hashlib.sha1(self.describe().encode()).hexdigest()[:12]

    def structure(self):
        return [(a.kind, a.block) for a in self.assignments]

    def describe(self):
        return "+".join(
            f"{a.kind}[{','.join(map(str, a.block))}]"
            for a in self.assignments)

    def scalar_on(self, k):
        """The scalar assignment currently owning dimension k, or None."""
        for a in self.assignments:
            if a.kind in SCALAR_KINDS and a.block[0] == k:
                return a
        return None

    def __repr__(self):
        return f"<kernel {self.describe()}>"


def validate_kernel(graph, assignments):
    """Every dimension covered at least once, no duplicated (kind, block)."""
    if not assignments:
        raise KernelError("kernel has no assignments")
    seen = set()
    covered = np.zeros(graph.m, dtype=bool)
    for a in assignments:
        if not isinstance(a, SamplerAssignment):
            raise KernelError(f"not a sampler assignment: {a!r}")
        k = a.key()
        if k in seen:
            raise KernelError(f"duplicate assignment {k}")
        seen.add(k)
        covered[list(a.block)] = True
    if not covered.all():
        missing = np.flatnonzero(~covered)
        raise KernelError(f"dimensions {missing.tolist()} have no sampler")


def all_scalar_structure(graph):
    """One scalar sampler per dimension: log-scale walks where support is
    strictly positive, plain walks elsewhere."""
    return [("arwls" if graph.positive_dim(k) else "arw", (k,))
            for k in range(graph.m)]


def build_kernel(structure, graph, archive):
    return KernelComposition(
        [SamplerAssignment(kind, block, archive.get(kind, block, graph), graph)
         for kind, block in structure], graph)


def initial_scalar_kernel(graph, archive):
    return build_kernel(all_scalar_structure(graph), graph, archive)


# ------------------------------------------------------------------ running

def run_segment(model, kernel, rng, n, config, schedule=AdaptSchedule):
    """Advance the chain n sweeps under a fixed kernel structure, adapting
    each sampler on its invocation cadence. Returns the trace."""
    graph = model.graph
    samples = np.empty((n, graph.m))
    cost0 = model.eval_count
    t0 = time.perf_counter()
    interval = config.adapt_interval
    assignments = kernel.assignments
    for i in range(n):
        for asg in assignments:
            sampler_step(asg, model, rng)
            st = asg.state
            if st.steps_since_adapt >= interval:
                sampler_adapt(asg, schedule.inner_gamma(st.clock + 1), model)
        samples[i] = model.values
    seconds = time.perf_counter() - t0
    return ChainTrace(samples=samples, cost=float(model.eval_count - cost0),
                      seconds=seconds, dim_names=graph.dim_names,
                      kernel=kernel.describe())


class SampleMoments:
    """Running first and second moments over every sample seen so far."""

    def __init__(self, m):
        self.m = m
        self.n = 0
        self.s1 = np.zeros(m)
        self.s2 = np.zeros((m, m))

    def update(self, samples):
        self.n += samples.shape[0]
        self.s1 += samples.sum(axis=0)
        self.s2 += samples.T @ samples

    def corr(self):
        """Correlation estimate; zero-variance dimensions stay uncorrelated."""
        if self.n < 2:
            return np.eye(self.m)
        mean = self.s1 / self.n
        cov = self.s2 / self.n - np.outer(mean, mean)
        var = np.diagonal(cov).copy()
        var[var < 0.0] = 0.0
        sd = np.sqrt(var)
        ok = sd > 0.0
        corr = np.eye(self.m)
        if ok.sum() >= 2:
            denom = np.outer(sd, sd)
            with np.errstate(invalid="ignore", divide="ignore"):
                full = np.where(denom > 0.0, cov / np.where(denom > 0, denom, 1.0), 0.0)
            np.clip(full, -1.0, 1.0, out=full)
            idx = np.flatnonzero(ok)
            corr[np.ix_(idx, idx)] = full[np.ix_(idx, idx)]
            np.fill_diagonal(corr, 1.0)
        return corr


# --------------------------------------------------------------- proposals

def eligible_scalar_kinds(graph, k, exclude=None, allowed=SCALAR_KINDS):
    kinds = []
    if "arw" in allowed:
        kinds.append("arw")
    if "arwls" in allowed and graph.positive_dim(k):
        kinds.append("arwls")
    if "gibbs" in allowed and graph.conjugacy[k] is not None:
        kinds.append("gibbs")
    if "slice" in allowed:
        kinds.append("slice")
    if exclude is not None and exclude in kinds:
        kinds.remove(exclude)
    return kinds


def propose_kernel(kernel, k_min, corr, archive, rng, config, created_at=0):
    """Draw a replacement sampler for the worst-mixing dimension.

    Returns (new_kernel, change_note). The kernel is unchanged (same object)
    when the draw collapses onto an assignment already present, or when the
    candidate pool is empty under the configured allowlists.
    """
    graph = kernel.graph
    current_scalar = kernel.scalar_on(k_min)
    exclude = current_scalar.kind if current_scalar is not None else None
    scalar_pool = eligible_scalar_kinds(graph, k_min, exclude,
                                        config.scalar_kinds)
    pool = list(scalar_pool)
    if graph.m >= 2:
        pool += [k for k in config.block_kinds]
    if not pool:
        return kernel, {"applied": False, "reason": "no candidates"}
    kind = pool[int(rng.integers(len(pool)))]

    block = (k_min,)
    keep_others = None
    if kind in BLOCK_KINDS:
        h = config.height_grid[int(rng.integers(len(config.height_grid)))]
        dend = cluster(distance_matrix(corr))
        block = cap_block(dend.block_containing(k_min, h), k_min, corr,
                          config.block_cap)
        if len(block) < 2:
            if not scalar_pool:
                return kernel, {"applied": False,
                                "reason": "no scalar fallback"}
            kind = scalar_pool[int(rng.integers(len(scalar_pool)))]
            block = (k_min,)
        else:
            keep_others = rng.random() < 0.5

    new_key = (kind, tuple(block))
    if any(a.key() == new_key for a in kernel.assignments):
        return kernel, {"kind": kind, "block": list(block), "applied": False,
                        "reason": "duplicate"}

    removed_idx = []
    removed = {}
    for i, a in enumerate(kernel.assignments):
        if k_min in a.block:
            removed_idx.append(i)
            removed[i] = a
        elif keep_others is False and a.kind in SCALAR_KINDS \
                and a.block[0] in block:
            removed_idx.append(i)
            removed[i] = a

    new_asg = SamplerAssignment(kind, block, archive.get(kind, block, graph),
                                graph)

    # Coverage repair: removing a block can orphan its other members; bring
    # back removed assignments until every dimension is covered again.
    covered = np.zeros(graph.m, dtype=bool)
    covered[list(block)] = True
    for i, a in enumerate(kernel.assignments):
        if i not in removed:
            covered[list(a.block)] = True
    restored = set()
    for i in removed_idx:
        a = removed[i]
        if any(not covered[d] for d in a.block):
            restored.add(i)
            covered[list(a.block)] = True

    out = []
    inserted = False
    for i, a in enumerate(kernel.assignments):
        if i not in removed:
            out.append(a)
        elif i in restored:
            if not inserted and i == removed_idx[0]:
                out.append(new_asg)
                inserted = True
            out.append(a)
        elif not inserted and i == removed_idx[0]:
            out.append(new_asg)
            inserted = True
    if not inserted:
        out.append(new_asg)

    note = {"kind": kind, "block": list(block), "applied": True,
            "dropped": [repr(removed[i])
                        for i in removed_idx if i not in restored],
            "kept_others": keep_others}
    return KernelComposition(out, graph, created_at), note


# ------------------------------------------------------------- outer loop

@dataclass
class OuterRecord:
    """Everything the outer loop knew and decided at one iteration."""
    iteration: int
    kernel: str
    eff: float
    eff_best: float
    reverted: bool
    k_min: int
    k_min_name: str
    p_used: float
    proposed: bool
    change: dict
    externals: int
    since: int
    cost: float
    seconds: float
    clocks: dict
    report: dict = None

    def to_dict(self, include_wall=True):
        d = {
            "iteration": self.iteration,
            "kernel": self.kernel,
            "eff": repr(float(self.eff)),
            "eff_best": repr(float(self.eff_best)),
            "reverted": self.reverted,
            "k_min": self.k_min,
            "k_min_name": self.k_min_name,
            "p_used": repr(float(self.p_used)),
            "proposed": self.proposed,
            "change": self.change,
            "externals": self.externals,
            "since": self.since,
            "cost": repr(float(self.cost)),
            "clocks": self.clocks,
        }
        if include_wall:
            d["seconds"] = float(self.seconds)
        if self.report is not None:
            d["report"] = self.report
        return d


@dataclass
class AutoAdaptResult:
    history: list
    best_structure: list
    best_eff: float
    kernel: object
    model: object
    archive: object
    moments: object
    total_cost: float
    total_seconds: float
    traces: list = field(default_factory=list)

    def best_kernel(self):
        return build_kernel(self.best_structure, self.model.graph,
                            self.archive)

    def history_json(self, include_wall=True):
        """Full run history as JSON. With include_wall=False the output is a
        pure function of (graph, config, seed): wall-clock fields drop out
        and everything decision-relevant remains."""
        return json.dumps([r.to_dict(include_wall) for r in self.history],
                          indent=1)


def run_auto_adapt(graph, config, seed, initial_values=None,
                   schedule=AdaptSchedule, keep_reports=True):
    """The full two-level loop: measure, keep or revert, maybe replace.

    Runs exactly config.max_outer segments of config.n_inner sweeps each and
    returns the history plus the best structure found.
    """
    rng = np.random.default_rng(seed)
    model = graph.initial_state() if initial_values is None \
        else graph.state(initial_values)
    archive = SamplerArchive()
    kernel = initial_scalar_kernel(graph, archive)
    moments = SampleMoments(graph.m)
    clock = ClockState()
    best_eff = 0.0
    best_structure = kernel.structure()
    history = []
    traces = []
    total_cost = 0.0
    total_seconds = 0.0

    for it in range(1, config.max_outer + 1):
        trace = run_segment(model, kernel, rng, config.n_inner, config,
                            schedule)
        total_cost += trace.cost
        total_seconds += trace.seconds
        moments.update(trace.samples)
        report = efficiency_report(trace.samples,
                                   trace.elapsed(config.time_source),
                                   graph.dim_names, config.time_source)
        measured = kernel.describe()
        eff = report.min_efficiency
        reverted = False
        if eff >= best_eff:
            best_eff = eff
            best_structure = kernel.structure()
        else:
            kernel = build_kernel(best_structure, graph, archive)
            reverted = True

        p = schedule.outer_p(it) if config.outer_p_override is None \
            else config.outer_p_override
        propose = rng.random() < p
        change = None
        if propose:
            kernel, change = propose_kernel(kernel, report.k_min,
                                            moments.corr(), archive, rng,
                                            config, created_at=it)
            clock.tick_external()
        else:
            clock.tick_internal()

        history.append(OuterRecord(
            iteration=it, kernel=measured, eff=eff, eff_best=best_eff,
            reverted=reverted, k_min=report.k_min,
            k_min_name=report.worst_dim_name, p_used=p, proposed=propose,
            change=change, externals=clock.externals, since=clock.since,
            cost=trace.cost, seconds=trace.seconds, clocks=archive.clocks(),
            report=report.to_dict() if keep_reports else None))
        if config.keep_traces:
            traces.append(trace)

    return AutoAdaptResult(
        history=history, best_structure=best_structure, best_eff=best_eff,
        kernel=kernel, model=model, archive=archive, moments=moments,
        total_cost=total_cost, total_seconds=total_seconds, traces=traces)
