"""Benchmark model builders and the comparison experiment driver.

Three hierarchical models, sized for a desk machine but structurally faithful
to their full-scale originals:

    litters   two-group beta-binomial random effect model
    glmm      Poisson log-link GLMM with crossed random effects
    spatial   latent Gaussian field with exponentially decaying covariance

Datasets are simulated from the model structures at fixed generating values;
the comparison is about sampler efficiency ordering, not posterior values.

Arms: static baselines (all_scalar, all_blocked, default), a simplified
global-cut blocking baseline (auto_block_baseline), and the two-level
adaptive engine (auto_adapt). Every arm reports adaptation time, final
efficiency, and a per-stage efficiency series for box plots. Times default
to deterministic cost units so tables reproduce bit-for-bit across machines.
"""

import csv
import io
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .blocking import hclust_complete, distance_matrix
from .diagnostics import correlation_matrix, efficiency_report
from .engine import (EngineConfig, KernelComposition, SamplerArchive,
                     all_scalar_structure, build_kernel, run_auto_adapt,
                     run_segment)
from .graph import ExpCov, InvSq, build_graph, data, loglin, node, ref

WORKERS_ENV = "ADAPTMCMC_WORKERS"

MODEL_NAMES = ("litters", "glmm", "spatial")
ALGO_NAMES = ("all_scalar", "all_blocked", "default", "auto_block_baseline",
              "auto_adapt")

DESK_SIZE = {"litters": 16, "glmm": 20, "spatial": 25}
DESK_N_INNER = {"litters": 10000, "glmm": 5000, "spatial": 5000}
DESK_MAX_OUTER = 15


# ------------------------------------------------------------------ models

def build_litters(n_per_group=16, seed=0):
    """Two groups of binomial litters with beta survival probabilities.

    Hyperpriors follow the original example: gamma(1, 0.001) on the first
    group's shape parameters, uniform(0,100)/(0,50) on the second's.
    """
    if n_per_group < 2:
        raise ValueError("need at least 2 litters per group")
    rng = np.random.default_rng(seed)
    gen_a = (25.0, 7.0)
    gen_b = (3.0, 2.0)
    sizes = [rng.integers(8, 16, size=n_per_group) for _ in range(2)]
    probs = [rng.beta(gen_a[g], gen_b[g], size=n_per_group) for g in range(2)]
    ys = [rng.binomial(sizes[g], probs[g]).astype(float) for g in range(2)]

    specs = [
        node("alpha1", "gamma", 1.0, 0.001),
        node("beta1", "gamma", 1.0, 0.001),
        node("alpha2", "uniform", 0.0, 100.0),
        node("beta2", "uniform", 0.0, 50.0),
        node("p1", "beta", "alpha1", "beta1", shape=n_per_group),
        node("p2", "beta", "alpha2", "beta2", shape=n_per_group),
        data("y1", "binomial", sizes[0].astype(float), ref("p1"), value=ys[0]),
        data("y2", "binomial", sizes[1].astype(float), ref("p2"), value=ys[1]),
    ]
    graph = build_graph(specs)
    info = {"gen_alpha": gen_a, "gen_beta": gen_b,
            "sizes": [s.tolist() for s in sizes],
            "y": [y.tolist() for y in ys]}
    return graph, info


def build_glmm(n_subjects=20, seed=0):
    """Poisson log-link GLMM: counts per subject, event type, and period.

    log mu = a0 + a_k + b_l + c_kl + subject + subject:event +
    subject:period effects, with the identifiability zeros a_2 = b_4 =
    c_14 = c_2l = 0, so 8 free fixed effects remain. Scale parameters of
    the three random effect families get half-normal priors.
    """
    if n_subjects < 2:
        raise ValueError("need at least 2 subjects")
    rng = np.random.default_rng(seed)
    n = n_subjects
    gen = {"a0": 0.5, "a1": 0.3, "b": np.array([0.2, -0.2, 0.1]),
           "c": np.array([0.15, -0.1, 0.05]), "sd": (0.5, 0.3, 0.2)}
    gam = rng.normal(0.0, gen["sd"][0], size=n)
    v = rng.normal(0.0, gen["sd"][1], size=2 * n)
    om = rng.normal(0.0, gen["sd"][2], size=4 * n)

    i_idx = np.repeat(np.arange(n), 8)
    k_idx = np.tile(np.repeat(np.arange(2), 4), n)
    l_idx = np.tile(np.arange(4), 2 * n)
    w_a1 = (k_idx == 0).astype(float)
    w_b = (l_idx < 3).astype(float)
    idx_b = np.where(l_idx < 3, l_idx, 0)
    w_c = ((k_idx == 0) & (l_idx < 3)).astype(float)
    idx_c = np.where(w_c > 0.0, l_idx, 0)
    idx_v = i_idx * 2 + k_idx
    idx_om = i_idx * 4 + l_idx

    eta = (gen["a0"] + gen["a1"] * w_a1 + gen["b"][idx_b] * w_b
           + gen["c"][idx_c] * w_c + gam[i_idx] + v[idx_v] + om[idx_om])
    y = rng.poisson(np.exp(eta)).astype(float)

    specs = [
        node("a0", "normal", 0.0, 0.001),
        node("a1", "normal", 0.0, 0.001),
        node("b", "normal", 0.0, 0.001, shape=3),
        node("c", "normal", 0.0, 0.001, shape=3),
        node("sd_subj", "normal", 0.0, 0.1, support="positive"),
        node("sd_event", "normal", 0.0, 0.1, support="positive"),
        node("sd_period", "normal", 0.0, 0.1, support="positive"),
        node("subj", "normal", 0.0, InvSq("sd_subj"), shape=n),
        node("ev", "normal", 0.0, InvSq("sd_event"), shape=2 * n),
        node("per", "normal", 0.0, InvSq("sd_period"), shape=4 * n),
        data("y", "poisson",
             loglin("a0", ("a1", w_a1), (ref("b", idx_b), w_b),
                    (ref("c", idx_c), w_c), ref("subj", i_idx),
                    ref("ev", idx_v), ref("per", idx_om)),
             value=y),
    ]
    graph = build_graph(specs)
    info = {"gen": {k: (val.tolist() if isinstance(val, np.ndarray) else val)
                    for k, val in gen.items()},
            "y": y.tolist()}
    return graph, info


def build_spatial(n_sites=25, seed=0):
    """Latent Gaussian field on random unit-square sites, Poisson counts.

    Covariance sigma^2 * exp(-d/rho) over Euclidean distances; uniform
    priors on sigma and rho over a wide range; scalar mean with a diffuse
    normal prior.
    """
    if n_sites < 4:
        raise ValueError("need at least 4 sites")
    rng = np.random.default_rng(seed)
    coords = rng.random((n_sites, 2))
    diff = coords[:, None, :] - coords[None, :, :]
    dists = np.sqrt((diff ** 2).sum(axis=-1))
    gen = {"mu": 1.0, "sigma": 1.0, "rho": 0.3}
    cov = gen["sigma"] ** 2 * np.exp(-dists / gen["rho"])
    chol = np.linalg.cholesky(cov + 1e-12 * np.eye(n_sites))
    g = gen["mu"] + chol @ rng.standard_normal(n_sites)
    y = rng.poisson(np.exp(g)).astype(float)

    specs = [
        node("mu", "normal", 0.0, 0.001),
        node("sigma", "uniform", 0.0, 10.0),
        node("rho", "uniform", 0.01, 5.0),
        node("g", "mvn_expcov", "mu", ExpCov("sigma", "rho", dists),
             shape=n_sites),
        data("y", "poisson", loglin("g"), value=y),
    ]
    graph = build_graph(specs)
    info = {"gen": gen, "coords": coords.tolist(), "y": y.tolist()}
    return graph, info


MODEL_BUILDERS = {"litters": build_litters, "glmm": build_glmm,
                  "spatial": build_spatial}


def build_model(name, size=None, seed=0):
    if name not in MODEL_BUILDERS:
        raise ValueError(f"unknown model {name!r}; know {MODEL_NAMES}")
    if size is None:
        size = DESK_SIZE[name]
    return MODEL_BUILDERS[name](size, seed)


# ---------------------------------------------------------------- kernels

def build_baseline_kernel(name, graph, archive=None):
    """Static kernel structures the comparison measures against."""
    if archive is None:
        archive = SamplerArchive()
    if name == "all_scalar":
        structure = all_scalar_structure(graph)
    elif name == "all_blocked":
        structure = [("block_arw", tuple(range(graph.m)))]
    elif name == "default":
        structure = default_structure(graph)
    else:
        raise ValueError(f"unknown baseline kernel {name!r}")
    return build_kernel(structure, graph, archive)


def default_structure(graph):
    """Conjugate draws where detected, one block per true multivariate node,
    the all-scalar rule elsewhere."""
    in_mvn = {}
    for blk in graph.mvn_blocks():
        for k in blk:
            in_mvn[k] = blk
    structure = []
    done = set()
    for k in range(graph.m):
        if k in done:
            continue
        if graph.conjugacy[k] is not None:
            structure.append(("gibbs", (k,)))
        elif k in in_mvn:
            blk = in_mvn[k]
            structure.append(("block_arw", blk))
            done.update(blk)
        else:
            structure.append(
                ("arwls" if graph.positive_dim(k) else "arw", (k,)))
    return structure


# ------------------------------------------------------------- experiment

@dataclass
class ExperimentConfig:
    """One comparison: a model, a set of arms, replication counts, seeds."""
    model: str = "litters"
    size: int = None
    algorithms: tuple = ALGO_NAMES
    reps: int = 1
    n_final: int = 50000
    seed_base: int = 0
    max_outer: int = DESK_MAX_OUTER
    n_inner: int = None
    n_warm: int = None
    e_target: int = 10000
    time_source: str = "cost"
    adapt_interval: int = 200
    workers: int = None
    save_traces: bool = False

    def __post_init__(self):
        if self.model not in MODEL_NAMES:
            raise ValueError(f"unknown model {self.model!r}")
        if self.size is None:
            self.size = DESK_SIZE[self.model]
        if self.size < 2 or (self.model == "spatial" and self.size < 4):
            raise ValueError("size parameter too small")
        if self.n_inner is None:
            self.n_inner = DESK_N_INNER[self.model]
        if self.n_warm is None:
            self.n_warm = self.n_inner
        if self.n_warm < 0:
            raise ValueError("n_warm cannot be negative")
        self.algorithms = tuple(self.algorithms)
        for a in self.algorithms:
            if a not in ALGO_NAMES:
                raise ValueError(f"unknown algorithm {a!r}; know {ALGO_NAMES}")
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        if self.n_final < 1000:
            raise ValueError("n_final must be at least 1000")
        if self.time_source not in ("cost", "wall"):
            raise ValueError("time_source must be 'cost' or 'wall'")

    def engine_config(self):
        return EngineConfig(n_inner=self.n_inner, max_outer=self.max_outer,
                            time_source=self.time_source,
                            adapt_interval=self.adapt_interval)

    def to_dict(self):
        return {
            "model": self.model, "size": self.size,
            "algorithms": list(self.algorithms), "reps": self.reps,
            "n_final": self.n_final, "seed_base": self.seed_base,
            "max_outer": self.max_outer, "n_inner": self.n_inner,
            "n_warm": self.n_warm,
            "e_target": self.e_target, "time_source": self.time_source,
            "adapt_interval": self.adapt_interval,
            "save_traces": self.save_traces,
        }

    @classmethod
    def from_dict(cls, d):
        known = {f for f in cls.__dataclass_fields__}
        kw = {k: v for k, v in d.items() if k in known}
        if "algorithms" in kw:
            kw["algorithms"] = tuple(kw["algorithms"])
        return cls(**kw)


@dataclass
class ArmResult:
    """One algorithm x replication outcome."""
    algorithm: str
    rep: int
    seed: int
    adapt_time: float
    efficiency: float
    series: list
    kernel: str
    wall_seconds: float
    n_final: int

    def to_dict(self, include_wall=True):
        d = {
            "algorithm": self.algorithm, "rep": self.rep, "seed": self.seed,
            "adapt_time": self.adapt_time, "efficiency": self.efficiency,
            "series": list(self.series), "kernel": self.kernel,
            "n_final": self.n_final,
        }
        if include_wall:
            d["wall_seconds"] = self.wall_seconds
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(algorithm=d["algorithm"], rep=int(d["rep"]),
                   seed=int(d["seed"]), adapt_time=float(d["adapt_time"]),
                   efficiency=float(d["efficiency"]),
                   series=[float(v) for v in d["series"]],
                   kernel=d["kernel"],
                   wall_seconds=float(d.get("wall_seconds", 0.0)),
                   n_final=int(d["n_final"]))


def time_to_effective(e_target, efficiency, adapt_time=0.0):
    """Published-table arithmetic: E/efficiency plus adaptation time,
    rounded to the nearest whole time unit."""
    if not (efficiency > 0.0):
        raise ValueError("efficiency must be positive")
    return int(round(e_target / efficiency + adapt_time))


@dataclass
class ComparisonTable:
    """Per-algorithm aggregate rows mirroring the published summaries."""
    model: str
    e_target: int
    time_source: str
    rows: list  # dicts: algorithm, reps, adapt_time, efficiency, time_to

    COLUMNS = ("algorithm", "reps", "adapt_time", "efficiency", "time_to")

    def to_text(self):
        lines = [f"model: {self.model}   time units: {self.time_source}   "
                 f"E = {self.e_target}"]
        header = f"{'algorithm':22s} {'reps':>4s} {'adapt time':>14s} " \
                 f"{'efficiency':>12s} {'time to E':>12s}"
        lines.append(header)
        lines.append("-" * len(header))
        for r in self.rows:
            # %g keeps cost-unit efficiencies (often ~1e-3) readable
            lines.append(
                f"{r['algorithm']:22s} {r['reps']:>4d} "
                f"{r['adapt_time']:>14.2f} {r['efficiency']:>12.5g} "
                f"{r['time_to']:>12d}")
        return "\n".join(lines)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(self.COLUMNS)
        for r in self.rows:
            w.writerow([r["algorithm"], r["reps"], repr(r["adapt_time"]),
                        repr(r["efficiency"]), r["time_to"]])
        return buf.getvalue()

    @classmethod
    def rows_from_csv(cls, text):
        rows = []
        reader = csv.reader(io.StringIO(text))
        header = next(reader)
        if tuple(header) != cls.COLUMNS:
            raise ValueError(f"unexpected table header {header!r}")
        for rec in reader:
            rows.append({"algorithm": rec[0], "reps": int(rec[1]),
                         "adapt_time": float(rec[2]),
                         "efficiency": float(rec[3]),
                         "time_to": int(rec[4])})
        return rows

    def to_dict(self):
        return {"model": self.model, "e_target": self.e_target,
                "time_source": self.time_source, "rows": self.rows}

    @classmethod
    def from_dict(cls, d):
        return cls(model=d["model"], e_target=int(d["e_target"]),
                   time_source=d["time_source"], rows=list(d["rows"]))


def build_table(config, arms):
    rows = []
    for algo in config.algorithms:
        got = [a for a in arms if a.algorithm == algo]
        if not got:
            continue
        adapt = float(np.mean([a.adapt_time for a in got]))
        eff = float(np.mean([a.efficiency for a in got]))
        rows.append({
            "algorithm": algo, "reps": len(got), "adapt_time": adapt,
            "efficiency": eff,
            "time_to": time_to_effective(config.e_target, eff, adapt),
        })
    return ComparisonTable(model=config.model, e_target=config.e_target,
                           time_source=config.time_source, rows=rows)


def boxplot_csv(arms):
    """Long-format efficiency series: one row per (arm, stage). The last
    stage of each arm is the frozen-kernel final run."""
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(("algorithm", "rep", "stage", "efficiency"))
    for a in arms:
        for s, eff in enumerate(a.series):
            w.writerow((a.algorithm, a.rep, s, repr(eff)))
    return buf.getvalue()


def boxplot_rows_from_csv(text):
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if tuple(header) != ("algorithm", "rep", "stage", "efficiency"):
        raise ValueError(f"unexpected boxplot header {header!r}")
    return [(rec[0], int(rec[1]), int(rec[2]), float(rec[3]))
            for rec in reader]


@dataclass
class ComparisonResults:
    config: ExperimentConfig
    table: ComparisonTable
    arms: list

    def to_dict(self, include_wall=False):
        """Wall seconds stay out of serialized reports by default; they are
        the one field two identical runs cannot agree on."""
        return {"config": self.config.to_dict(),
                "table": self.table.to_dict(),
                "arms": [a.to_dict(include_wall) for a in self.arms]}

    def to_json(self, include_wall=False):
        return json.dumps(self.to_dict(include_wall), indent=1)

    @classmethod
    def from_dict(cls, d):
        return cls(config=ExperimentConfig.from_dict(d["config"]),
                   table=ComparisonTable.from_dict(d["table"]),
                   arms=[ArmResult.from_dict(a) for a in d["arms"]])

    @classmethod
    def from_json(cls, s):
        return cls.from_dict(json.loads(s))


# -------------------------------------------------------------- arm runs

def _measure(trace, config):
    return efficiency_report(trace.samples, trace.elapsed(config.time_source),
                             trace.dim_names, config.time_source)


def _run_static_arm(graph, algorithm, rng, config):
    kernel = build_baseline_kernel(algorithm, graph)
    model = graph.initial_state()
    econf = config.engine_config()
    # unmeasured burn-in; at desk scale the convergence transient would
    # otherwise dominate the autocorrelation estimates
    warm = run_segment(model, kernel, rng, config.n_warm, econf)
    trace = run_segment(model, kernel, rng, config.n_final, econf)
    rep = _measure(trace, config)
    return {"adapt_time": 0.0, "efficiency": rep.min_efficiency,
            "series": [rep.min_efficiency], "kernel": kernel.describe(),
            "wall_seconds": warm.seconds + trace.seconds, "trace": trace}


def _run_auto_adapt_arm(graph, rng, config):
    econf = config.engine_config()
    warm_model = graph.initial_state()
    warm_archive = SamplerArchive()
    warm_kernel = build_kernel(all_scalar_structure(graph), graph,
                               warm_archive)
    warm = run_segment(warm_model, warm_kernel, rng, config.n_warm, econf)
    res = run_auto_adapt(graph, econf, rng,
                         initial_values=warm_model.values)
    best = res.best_kernel()
    trace = run_segment(res.model, best, rng, config.n_final, econf)
    rep = _measure(trace, config)
    series = [float(r.eff) for r in res.history] + [rep.min_efficiency]
    adapt = res.total_cost if config.time_source == "cost" \
        else res.total_seconds
    return {"adapt_time": float(adapt), "efficiency": rep.min_efficiency,
            "series": series, "kernel": best.describe(),
            "wall_seconds": warm.seconds + res.total_seconds + trace.seconds,
            "trace": trace}


def _run_auto_block_arm(graph, rng, config):
    """Simplified global-cut baseline: an all-walk pilot estimates the
    correlations, each grid height's full-tree cut is measured once, and the
    best cut (plain walks + blocks) runs the final segment."""
    econf = config.engine_config()
    archive = SamplerArchive()
    model = graph.initial_state()
    pilot_structure = [("arw", (k,)) for k in range(graph.m)]
    kernel = build_kernel(pilot_structure, graph, archive)
    warm = run_segment(model, kernel, rng, config.n_warm, econf)
    pilot = run_segment(model, kernel, rng, config.n_inner, econf)
    pilot_rep = _measure(pilot, config)
    corr = correlation_matrix(pilot.samples)
    dend = hclust_complete(distance_matrix(corr))

    adapt = pilot.elapsed(config.time_source)
    wall = warm.seconds + pilot.seconds
    series = [pilot_rep.min_efficiency]
    best_eff = pilot_rep.min_efficiency
    best_structure = pilot_structure
    for h in econf.height_grid:
        structure = [("arw", blk) if len(blk) == 1 else ("block_arw", blk)
                     for blk in dend.cut(h)]
        kern = build_kernel(structure, graph, archive)
        seg = run_segment(model, kern, rng, config.n_inner, econf)
        rep = _measure(seg, config)
        adapt += seg.elapsed(config.time_source)
        wall += seg.seconds
        series.append(rep.min_efficiency)
        if rep.min_efficiency > best_eff:
            best_eff = rep.min_efficiency
            best_structure = structure

    kernel = build_kernel(best_structure, graph, archive)
    trace = run_segment(model, kernel, rng, config.n_final, econf)
    rep = _measure(trace, config)
    series.append(rep.min_efficiency)
    return {"adapt_time": float(adapt), "efficiency": rep.min_efficiency,
            "series": series, "kernel": kernel.describe(),
            "wall_seconds": wall + trace.seconds, "trace": trace}


def run_arm(graph, algorithm, arm_seed, config):
    rng = np.random.default_rng(arm_seed)
    if algorithm in ("all_scalar", "all_blocked", "default"):
        return _run_static_arm(graph, algorithm, rng, config)
    if algorithm == "auto_adapt":
        return _run_auto_adapt_arm(graph, rng, config)
    if algorithm == "auto_block_baseline":
        return _run_auto_block_arm(graph, rng, config)
    raise ValueError(f"unknown algorithm {algorithm!r}")


def _arm_worker(payload):
    """Runs in a worker process: rebuilds the model from config so nothing
    heavyweight crosses the process boundary."""
    config = ExperimentConfig.from_dict(payload["config"])
    graph, _ = build_model(config.model, config.size, config.seed_base)
    out = run_arm(graph, payload["algorithm"], payload["seed"], config)
    trace = out.pop("trace")
    result = ArmResult(algorithm=payload["algorithm"], rep=payload["rep"],
                       seed=payload["seed"], n_final=config.n_final,
                       **out).to_dict()
    if payload.get("trace_path"):
        from .diagnostics import trace_to_csv
        with open(payload["trace_path"], "w") as f:
            f.write(trace_to_csv(trace))
    return result


def resolve_workers(requested=None):
    env = os.environ.get(WORKERS_ENV)
    if requested is not None:
        return max(1, int(requested))
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def run_comparison(config, out_dir=None):
    """Run every (algorithm, replication) arm and aggregate the table.

    Arms are independent chains with seeds seed_base + arm index, so results
    do not depend on the worker count.
    """
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    payloads = []
    idx = 0
    for algo in config.algorithms:
        for r in range(config.reps):
            idx += 1
            p = {"config": config.to_dict(), "algorithm": algo, "rep": r,
                 "seed": config.seed_base + idx}
            if config.save_traces and out_dir:
                p["trace_path"] = os.path.join(
                    out_dir, f"trace_{algo}_{r}.csv")
            payloads.append(p)

    workers = resolve_workers(config.workers)
    if workers <= 1 or len(payloads) == 1:
        raw = [_arm_worker(p) for p in payloads]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            raw = list(ex.map(_arm_worker, payloads))
    arms = [ArmResult.from_dict(r) for r in raw]
    table = build_table(config, arms)
    results = ComparisonResults(config=config, table=table, arms=arms)
    if out_dir:
        with open(os.path.join(out_dir, "results.json"), "w") as f:
            f.write(results.to_json())
    return results
