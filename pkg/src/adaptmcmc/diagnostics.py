"""Mixing diagnostics: integrated autocorrelation time, effective sample
size, and per-dimension efficiency reports.

The autocorrelation time estimator fits autoregressive models of increasing
order to the chain by solving the Yule-Walker equations, picks the order by
AIC, and reads tau off the fitted spectral density at frequency zero:

    tau = (sigma2 / (1 - sum(phi))**2) / c0

where sigma2 is the innovation variance of the chosen AR fit and c0 the
(biased) sample variance. The estimate is clamped to [1, N].

Efficiency for a dimension is effective samples per unit time,
omega_k = (N / tau_k) / t. A report's minimum over dimensions is the figure
an adaptation run tries to push up, and the argmax-tau dimension is where a
structural change should aim.
"""

import csv
import io
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_toeplitz

MIN_CHAIN_LEN = 50


class DiagnosticsError(ValueError):
    pass


class InsufficientDataError(DiagnosticsError):
    """Chain too short for a defensible autocorrelation estimate."""


class DegenerateChainError(DiagnosticsError):
    """Chain has zero variance; tau is undefined."""


def _autocovariances(x, max_lag):
    n = len(x)
    xc = x - x.mean()
    return np.array([xc[: n - j] @ xc[j:] for j in range(max_lag + 1)]) / n


def iact(x):
    """Integrated autocorrelation time of a 1-d chain.

    Fits AR(p) for p = 0..floor(10*log10(N)) by Yule-Walker, picks p by AIC
    (lowest order wins ties), returns tau clamped to [1, N].
    """
    x = np.asarray(x, dtype=float).ravel()
    n = len(x)
    if n < MIN_CHAIN_LEN:
        raise InsufficientDataError(
            f"need at least {MIN_CHAIN_LEN} samples, got {n}")
    c0 = float(x.var())
    if not (c0 > 0.0) or not math.isfinite(c0):
        raise DegenerateChainError("zero-variance chain")
    max_order = int(10.0 * math.log10(n))
    gam = _autocovariances(x, max_order)
    best_aic = None
    best = (0.0, gam[0])  # (sum of AR coefficients, innovation variance)
    for p in range(max_order + 1):
        if p == 0:
            sigma2, phi_sum = gam[0], 0.0
        else:
            try:
                phi = solve_toeplitz(gam[:p], gam[1 : p + 1])
            except (np.linalg.LinAlgError, ValueError):
                continue
            sigma2 = float(gam[0] - phi @ gam[1 : p + 1])
            phi_sum = float(phi.sum())
        if not (sigma2 > 0.0) or not math.isfinite(sigma2):
            continue
        aic = n * math.log(sigma2) + 2.0 * (p + 1)
        if best_aic is None or aic < best_aic:
            best_aic = aic
            best = (phi_sum, sigma2)
    phi_sum, sigma2 = best
    denom = (1.0 - phi_sum) ** 2
    tau = sigma2 / (denom * c0) if denom > 0.0 else float(n)
    if not math.isfinite(tau):
        tau = float(n)
    return float(min(max(tau, 1.0), float(n)))


def ess(x):
    """Effective sample size, N / iact."""
    x = np.asarray(x, dtype=float).ravel()
    return len(x) / iact(x)


def correlation_matrix(samples):
    """Sample correlation over columns; zero-variance columns get zero
    off-diagonal entries and a unit diagonal."""
    samples = np.asarray(samples, dtype=float)
    m = samples.shape[1]
    sd = samples.std(axis=0)
    ok = sd > 0.0
    corr = np.eye(m)
    if ok.sum() >= 2:
        sub = np.corrcoef(samples[:, ok], rowvar=False)
        idx = np.flatnonzero(ok)
        corr[np.ix_(idx, idx)] = sub
        np.fill_diagonal(corr, 1.0)
    return corr


@dataclass
class ChainTrace:
    """Samples from one run segment plus its resource accounting."""
    samples: np.ndarray  # (N, m)
    cost: float          # deterministic cost units
    seconds: float       # wall time
    dim_names: tuple = None
    kernel: str = ""

    @property
    def n(self):
        return self.samples.shape[0]

    def elapsed(self, time_source):
        if time_source == "cost":
            return self.cost
        if time_source == "wall":
            return self.seconds
        raise ValueError(f"unknown time source {time_source!r}")


@dataclass
class EfficiencyReport:
    """Per-dimension mixing summary for one segment."""
    n: int
    elapsed: float
    time_source: str
    dim_names: tuple
    tau: np.ndarray
    ess: np.ndarray
    efficiency: np.ndarray
    degenerate: np.ndarray
    k_min: int

    @property
    def min_efficiency(self):
        return float(self.efficiency[self.k_min])

    @property
    def worst_dim_name(self):
        return self.dim_names[self.k_min]

    def to_dict(self):
        return {
            "n": self.n,
            "elapsed": self.elapsed,
            "time_source": self.time_source,
            "dim_names": list(self.dim_names),
            "tau": [repr(float(v)) for v in self.tau],
            "ess": [repr(float(v)) for v in self.ess],
            "efficiency": [repr(float(v)) for v in self.efficiency],
            "degenerate": [bool(v) for v in self.degenerate],
            "k_min": self.k_min,
            "min_efficiency": repr(self.min_efficiency),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            n=int(d["n"]),
            elapsed=float(d["elapsed"]),
            time_source=d["time_source"],
            dim_names=tuple(d["dim_names"]),
            tau=np.array([float(v) for v in d["tau"]]),
            ess=np.array([float(v) for v in d["ess"]]),
            efficiency=np.array([float(v) for v in d["efficiency"]]),
            degenerate=np.array(d["degenerate"], dtype=bool),
            k_min=int(d["k_min"]),
        )

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_json(cls, s):
        return cls.from_dict(json.loads(s))

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["dim", "name", "tau", "ess", "efficiency", "degenerate"])
        for k in range(len(self.tau)):
            w.writerow([k, self.dim_names[k], repr(float(self.tau[k])),
                        repr(float(self.ess[k])),
                        repr(float(self.efficiency[k])),
                        int(self.degenerate[k])])
        return buf.getvalue()


def trace_to_csv(trace):
    """One column per dimension, one row per iteration, exact float text."""
    buf = io.StringIO()
    w = csv.writer(buf)
    names = trace.dim_names or tuple(
        f"x{k}" for k in range(trace.samples.shape[1]))
    w.writerow(names)
    for row in trace.samples:
        w.writerow([repr(float(v)) for v in row])
    return buf.getvalue()


def trace_from_csv(text):
    """Inverse of trace_to_csv; resource fields are not in the CSV."""
    reader = csv.reader(io.StringIO(text))
    names = tuple(next(reader))
    rows = [[float(v) for v in rec] for rec in reader]
    return ChainTrace(samples=np.array(rows, dtype=float), cost=0.0,
                      seconds=0.0, dim_names=names)


def efficiency_report(samples, elapsed, dim_names=None, time_source="cost"):
    """Build an EfficiencyReport from a sample matrix and elapsed time.

    Zero-variance dimensions are not an error here: they are flagged and
    reported at tau = N (the worst possible mixing), which makes a stuck
    dimension the one the next structural change targets.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 1:
        samples = samples[:, None]
    n, m = samples.shape
    if n < MIN_CHAIN_LEN:
        raise InsufficientDataError(
            f"need at least {MIN_CHAIN_LEN} samples, got {n}")
    if not (elapsed > 0.0):
        raise ValueError("elapsed time must be positive")
    if dim_names is None:
        dim_names = tuple(f"x{k}" for k in range(m))
    tau = np.empty(m)
    degenerate = np.zeros(m, dtype=bool)
    for k in range(m):
        try:
            tau[k] = iact(samples[:, k])
        except DegenerateChainError:
            tau[k] = float(n)
            degenerate[k] = True
    ess_arr = n / tau
    eff = ess_arr / elapsed
    k_min = int(np.argmax(tau))  # ties resolve to the lowest dimension id
    return EfficiencyReport(
        n=n, elapsed=float(elapsed), time_source=time_source,
        dim_names=tuple(dim_names), tau=tau, ess=ess_arr, efficiency=eff,
        degenerate=degenerate, k_min=k_min)
