"""Shared fixtures: tiny analytic models and chain drivers."""

import math

import numpy as np

from adaptmcmc.graph import ExpCov, build_graph, data, node
from adaptmcmc.samplers import (SamplerAssignment, default_state,
                                sampler_adapt, sampler_step)


def beta_graph(a=3.0, b=5.0):
    return build_graph([node("p", "beta", a, b)])


def normal_graph(mu=0.0, prec=1.0):
    return build_graph([node("x", "normal", mu, prec)])


def gamma_graph(shape=2.0, rate=3.0):
    return build_graph([node("s", "gamma", shape, rate)])


def binormal_graph(rho=0.8):
    # exp-decay covariance at distance -log(rho) gives unit variances and
    # correlation exactly rho
    d = -math.log(rho)
    dm = np.array([[0.0, d], [d, 0.0]])
    return build_graph(
        [node("u", "mvn_expcov", 0.0, ExpCov(1.0, 1.0, dm), shape=2)])


def beta_binomial_graph(a=3.0, b=5.0, n=10, y=4.0):
    return build_graph([node("p", "beta", a, b),
                        data("y", "binomial", n, "p", value=y)])


def drive_chain(graph, kind, block, n, seed, adapt=True, thin_from=0.5):
    """Run one sampler for n sweeps on a fresh state; return the post
    warm-up samples of the block dims as an (n_kept, d) array."""
    state = graph.initial_state()
    st = default_state(kind, block, graph)
    asg = SamplerAssignment(kind, block, st, graph)
    rng = np.random.default_rng(seed)
    blk = np.array(block)
    out = np.empty((n, len(block)))
    for i in range(n):
        sampler_step(asg, state, rng)
        if adapt and st.steps_since_adapt >= 200:
            sampler_adapt(asg, (1.0 + (st.clock + 1)) ** -0.7, state)
        out[i] = state.values[blk]
    return out[int(n * thin_from):]


def ar1(phi, n, seed, sigma=1.0):
    """Stationary AR(1) series with coefficient phi."""
    rng = np.random.default_rng(seed)
    e = rng.normal(0.0, sigma, n)
    x = np.empty(n)
    x[0] = e[0] / math.sqrt(1.0 - phi * phi)
    for i in range(1, n):
        x[i] = phi * x[i - 1] + e[i]
    return x


def brute_tau(x, max_lag):
    """Truncated autocorrelation-sum IACT oracle: 1 + 2 sum rho_k."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    xc = x - x.mean()
    c0 = float(xc @ xc) / n
    s = 1.0
    for k in range(1, max_lag + 1):
        s += 2.0 * (float(xc[:-k] @ xc[k:]) / n) / c0
    return s


def mc_se(samples):
    """Standard error of the mean accounting for autocorrelation."""
    from adaptmcmc.diagnostics import iact
    n = len(samples)
    return float(np.std(samples)) * math.sqrt(iact(samples) / n)
