"""Log-density evaluation for the distribution families used in model graphs.

Each family has a vectorized evaluator (over all or a subset of a node's
elements) and a single-element evaluator used by scalar samplers on the hot
path. Invalid parameter regions and support violations yield -inf rather than
raising, so Metropolis style proposals into bad regions are simply rejected.

Parameter sources are small tuples resolved at graph build time:

    ("c", float)              constant scalar
    ("cv", ndarray)           constant vector aligned with the node's elements
    ("s", flat_pos)           sampled scalar node, position in the state vector
    ("v", start, n, idx)      sampled vector node; idx is None for identity
                              alignment, else an element index array
    ("invsq", src)            1 / src**2 of a scalar source
    ("d", node_index)         deterministic scalar node, computed on demand
"""

import math

import numpy as np
from scipy.linalg.lapack import dtrtrs

NEG_INF = float("-inf")
LOG_2PI = math.log(2.0 * math.pi)


def fetch_scalar(src, state):
    """Value of a scalar source."""
    tag = src[0]
    if tag == "c":
        return src[1]
    if tag == "s":
        # builtin float: saturating arithmetic without numpy scalar warnings
        return float(state.values[src[1]])
    if tag == "invsq":
        v = fetch_scalar(src[1], state)
        if v == 0.0:
            return NEG_INF  # caller guards match prec<=0 handling
        return 1.0 / (v * v)
    if tag == "d":
        return state.det_value(src[1])
    raise ValueError(f"source {src!r} is not scalar")


def fetch(src, state, elems):
    """Value(s) of a source aligned with the requested node elements.

    elems is None for all elements. Scalar sources return a float which
    broadcasts in the callers.
    """
    tag = src[0]
    if tag == "cv":
        arr = src[1]
        return arr if elems is None else arr[elems]
    if tag == "v":
        _, start, n, idx = src
        vals = state.values
        if idx is None:
            seg = vals[start:start + n]
            return seg if elems is None else seg[elems]
        return vals[start + idx] if elems is None else vals[start + idx[elems]]
    return fetch_scalar(src, state)


def fetch_one(src, state, e):
    """Single-element value of a source."""
    tag = src[0]
    if tag == "cv":
        return src[1][e]
    if tag == "v":
        _, start, n, idx = src
        return float(state.values[start + (e if idx is None else idx[e])])
    return fetch_scalar(src, state)


def _n_elems(elems, size):
    if elems is None:
        return size
    if type(elems) is slice:
        return len(range(*elems.indices(size)))
    return len(elems)


def loglin_eta(entries, state, elems, size):
    """Linear predictor sum over (source, weight) entries, vectorized."""
    eta = np.zeros(_n_elems(elems, size))
    for src, w in entries:
        v = fetch(src, state, elems)
        if w is None:
            eta += v
        else:
            eta += (w if elems is None else w[elems]) * v
    return eta


def loglin_eta_one(entries, state, e):
    eta = 0.0
    for src, w in entries:
        if w is None:
            eta += fetch_one(src, state, e)
        else:
            we = w[e]
            if we != 0.0:
                eta += we * fetch_one(src, state, e)
    return eta


def _own(plan, state, elems):
    """Current values of the node itself."""
    if plan.x_const is not None:
        return plan.x_const if elems is None else plan.x_const[elems]
    vals = state.values
    if plan.shape == 1:
        return vals[plan.x_start]
    seg = vals[plan.x_start:plan.x_start + plan.shape]
    return seg if elems is None else seg[elems]


def _own_one(plan, state, e):
    if plan.x_const is not None:
        return plan.x_const[e]
    return float(state.values[plan.x_start + e])


# ---------------------------------------------------------------- beta

def beta_vec(plan, state, elems):
    a = fetch(plan.p0, state, elems)
    b = fetch(plan.p1, state, elems)
    x = _own(plan, state, elems)
    if type(x) is np.ndarray and np.ndim(a) == 0 and np.ndim(b) == 0:
        # scalar shape parameters over a vector of values; skip broadcasting
        if a > 0.0 and b > 0.0 and x.min() > 0.0 and x.max() < 1.0:
            lbeta = math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)
            return (a - 1.0) * np.log(x) + (b - 1.0) * np.log1p(-x) - lbeta
    x = np.atleast_1d(np.asarray(x, dtype=float))
    a_arr = np.broadcast_to(np.asarray(a, dtype=float), x.shape)
    b_arr = np.broadcast_to(np.asarray(b, dtype=float), x.shape)
    ok = (a_arr > 0.0) & (b_arr > 0.0) & (x > 0.0) & (x < 1.0)
    if not ok.all():
        out = np.full(x.shape, NEG_INF)
        if ok.any():
            av, bv, xv = a_arr[ok], b_arr[ok], x[ok]
            out[ok] = _beta_terms(av, bv, xv)
        return out
    return _beta_terms(a_arr, b_arr, x)


def _beta_terms(a, b, x):
    lbeta = _lgamma_arr(a) + _lgamma_arr(b) - _lgamma_arr(a + b)
    return (a - 1.0) * np.log(x) + (b - 1.0) * np.log1p(-x) - lbeta


_lgamma_u = np.frompyfunc(math.lgamma, 1, 1)


def _lgamma_arr(z):
    # scipy.special.gammaln pulls in overhead we do not need for tiny arrays
    if np.ndim(z) == 0:
        return math.lgamma(float(z))
    return _lgamma_u(z).astype(float)


def beta_one(plan, state, e):
    a = fetch_one(plan.p0, state, e)
    b = fetch_one(plan.p1, state, e)
    x = _own_one(plan, state, e)
    if not (a > 0.0 and b > 0.0 and 0.0 < x < 1.0):
        return NEG_INF
    lbeta = math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)
    return (a - 1.0) * math.log(x) + (b - 1.0) * math.log1p(-x) - lbeta


# ---------------------------------------------------------------- gamma

def gamma_vec(plan, state, elems):
    shape = fetch(plan.p0, state, elems)
    rate = fetch(plan.p1, state, elems)
    x = _own(plan, state, elems)
    if type(x) is np.ndarray and np.ndim(shape) == 0 and np.ndim(rate) == 0:
        if shape > 0.0 and rate > 0.0 and x.min() > 0.0:
            return (shape * math.log(rate) + (shape - 1.0) * np.log(x)
                    - rate * x - math.lgamma(shape))
    x = np.atleast_1d(np.asarray(x, dtype=float))
    sh = np.broadcast_to(np.asarray(shape, dtype=float), x.shape)
    ra = np.broadcast_to(np.asarray(rate, dtype=float), x.shape)
    ok = (sh > 0.0) & (ra > 0.0) & (x > 0.0)
    out = np.full(x.shape, NEG_INF)
    if ok.any():
        s, r, xv = sh[ok], ra[ok], x[ok]
        out[ok] = s * np.log(r) + (s - 1.0) * np.log(xv) - r * xv - _lgamma_arr(s)
    return out


def gamma_one(plan, state, e):
    a = fetch_one(plan.p0, state, e)
    r = fetch_one(plan.p1, state, e)
    x = _own_one(plan, state, e)
    if not (a > 0.0 and r > 0.0 and x > 0.0):
        return NEG_INF
    return a * math.log(r) + (a - 1.0) * math.log(x) - r * x - math.lgamma(a)


# ---------------------------------------------------------------- uniform

def uniform_vec(plan, state, elems):
    lo, hi = plan.p0[1], plan.p1[1]  # constants by construction
    x = np.atleast_1d(np.asarray(_own(plan, state, elems), dtype=float))
    out = np.full(x.shape, NEG_INF)
    inside = (x > lo) & (x < hi)
    out[inside] = -math.log(hi - lo)
    return out


def uniform_one(plan, state, e):
    lo, hi = plan.p0[1], plan.p1[1]
    x = _own_one(plan, state, e)
    if lo < x < hi:
        return -math.log(hi - lo)
    return NEG_INF


# ---------------------------------------------------------------- normal

def normal_vec(plan, state, elems):
    mu = fetch(plan.p0, state, elems)
    prec = fetch(plan.p1, state, elems)
    x = _own(plan, state, elems)
    if type(x) is np.ndarray and np.ndim(mu) == 0 and np.ndim(prec) == 0:
        if 0.0 < prec < math.inf and (not plan.positive or x.min() > 0.0):
            d = x - mu
            return 0.5 * (math.log(prec) - LOG_2PI) - (0.5 * prec) * (d * d)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    mu_a = np.broadcast_to(np.asarray(mu, dtype=float), x.shape)
    pr = np.broadcast_to(np.asarray(prec, dtype=float), x.shape)
    ok = (pr > 0.0) & np.isfinite(pr)
    if plan.positive:
        ok = ok & (x > 0.0)
    out = np.full(x.shape, NEG_INF)
    if ok.any():
        d = x[ok] - mu_a[ok]
        out[ok] = 0.5 * (np.log(pr[ok]) - LOG_2PI) - 0.5 * pr[ok] * d * d
    return out


def normal_one(plan, state, e):
    mu = fetch_one(plan.p0, state, e)
    prec = fetch_one(plan.p1, state, e)
    x = _own_one(plan, state, e)
    if not (0.0 < prec < math.inf) or (plan.positive and x <= 0.0):
        return NEG_INF
    d = x - mu
    return 0.5 * (math.log(prec) - LOG_2PI) - 0.5 * prec * d * d


# ---------------------------------------------------------------- binomial

def binomial_vec(plan, state, elems):
    # y and n are fixed at build time; only p can vary
    y = plan.c_y if elems is None else plan.c_y[elems]
    n = plan.c_n if elems is None else plan.c_n[elems]
    lc = plan.c_logc if elems is None else plan.c_logc[elems]
    p = np.broadcast_to(np.asarray(fetch(plan.p1, state, elems), dtype=float), y.shape)
    out = np.full(y.shape, NEG_INF)
    ok = (p > 0.0) & (p < 1.0)
    if ok.any():
        pv = p[ok]
        out[ok] = lc[ok] + y[ok] * np.log(pv) + (n[ok] - y[ok]) * np.log1p(-pv)
    # p at the boundary still has positive mass when y is extreme
    edge0 = (p <= 0.0) & (y == 0)
    edge1 = (p >= 1.0) & (y == n)
    out[edge0 & (p == 0.0)] = lc[edge0 & (p == 0.0)]
    out[edge1 & (p == 1.0)] = lc[edge1 & (p == 1.0)]
    return out


def binomial_one(plan, state, e):
    y = plan.c_y[e]
    n = plan.c_n[e]
    p = fetch_one(plan.p1, state, e)
    if 0.0 < p < 1.0:
        return plan.c_logc[e] + y * math.log(p) + (n - y) * math.log1p(-p)
    if p == 0.0 and y == 0:
        return plan.c_logc[e]
    if p == 1.0 and y == n:
        return plan.c_logc[e]
    return NEG_INF


# ---------------------------------------------------------------- poisson

def poisson_vec(plan, state, elems):
    y = plan.c_y if elems is None else plan.c_y[elems]
    lgy = plan.c_lgamma_y1 if elems is None else plan.c_lgamma_y1[elems]
    if plan.loglin is not None:
        eta = loglin_eta(plan.loglin, state, elems, plan.shape)
        # cap keeps exp finite; a predictor this large is rejected anyway
        return y * eta - np.exp(np.minimum(eta, 709.0)) - lgy
    mu = np.broadcast_to(np.asarray(fetch(plan.p0, state, elems), dtype=float), y.shape)
    out = np.full(y.shape, NEG_INF)
    ok = mu > 0.0
    if ok.any():
        out[ok] = y[ok] * np.log(mu[ok]) - mu[ok] - lgy[ok]
    return out


def poisson_one(plan, state, e):
    y = plan.c_y[e]
    if plan.loglin is not None:
        eta = loglin_eta_one(plan.loglin, state, e)
        return y * eta - math.exp(min(eta, 709.0)) - plan.c_lgamma_y1[e]
    mu = fetch_one(plan.p0, state, e)
    if mu <= 0.0:
        return NEG_INF
    return y * math.log(mu) - mu - plan.c_lgamma_y1[e]


# The state layer keeps the linear predictor of purely linear log-link
# nodes cached per element; these variants evaluate from that cache.

def poisson_eta_vec(plan, eta, elems):
    if elems is None:
        y, lgy, ev = plan.c_y, plan.c_lgamma_y1, eta
    else:
        y, lgy, ev = plan.c_y[elems], plan.c_lgamma_y1[elems], eta[elems]
    return y * ev - np.exp(np.minimum(ev, 709.0)) - lgy


def poisson_eta_one(plan, eta_e, e):
    return (plan.c_y[e] * eta_e
            - math.exp(eta_e if eta_e < 709.0 else 709.0)
            - plan.c_lgamma_y1[e])


# ------------------------------------------------- multivariate normal
# Covariance is sigma^2 * exp(-d_ij / rho) over a fixed distance matrix.

def expcov_matrix(sigma, rho, dists):
    """Dense covariance matrix for given scale and range parameters."""
    return (sigma * sigma) * np.exp(-dists / rho)


def mvn_expcov_term(plan, state):
    """Scalar log-density term for the whole node. Returns (term, chol_cost).

    chol_cost is the number of extra cost units charged when the Cholesky
    factor had to be recomputed (n*n), else 0.
    """
    sigma = fetch_scalar(plan.p_sigma, state)
    rho = fetch_scalar(plan.p_rho, state)
    if not (sigma > 0.0 and rho > 0.0):
        return NEG_INF, 0
    n = plan.shape
    key = (sigma, rho)
    cached = state.mvn_cache.get(plan.node_i)
    chol_cost = 0
    if cached is not None and cached[0] == key:
        lo, logdet = cached[1], cached[2]
    else:
        cov = expcov_matrix(sigma, rho, plan.dists)
        try:
            lo = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            cov = cov + (1e-10 * sigma * sigma) * np.eye(n)
            try:
                lo = np.linalg.cholesky(cov)
            except np.linalg.LinAlgError:
                return NEG_INF, n * n
        logdet = float(np.sum(np.log(np.diagonal(lo))))
        state.mvn_cache[plan.node_i] = (key, lo, logdet)
        chol_cost = n * n
    mu = fetch(plan.p0, state, None)
    g = state.values[plan.x_start:plan.x_start + n]
    r = g - mu
    w, info = dtrtrs(lo, r, lower=1)
    if info != 0:
        return NEG_INF, chol_cost
    quad = float(w @ w)
    return -0.5 * quad - logdet - 0.5 * n * LOG_2PI, chol_cost


EVAL_VEC = {
    "beta": beta_vec,
    "gamma": gamma_vec,
    "uniform": uniform_vec,
    "normal": normal_vec,
    "binomial": binomial_vec,
    "poisson": poisson_vec,
}

EVAL_ONE = {
    "beta": beta_one,
    "gamma": gamma_one,
    "uniform": uniform_one,
    "normal": normal_one,
    "binomial": binomial_one,
    "poisson": poisson_one,
}
