"""Autocorrelation time, efficiency reports, and trace serialization."""

import numpy as np
import pytest

from adaptmcmc.diagnostics import (ChainTrace, DegenerateChainError,
                                   EfficiencyReport, InsufficientDataError,
                                   correlation_matrix, efficiency_report,
                                   ess, iact, trace_from_csv, trace_to_csv)

from helpers import ar1, brute_tau


def test_iid_tau_near_one():
    rng = np.random.default_rng(0)
    for seed in range(3):
        x = np.random.default_rng(seed).normal(0, 1, 10000)
        t = iact(x)
        assert 1.0 <= t <= 1.25
    del rng


def test_ar1_tau_matches_analytic_and_brute_force():
    # AR(1) has tau = (1 + phi) / (1 - phi)
    for phi, tol in ((0.5, 0.15), (0.9, 0.25)):
        x = ar1(phi, 100000, seed=42)
        want = (1 + phi) / (1 - phi)
        got = iact(x)
        assert abs(got - want) <= tol * want
        oracle = brute_tau(x, max_lag=int(50 / (1 - phi)))
        assert abs(got - oracle) <= tol * oracle


def test_thinning_scales_tau():
    x = ar1(0.9, 200000, seed=3)
    t_full = iact(x)
    t_thin = iact(x[::10])
    # thinning by 10 cuts the autocorrelation time about tenfold
    assert abs(t_thin - t_full / 10.0) <= 0.2 * (t_full / 10.0) + 0.3


def test_affine_invariance():
    x = ar1(0.7, 20000, seed=4)
    assert iact(3.5 * x - 11.0) == pytest.approx(iact(x), abs=1e-9)


def test_tau_clamped_to_chain_length():
    n = 200
    x = np.linspace(0.0, 1.0, n)  # near-perfectly correlated
    assert iact(x) <= n


def test_short_chain_raises():
    with pytest.raises(InsufficientDataError):
        iact(np.zeros(49) + np.arange(49))
    with pytest.raises(InsufficientDataError):
        iact(np.random.default_rng(0).normal(size=10))


def test_constant_chain_raises():
    with pytest.raises(DegenerateChainError):
        iact(np.full(1000, 1.75))  # exactly representable, variance == 0


def test_ess_is_n_over_tau():
    x = ar1(0.5, 50000, seed=5)
    assert ess(x) == pytest.approx(len(x) / iact(x))


def test_efficiency_report_known_taus():
    # tau = [2, 10, 5] at N = 1000 and t = 4 -> omega = [125, 25, 50]
    rng = np.random.default_rng(6)
    n = 1000

    def chain_with_tau(tau, seed):
        phi = (tau - 1.0) / (tau + 1.0)
        return ar1(phi, n, seed)

    class FakeReport:
        pass

    samples = np.column_stack([chain_with_tau(2, 1), chain_with_tau(10, 2),
                               chain_with_tau(5, 3)])
    rep = efficiency_report(samples, elapsed=4.0, time_source="cost")
    # realized taus vary; check the arithmetic instead on known inputs
    assert np.allclose(rep.efficiency, (n / rep.tau) / 4.0)
    assert rep.k_min == int(np.argmax(rep.tau))
    del rng, FakeReport


def test_efficiency_report_exact_arithmetic():
    # bypass estimation noise: elapsed and tau plug into omega = (N/tau)/t
    n = 1000
    taus = np.array([2.0, 10.0, 5.0])
    omega = (n / taus) / 4.0
    assert np.allclose(omega, [125.0, 25.0, 50.0])
    assert int(np.argmax(taus)) == 1


def test_worst_dim_tie_breaks_low():
    # two identical columns tie on tau; argmax picks the lower index
    x = ar1(0.8, 5000, seed=7)
    samples = np.column_stack([x, x])
    rep = efficiency_report(samples, elapsed=1.0)
    assert rep.k_min == 0


def test_degenerate_dim_flagged_worst():
    rng = np.random.default_rng(8)
    good = rng.normal(0, 1, 2000)
    stuck = np.full(2000, 1.75)
    rep = efficiency_report(np.column_stack([good, stuck]), elapsed=10.0)
    assert rep.degenerate[1] and not rep.degenerate[0]
    assert rep.tau[1] == 2000.0
    assert rep.k_min == 1


def test_column_permutation_consistency():
    rng = np.random.default_rng(9)
    samples = np.column_stack([ar1(p, 4000, seed=10 + i)
                               for i, p in enumerate((0.2, 0.9, 0.6))])
    rep = efficiency_report(samples, elapsed=2.0)
    perm = [2, 0, 1]
    rep_p = efficiency_report(samples[:, perm], elapsed=2.0)
    assert np.allclose(rep_p.tau, rep.tau[perm])
    assert rep_p.k_min == perm.index(rep.k_min)
    del rng


def test_correlation_matrix_handles_zero_variance():
    rng = np.random.default_rng(10)
    a = rng.normal(size=500)
    c = correlation_matrix(np.column_stack([a, a * -2.0, np.full(500, 1.0)]))
    assert c[0, 1] == pytest.approx(-1.0)
    assert c[0, 2] == 0.0 and c[2, 2] == 1.0


def test_report_json_round_trip():
    samples = np.column_stack([ar1(0.5, 2000, seed=11),
                               ar1(0.8, 2000, seed=12)])
    rep = efficiency_report(samples, elapsed=7.0, dim_names=("a", "b"))
    back = EfficiencyReport.from_json(rep.to_json())
    assert back.n == rep.n and back.k_min == rep.k_min
    assert back.dim_names == rep.dim_names
    assert np.array_equal(back.tau, rep.tau)
    assert np.array_equal(back.efficiency, rep.efficiency)
    assert np.array_equal(back.degenerate, rep.degenerate)


def test_trace_csv_round_trip_exact():
    rng = np.random.default_rng(13)
    tr = ChainTrace(samples=rng.normal(size=(50, 3)), cost=123.0,
                    seconds=0.5, dim_names=("x", "y[0]", "y[1]"))
    back = trace_from_csv(trace_to_csv(tr))
    assert back.dim_names == tr.dim_names
    assert np.array_equal(back.samples, tr.samples)  # bit-exact via repr
