"""Adaptation engine: schedules, kernel algebra, outer loop bookkeeping."""

import json
import math

import numpy as np
import pytest

from adaptmcmc.engine import (AdaptSchedule, ClockState, EngineConfig,
                              KernelComposition, KernelError, SamplerArchive,
                              all_scalar_structure, build_kernel,
                              initial_scalar_kernel, propose_kernel,
                              run_auto_adapt, run_segment, validate_kernel)
from adaptmcmc.graph import build_graph, data, node
from adaptmcmc.samplers import SamplerAssignment, default_state, states_equal

from helpers import normal_graph


def eng_graph():
    return build_graph([
        node("a", "gamma", 2.0, 1.0),
        node("b", "gamma", 2.0, 1.0),
        node("p", "beta", "a", "b", shape=3),
        data("y", "binomial", 12, "p", value=[3.0, 7.0, 11.0]),
    ])


def quick_config(**kw):
    kw.setdefault("n_inner", 200)
    kw.setdefault("max_outer", 4)
    return EngineConfig(**kw)


def test_schedules():
    assert AdaptSchedule.outer_p(1) == 1.0
    assert AdaptSchedule.outer_p(4) == pytest.approx(0.5)
    assert AdaptSchedule.outer_p(25) == pytest.approx(0.2)
    assert AdaptSchedule.inner_gamma(1) == pytest.approx(2.0 ** -0.7)
    assert AdaptSchedule.inner_gamma(0) == 1.0


def test_clock_state_transitions():
    c = ClockState()
    assert (c.externals, c.since, c.count) == (0, 0, 0)
    c.tick_internal()
    c.tick_internal()
    assert (c.externals, c.since, c.count) == (0, 2, 2)
    c.tick_external()
    assert (c.externals, c.since, c.count) == (1, 0, 1)
    c.tick_internal()
    assert c.count == 2


def test_engine_config_validation():
    with pytest.raises(ValueError):
        EngineConfig(n_inner=10)
    with pytest.raises(ValueError):
        EngineConfig(max_outer=-1)
    with pytest.raises(ValueError):
        EngineConfig(time_source="sundial")
    with pytest.raises(ValueError):
        EngineConfig(height_grid=(0.0, 0.5))
    with pytest.raises(ValueError):
        EngineConfig(scalar_kinds=("arw", "warp"))


def test_validate_kernel_rules():
    g = eng_graph()
    arch = SamplerArchive()
    kern = initial_scalar_kernel(g, arch)
    validate_kernel(g, kern.assignments)  # passes
    with pytest.raises(KernelError):
        validate_kernel(g, [])
    with pytest.raises(KernelError):
        validate_kernel(g, kern.assignments[:-1])  # one dim uncovered
    dup = kern.assignments + [kern.assignments[0]]
    with pytest.raises(KernelError):
        validate_kernel(g, dup)


def test_all_scalar_structure_uses_support():
    g = eng_graph()
    st = all_scalar_structure(g)
    # every dim here is strictly positive (gamma and unit-interval supports)
    assert all(kind == "arwls" for kind, _ in st)
    assert [blk for _, blk in st] == [(k,) for k in range(g.m)]
    gn = normal_graph()
    assert all_scalar_structure(gn) == [("arw", (0,))]


def test_archive_hands_out_shared_states():
    g = eng_graph()
    arch = SamplerArchive()
    s1 = arch.get("arw", (0,), g)
    s2 = arch.get("arw", (0,), g)
    assert s1 is s2
    assert arch.get("arw", (1,), g) is not s1
    assert len(arch) == 2
    assert ("arw", (0,)) in arch


def test_archive_state_untouched_while_inactive():
    # a sampler dropped from the kernel must come back bit-exact
    g = eng_graph()
    arch = SamplerArchive()
    rng = np.random.default_rng(0)
    config = quick_config()
    model = g.initial_state()
    kern = initial_scalar_kernel(g, arch)
    run_segment(model, kern, rng, 300, config)
    snap = arch.get("arwls", (0,), g).snapshot()

    # replacement kernel without the dim-0 arwls sampler
    structure = [("arw", (0,))] + kern.structure()[1:]
    kern2 = build_kernel(structure, g, arch)
    for _ in range(3):
        run_segment(model, kern2, rng, 300, config)
    assert states_equal(arch.get("arwls", (0,), g), snap)

    kern3 = build_kernel(kern.structure(), g, arch)
    back = [a for a in kern3.assignments if a.key() == ("arwls", (0,))][0]
    assert states_equal(back.state, snap)


def test_run_segment_shapes_and_cost():
    g = eng_graph()
    arch = SamplerArchive()
    model = g.initial_state()
    kern = initial_scalar_kernel(g, arch)
    rng = np.random.default_rng(1)
    config = quick_config()
    tr = run_segment(model, kern, rng, 120, config)
    assert tr.samples.shape == (120, g.m)
    assert tr.cost > 0 and tr.n == 120
    assert tr.dim_names == g.dim_names
    empty = run_segment(model, kern, rng, 0, config)
    assert empty.samples.shape == (0, g.m) and empty.cost == 0.0


def test_run_segment_reproducible():
    g = eng_graph()
    config = quick_config()
    outs = []
    for _ in range(2):
        arch = SamplerArchive()
        model = g.initial_state()
        kern = initial_scalar_kernel(g, arch)
        rng = np.random.default_rng(7)
        outs.append(run_segment(model, kern, rng, 400, config).samples)
    assert np.array_equal(outs[0], outs[1])


def test_acceptance_rate_settles_into_window():
    g = normal_graph()
    arch = SamplerArchive()
    model = g.initial_state()
    kern = initial_scalar_kernel(g, arch)
    rng = np.random.default_rng(2)
    config = quick_config()
    run_segment(model, kern, rng, 4000, config)
    asg = kern.assignments[0]
    st = asg.state
    # realized window rate after adaptation has had time to settle
    n0 = (st.accept_count[0], st.try_count[0])
    run_segment(model, kern, rng, 190, config)  # stay inside one window
    rate = (st.accept_count[0] - n0[0]) / (st.try_count[0] - n0[1])
    assert 0.2 <= rate <= 0.7


def test_propose_no_candidates_leaves_kernel():
    g = normal_graph()  # m == 1, no blocks possible
    arch = SamplerArchive()
    config = quick_config(scalar_kinds=("arw",), block_kinds=())
    kern = initial_scalar_kernel(g, arch)
    rng = np.random.default_rng(3)
    k2, note = propose_kernel(kern, 0, np.eye(1), arch, rng, config)
    assert k2 is kern
    assert note["applied"] is False and note["reason"] == "no candidates"


def test_propose_forced_scalar_switch():
    g = eng_graph()
    arch = SamplerArchive()
    config = quick_config(scalar_kinds=("arw", "slice"), block_kinds=())
    kern = initial_scalar_kernel(g, arch)  # dim 2 starts as arw
    rng = np.random.default_rng(4)
    k2, note = propose_kernel(kern, 2, np.eye(g.m), arch, rng, config)
    assert note["applied"] and note["kind"] == "slice"
    assert ("slice", (2,)) in [a.key() for a in k2.assignments]
    validate_kernel(g, k2.assignments)


def test_propose_duplicate_is_flagged():
    g = eng_graph()
    arch = SamplerArchive()
    config = quick_config(scalar_kinds=(), block_kinds=("block_arw",))
    corr = np.eye(g.m)
    corr[0, 1] = corr[1, 0] = 0.99
    structure = [("block_arw", (0, 1))] + \
        [("arw", (k,)) for k in range(2, g.m)]
    kern = build_kernel(structure, g, arch)
    rng = np.random.default_rng(5)
    k2, note = propose_kernel(kern, 0, corr, arch, rng, config)
    assert k2 is kern
    assert note["applied"] is False and note["reason"] == "duplicate"


def test_propose_coverage_repair():
    g = eng_graph()
    arch = SamplerArchive()
    config = quick_config(scalar_kinds=("slice",), block_kinds=())
    structure = [("block_arw", (0, 1, 2)), ("arw", (3,)), ("arw", (4,))]
    kern = build_kernel(structure, g, arch)
    rng = np.random.default_rng(6)
    k2, note = propose_kernel(kern, 0, np.eye(g.m), arch, rng, config)
    assert note["applied"] and note["kind"] == "slice"
    keys = [a.key() for a in k2.assignments]
    # the block had to come back: dims 1 and 2 would have been orphaned
    assert ("slice", (0,)) in keys and ("block_arw", (0, 1, 2)) in keys
    validate_kernel(g, k2.assignments)
    assert note["dropped"] == []


def test_propose_block_can_consume_scalars():
    g = eng_graph()
    arch = SamplerArchive()
    config = quick_config(scalar_kinds=(), block_kinds=("block_arw",))
    corr = np.eye(g.m)
    corr[2, 3] = corr[3, 2] = 0.95
    kern = initial_scalar_kernel(g, arch)
    hit = None
    for seed in range(40):
        rng = np.random.default_rng(seed)
        k2, note = propose_kernel(kern, 2, corr, arch, rng, config)
        if note.get("applied") and note.get("kept_others") is False:
            hit = (k2, note)
            break
    assert hit is not None, "no seed produced a consuming block"
    k2, note = hit
    keys = [a.key() for a in k2.assignments]
    assert ("block_arw", (2, 3)) in keys
    assert ("arwls", (3,)) not in keys  # consumed, not kept
    assert any("[3]" in d for d in note["dropped"])
    validate_kernel(g, k2.assignments)


def test_outer_loop_monotone_best_and_clock_equations():
    g = eng_graph()
    config = quick_config(n_inner=300, max_outer=8)
    res = run_auto_adapt(g, config, seed=11)
    assert len(res.history) == 8
    prev_best = 0.0
    prev = (0, 0)
    prev_clocks = {}
    for rec in res.history:
        assert rec.eff_best >= prev_best - 1e-15
        prev_best = rec.eff_best
        # externals/since follow the two transition rules exactly
        if rec.proposed:
            assert rec.externals == prev[0] + 1 and rec.since == 0
        else:
            assert rec.externals == prev[0] and rec.since == prev[1] + 1
        prev = (rec.externals, rec.since)
        for key, c in rec.clocks.items():
            assert c >= prev_clocks.get(key, 0)
        prev_clocks.update(rec.clocks)
    assert res.history[0].p_used == 1.0  # first iteration always proposes
    assert res.history[0].proposed


def test_outer_p_override_pins_transitions():
    g = eng_graph()
    for p, want in ((0.0, (0, 6)), (1.0, (6, 0))):
        config = quick_config(n_inner=200, max_outer=6, outer_p_override=p)
        res = run_auto_adapt(g, config, seed=12)
        last = res.history[-1]
        assert (last.externals, last.since) == want


def test_run_auto_adapt_zero_outer():
    g = eng_graph()
    config = quick_config(max_outer=0)
    res = run_auto_adapt(g, config, seed=13)
    assert res.history == []
    assert res.best_structure == all_scalar_structure(g)


def test_run_auto_adapt_deterministic():
    g = eng_graph()
    config = quick_config(n_inner=250, max_outer=5)
    a = run_auto_adapt(g, config, seed=21).history_json(include_wall=False)
    b = run_auto_adapt(g, config, seed=21).history_json(include_wall=False)
    assert a == b
    c = run_auto_adapt(g, config, seed=22).history_json(include_wall=False)
    assert a != c
    json.loads(a)  # valid JSON


def test_kernel_describe_and_id_stable():
    g = eng_graph()
    arch = SamplerArchive()
    kern = initial_scalar_kernel(g, arch)
    assert kern.describe() == "arwls[0]+arwls[1]+arwls[2]+arwls[3]+arwls[4]"
    assert kern.kernel_id() == build_kernel(kern.structure(), g,
                                            SamplerArchive()).kernel_id()


def test_validated_after_every_outer_iteration():
    g = eng_graph()
    config = quick_config(n_inner=250, max_outer=6)
    res = run_auto_adapt(g, config, seed=14)
    validate_kernel(g, res.kernel.assignments)
    validate_kernel(g, res.best_kernel().assignments)
