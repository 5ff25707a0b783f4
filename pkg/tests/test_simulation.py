import itertools
import random

import pytest

from snicheck.ir import parse_program
from snicheck.liveness import dce_transform, liveness
from snicheck.poison import fix_ra
from snicheck.regalloc import allocate, AllocationInfeasible, parse_ra_witness
from snicheck.security import enumerate_high_states, low_equivalent
from snicheck.semantics import (
    Bounds,
    D_IF,
    D_RB,
    D_SPEC,
    D_STEP,
    d_load,
    d_store,
    explore_behaviors,
    is_final,
    run_directives,
    step_spec,
)
from snicheck.simulation import (
    ExtractResult,
    SimWitness,
    check_simulation,
    check_snippy_cube,
    dce_witness,
    extract_intervals,
    ra_witness,
)
from snicheck.cli import corpus_path

from conftest import load_program, load_state, random_program, random_state


@pytest.fixture
def dce_wit():
    p = load_program("code_dce_source.sp")
    return dce_witness(p, dce_transform(p, liveness(p)))


@pytest.fixture
def ra_wit(ra_witness):
    return ra_witness_obj(ra_witness)


def ra_witness_obj(w, width=8):
    return ra_witness(w, width)


def w2_fixture(name_src, name_tgt, name_wit):
    src = load_program(name_src)
    tgt = load_program(name_tgt)
    return parse_ra_witness(corpus_path(name_wit).read_text(), src, tgt)


# --- interval extraction -----------------------------------------------------------


def test_dce_intervals_from_stated_initial_states(dce_wit):
    """From the out-of-bounds initial state there are exactly two intervals:
    the full mispredicted straight line, replayed with an unsafe load on the
    source side, and the plain architectural branch."""
    p = dce_wit.source
    s0 = load_state("code_dce.init", p)
    t0 = load_state("code_dce.init", dce_wit.target)
    assert dce_wit.related(t0, s0)
    res = extract_intervals(dce_wit, s0, t0, Bounds(16, 2))
    sigs = {
        (iv.tgt_dirs, iv.src_dirs): (iv.tgt_leaks, iv.src_leaks) for iv in res.intervals
    }
    assert len(res.intervals) == 2
    spec_key = ((D_SPEC, D_STEP, D_STEP), (D_SPEC, d_load("secret", 0), D_STEP))
    if_key = ((D_IF,), (D_IF,))
    assert spec_key in sigs and if_key in sigs
    tgt_leaks, src_leaks = sigs[spec_key]
    assert [str(l) for l in tgt_leaks] == ["if 1", "none", "none"]
    assert [str(l) for l in src_leaks] == ["if 1", "load 8", "none"]
    tgt_leaks, src_leaks = sigs[if_key]
    assert [str(l) for l in tgt_leaks] == ["if 1"] == [str(l) for l in src_leaks]


def test_final_pair_has_no_intervals(dce_wit):
    p = dce_wit.source
    s = load_state("code_dce.init", p)[0].at("4")
    assert extract_intervals(dce_wit, (s,), (s,), Bounds(8, 2)).intervals == []


def test_ra_interval_covers_matched_step_and_shuffle_tail(ra_wit, ra_witness):
    """From the pair after the initial load, the compare's interval carries the
    spill along: one source step against two target steps."""
    t0 = load_state("code_ra.init", ra_witness.target)
    s0 = (ra_wit.initial_map(t0[0]),)
    # advance both through the matched load
    t1 = step_spec(ra_witness.target, t0, D_STEP)[0]
    s1 = step_spec(ra_witness.source, s0, D_STEP)[0]
    assert ra_wit.related(t1, s1)
    res = extract_intervals(ra_wit, s1, t1, Bounds(16, 3))
    assert len(res.intervals) == 1
    iv = res.intervals[0]
    assert iv.tgt_dirs == (D_STEP, D_STEP)
    assert iv.src_dirs == (D_STEP,)
    assert [str(l) for l in iv.tgt_leaks] == ["none", "store 0"]
    assert iv.end_tgt[-1].pc == "c" and iv.end_src[-1].pc == "2"


def test_ra_rollback_interval_variants(ra_wit, ra_witness):
    """A speculating store interval exists in a rollback-ended variant for
    every prefix of its shuffle tail."""
    t0 = load_state("code_ra.init", ra_witness.target)
    s0 = (ra_wit.initial_map(t0[0]),)
    ex_t = run_directives(ra_witness.target, t0, [D_STEP, D_STEP, D_STEP, D_SPEC])
    ex_s = run_directives(ra_witness.source, s0, [D_STEP, D_STEP, D_SPEC])
    t1, s1 = ex_t.last, ex_s.last
    assert ra_wit.related(t1, s1)
    res = extract_intervals(ra_wit, s1, t1, Bounds(16, 3))
    store_ivs = [iv for iv in res.intervals if iv.tgt_dirs[0] == d_store("stk", 0)]
    shapes = {iv.tgt_dirs for iv in store_ivs}
    assert shapes == {
        (d_store("stk", 0), D_STEP),  # through the fill to the next matched pair
        (d_store("stk", 0), D_RB),  # rollback before the fill
    }
    for iv in store_ivs:
        assert iv.src_dirs[0] == d_store("buf", 0)
    # a rollback after the completed tail starts the next interval
    red = next(iv for iv in store_ivs if iv.tgt_dirs[-1] == D_STEP)
    res2 = extract_intervals(ra_wit, red.end_src, red.end_tgt, Bounds(16, 3))
    assert any(iv.tgt_dirs == (D_RB,) and iv.src_dirs == (D_RB,) for iv in res2.intervals)


def test_interval_projections_replay(dce_wit, ra_witness):
    wits = [dce_wit, ra_witness_obj(ra_witness)]
    inits = ["code_dce.init", "code_ra.init"]
    for wit, init in zip(wits, inits):
        t0 = load_state(init, wit.target)
        s0 = (wit.initial_map(t0[0]),)
        res = extract_intervals(wit, s0, t0, Bounds(16, 3))
        assert res.intervals
        for iv in res.intervals:
            ex_t = run_directives(wit.target, t0, list(iv.tgt_dirs))
            ex_s = run_directives(wit.source, s0, list(iv.src_dirs))
            assert ex_t.status != "stuck" and ex_t.leaks == iv.tgt_leaks and ex_t.last == iv.end_tgt
            assert ex_s.status != "stuck" and ex_s.leaks == iv.src_leaks and ex_s.last == iv.end_src


def test_ra_interval_ends_related(ra_wit, ra_witness):
    seen = set()
    queue = [((ra_wit.initial_map(load_state("code_ra.init", ra_witness.target)[0]),),
              load_state("code_ra.init", ra_witness.target))]
    b = Bounds(24, 3)
    while queue:
        s, t = queue.pop()
        if (s, t) in seen or is_final(ra_witness.target, t):
            continue
        seen.add((s, t))
        for iv in extract_intervals(ra_wit, s, t, b).intervals:
            assert ra_wit.related(iv.end_tgt, iv.end_src)
            if len(iv.end_tgt) <= 2:
                queue.append((iv.end_src, iv.end_tgt))
    assert len(seen) > 5


# --- simulation check ----------------------------------------------------------------


def test_check_simulation_dce_pass(dce_wit):
    t0 = load_state("code_dce.init", dce_wit.target)[0]
    v = check_simulation(dce_wit, [t0], Bounds(24, 2))
    assert v.ok


def test_check_simulation_fixed_ra_pass(ra_witness):
    fixed, _ = fix_ra(ra_witness)
    wit = ra_witness_obj(fixed)
    t0 = load_state("code_ra.init", fixed.target)[0]
    v = check_simulation(wit, [t0], Bounds(24, 3))
    assert v.ok


def test_check_simulation_detects_missing_rollback_branch(ra_witness):
    """Dropping every rollback-ended interval leaves speculating target
    continuations uncovered."""
    fixed, _ = fix_ra(ra_witness)
    base = ra_witness_obj(fixed)

    def pruned(nu_src, nu_tgt, b):
        res = base.intervals(nu_src, nu_tgt, b)
        kept = [iv for iv in res.intervals if D_RB not in iv.tgt_dirs]
        return ExtractResult(kept, res.truncated)

    wit = SimWitness(base.kind, base.source, base.target, base.related, base.initial_map, pruned)
    t0 = load_state("code_ra.init", fixed.target)[0]
    v = check_simulation(wit, [t0], Bounds(24, 3))
    assert not v.ok
    assert v.reason == "target continuation has no interval"
    assert v.directive == D_RB


def test_behavior_decomposes_into_intervals(dce_wit, ra_witness):
    """Every terminated target behaviour factors into extracted intervals,
    with rollback-balanced speculation segments erased where the witness
    canonicalises the episode (rollback restores the pre-speculation state)."""
    b = Bounds(10, 2)

    def factors(wit, nu_src, nu_tgt, dirs):
        if not dirs:
            return True
        res = extract_intervals(wit, nu_src, nu_tgt, b)
        for iv in res.intervals:
            n = len(iv.tgt_dirs)
            if tuple(dirs[:n]) == iv.tgt_dirs and factors(wit, iv.end_src, iv.end_tgt, dirs[n:]):
                return True
        if dirs[0] == D_SPEC:
            depth0 = len(nu_tgt)
            cur = nu_tgt
            for i, d in enumerate(dirs):
                cur = step_spec(wit.target, cur, d)[0]
                if len(cur) == depth0:
                    return cur == nu_tgt and factors(wit, nu_src, nu_tgt, dirs[i + 1:])
        return False

    cases = [
        (dce_wit, "code_dce.init"),
        (ra_witness_obj(ra_witness), "code_ra.init"),
    ]
    for wit, init in cases:
        t0 = load_state(init, wit.target)
        s0 = (wit.initial_map(t0[0]),)
        bs = explore_behaviors(wit.target, t0, b)
        assert bs.terminated
        for _leaks, dirs in sorted(bs.terminated, key=str):
            assert factors(wit, s0, t0, list(dirs)), [str(d) for d in dirs]


def test_initial_mapping_respects_levels(dce_wit, ra_witness, rng):
    for wit in (dce_wit, ra_witness_obj(ra_witness)):
        base = random_state(rng, wit.target)[0].at(wit.target.entry)
        states = [base]
        for _ in range(12):
            v = rng.choice(wit.target.registers)
            s = base.with_reg(v, rng.randrange(256))
            for var, off in wit.target.cells():
                if rng.random() < 0.3:
                    s = s.with_cell(var, off, rng.randrange(256))
            states.append(s)
        for t1, t2 in itertools.combinations(states, 2):
            s1, s2 = wit.initial_map(t1), wit.initial_map(t2)
            assert low_equivalent(wit.target, t1, t2) == low_equivalent(wit.source, s1, s2)


# --- snippy cube ----------------------------------------------------------------------


def w2_pairs(prog, init_name):
    base = load_state(init_name, prog, width=2)
    states = [s[0] for s in enumerate_high_states(prog, base, 2)]
    return list(itertools.combinations(states, 2))


def test_cube_dce_pass_width2():
    p = load_program("code_dce_w2_source.sp")
    wit = dce_witness(p, dce_transform(p, liveness(p)), width=2)
    v = check_snippy_cube(wit, w2_pairs(wit.target, "code_dce_w2.init"), Bounds(24, 2), width=2)
    assert v.ok and v.truncated == 0


def test_cube_unfixed_ra_fails_width2():
    w = w2_fixture("code_ra_w2_source.sp", "code_ra_w2_target.sp", "code_ra_w2.witness")
    wit = ra_witness_obj(w, width=2)
    v = check_snippy_cube(wit, w2_pairs(w.target, "code_ra_w2.init"), Bounds(24, 2), width=2)
    assert not v.ok
    assert "different target leaks" in v.reason
    assert v.interval.tgt_dirs[0].kind in ("if", "spec")


def test_cube_fixed_ra_passes_width2():
    w = w2_fixture("code_ra_w2_source.sp", "code_ra_w2_target.sp", "code_ra_w2.witness")
    fixed, _ = fix_ra(w, width=2)
    wit = ra_witness_obj(fixed, width=2)
    v = check_snippy_cube(wit, w2_pairs(fixed.target, "code_ra_w2.init"), Bounds(24, 2), width=2)
    assert v.ok


def test_cube_detects_planted_leak_difference(dce_wit):
    """Mutating one interval's recorded target leak must trip the cube."""
    base = dce_wit
    p = load_program("code_dce_w2_source.sp")
    wit0 = dce_witness(p, dce_transform(p, liveness(p)), width=2)

    def tampered(nu_src, nu_tgt, b):
        res = wit0.intervals(nu_src, nu_tgt, b)
        out = []
        for iv in res.intervals:
            if nu_tgt[0].cell("secret", 0) == 1 and iv.tgt_dirs[0] == D_IF:
                from snicheck.semantics import l_if
                from snicheck.simulation import SimInterval

                iv = SimInterval(iv.tgt_dirs, (l_if(99),), iv.src_dirs, iv.src_leaks, iv.end_src, iv.end_tgt)
            out.append(iv)
        return ExtractResult(out, res.truncated)

    wit = SimWitness(wit0.kind, wit0.source, wit0.target, wit0.related, wit0.initial_map, tampered)
    v = check_snippy_cube(wit, w2_pairs(wit0.target, "code_dce_w2.init"), Bounds(24, 2), width=2)
    assert not v.ok


def test_dce_lockstep_replay_on_random_programs(rng):
    """Every single target step from a related pair has a source replay whose
    step lands in the relation again (random programs, random walks)."""
    from snicheck.liveness import dce_transform, liveness as live

    checked = 0
    for _ in range(150):
        p = random_program(rng, n_instrs=rng.randint(3, 6))
        res = dce_transform(p, live(p))
        wit = dce_witness(p, res)
        t = random_state(rng, res.target)
        s = (wit.initial_map(t[0]),)
        assert wit.related(t, s)
        for _step in range(8):
            if is_final(res.target, t):
                break
            from snicheck.semantics import enabled_directives

            ext = extract_intervals(wit, s, t, Bounds(16, 3))
            en = enabled_directives(res.target, t)
            heads = {iv.tgt_dirs[0] for iv in ext.intervals}
            assert set(en) <= heads
            iv = rng.choice(ext.intervals)
            assert wit.related(iv.end_tgt, iv.end_src)
            s, t = iv.end_src, iv.end_tgt
            checked += 1
            if len(t) > 3:
                break
    assert checked >= 300
