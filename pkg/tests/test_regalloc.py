import pytest

from snicheck.ir import Fill, Spill, parse_program, print_program
from snicheck.regalloc import (
    AllocationInfeasible,
    RAWitness,
    allocate,
    analyze_structure,
    is_slot,
    parse_ra_witness,
    serialize_ra_witness,
    validate_ra,
)
from snicheck.cli import corpus_path

from conftest import load_program, load_state, random_program


def test_bundled_witness_validates(ra_witness):
    assert validate_ra(ra_witness) == []
    st = analyze_structure(ra_witness)
    assert st.chains[("1", 0)] == ["b"]  # the spill sits between the compare and the branch
    assert st.chains[("2", 0)] == ["e"]  # the fill sits on the fall-through edge
    assert ra_witness.rho["c"]["bytes"] == ("stk", 0)
    assert ra_witness.rho["f"]["bytes"] == "a"


def test_witness_mutation_unmapped_live_register(ra_witness):
    rho = {pc: dict(m) for pc, m in ra_witness.rho.items()}
    del rho["f"]["bytes"]
    w = RAWitness(ra_witness.source, ra_witness.target, dict(ra_witness.phi), rho)
    diags = validate_ra(w)
    assert any(d.kind == "obeying-liveness" and "bytes" in d.message for d in diags)


def test_witness_mutation_spill_to_occupied_slot(ra_witness):
    # park another live register in the slot the spill writes
    rho = {pc: dict(m) for pc, m in ra_witness.rho.items()}
    for pc in ("z", "a", "b"):
        rho.setdefault(pc, dict(rho["z"]))
    rho["z"]["secret"] = ("stk", 0)
    rho["a"]["secret"] = ("stk", 0)
    rho["b"]["secret"] = ("stk", 0)
    w = RAWitness(ra_witness.source, ra_witness.target, dict(ra_witness.phi), rho)
    diags = validate_ra(w)
    assert any(d.kind == "shuffle-conformity" and "free" in d.message for d in diags)


def test_witness_mutation_instruction_mismatch(ra_witness):
    rho = {pc: dict(m) for pc, m in ra_witness.rho.items()}
    rho["f"]["bytes"] = "b"  # branch at f reads a, not b
    w = RAWitness(ra_witness.source, ra_witness.target, dict(ra_witness.phi), rho)
    diags = validate_ra(w)
    assert any(d.kind == "instruction-matching" and "f" in d.pcs for d in diags)


def test_witness_structure_rejects_bad_phi(ra_witness):
    phi = dict(ra_witness.phi)
    phi["4"] = "g"  # collides with phi[5]
    w = RAWitness(ra_witness.source, ra_witness.target, phi, ra_witness.rho)
    assert any(d.kind == "structure" for d in validate_ra(w))


def test_allocate_identity_for_tiny_program():
    p = parse_program("mem m 2 low\nentry 0\n0: x = x add x -> 1\n1: ret\n")
    w = allocate(p, 8)
    assert validate_ra(w) == []
    assert w.rho[w.phi["0"]] == {"x": "x"}
    shuffles = [pc for pc in w.target.instrs if pc not in w.phi.values()]
    assert shuffles == []


RA5 = """
mem buf 8 low
entry 1
1: a = b lt bufsize -> 2
2: if a ? 4 : 3
3: store buf[b] <- secret -> 4
4: if bytes ? 5 : 5
5: ret
"""


def test_allocate_forced_spill_shape():
    """With three hardware registers, one of the two long-lived registers is
    parked on the stack across the branch and filled right before its use."""
    p = parse_program(RA5)
    w = allocate(p, 3)
    assert validate_ra(w) == []
    from snicheck.ir import uses_defs

    parked = [r for r, loc in w.rho[w.phi["2"]].items() if is_slot(loc)]
    assert parked, "register pressure must push something onto the stack"
    fills = [i for i in w.target.instrs.values() if isinstance(i, Fill)]
    assert fills, "the parked register must be filled before its use"
    for r in parked:
        use_pcs = [pc for pc, i in p.instrs.items() if r in uses_defs(i)[0]]
        for pc in use_pcs:
            assert isinstance(w.rho[w.phi[pc]][r], str), f"{r} must be back in a register at {pc}"
    assert w.target.memvar("stk") is not None


def test_allocate_infeasible_when_k_too_small():
    p = parse_program("entry 0\n0: a = b add c -> 1\n1: x = a add b -> 2\n2: if c ? 3 : 3\n3: if x ? 4 : 4\n4: ret\n")
    with pytest.raises(AllocationInfeasible):
        allocate(p, 2)


def test_allocate_random_programs_validate(rng):
    """Allocator output always passes witness validation."""
    done = 0
    for _ in range(1000):
        p = random_program(rng, n_instrs=rng.randint(3, 7), n_regs=rng.randint(2, 4))
        k = rng.randint(2, 4)
        try:
            w = allocate(p, k)
        except AllocationInfeasible:
            continue
        diags = validate_ra(w)
        assert diags == [], f"{print_program(p)} k={k}: {[str(d) for d in diags]}"
        done += 1
    assert done >= 600


def test_allocated_target_round_trips_as_text(rng):
    for _ in range(50):
        p = random_program(rng, n_instrs=5)
        try:
            w = allocate(p, 3)
        except AllocationInfeasible:
            continue
        assert parse_program(print_program(w.target)) == w.target


def test_spec_free_refinement_modulo_shuffle_leaks(rng):
    """Running source and target architecturally from relocation-related
    states yields the same leak trace once fill/spill leaks are dropped."""
    from snicheck.poison import Product
    from snicheck.security import check_safety
    from snicheck.semantics import D_IF, D_STEP, State, step_spec_free
    from snicheck.ir import Exit, If, Fill, Spill

    def arch_trace(p, s, skip_shuffle):
        out = []
        for _ in range(64):
            i = p.instrs[s.pc]
            if isinstance(i, Exit):
                return out, True
            d = D_IF if isinstance(i, If) else D_STEP
            r = step_spec_free(p, s, d)
            if r is None:
                return out, False
            s2, leak = r
            if not (skip_shuffle and isinstance(i, (Fill, Spill))):
                out.append(leak)
            s = s2
        return out, True

    done = 0
    for _ in range(300):
        p = random_program(rng, n_instrs=rng.randint(3, 6))
        try:
            w = allocate(p, 3)
        except AllocationInfeasible:
            continue
        prod = Product(w)
        from conftest import random_state

        tgt0 = random_state(rng, w.target)[0]
        if check_safety(w.source, prod.initial_source_state(tgt0)).status != "safe":
            continue
        src_leaks, src_done = arch_trace(w.source, prod.initial_source_state(tgt0), False)
        tgt_leaks, tgt_done = arch_trace(w.target, tgt0, True)
        assert src_done and tgt_done
        assert src_leaks == tgt_leaks
        done += 1
    assert done >= 50


def test_witness_round_trip(ra_witness, rng):
    text = serialize_ra_witness(ra_witness)
    again = parse_ra_witness(text, ra_witness.source, ra_witness.target)
    assert again.phi == ra_witness.phi and again.rho == ra_witness.rho

    for _ in range(50):
        p = random_program(rng, n_instrs=4)
        try:
            w = allocate(p, 3)
        except AllocationInfeasible:
            continue
        again = parse_ra_witness(serialize_ra_witness(w), p, w.target)
        assert again.phi == w.phi and again.rho == w.rho


def test_witness_parse_errors(ra_source, ra_target):
    with pytest.raises(ValueError, match="unknown target pc"):
        parse_ra_witness("phi: 0 -> nowhere\n", ra_source, ra_target)
    with pytest.raises(ValueError, match="malformed"):
        parse_ra_witness("rho z: bytes ->\n", ra_source, ra_target)


def test_witness_empty_rho_defaults_to_identity(ra_source, ra_target):
    text = "\n".join(f"phi: {s} -> {t}" for s, t in
                     (("0", "z"), ("1", "a"), ("2", "c"), ("3", "d"), ("4", "f"), ("5", "g")))
    w = parse_ra_witness(text, ra_source, ra_target)
    ident = {r: r for r in ra_source.registers}
    assert all(w.rho[pc] == ident for pc in ra_target.instrs)
