import pytest

from snicheck import ir
from snicheck.ir import (
    Asgn,
    Exit,
    Fill,
    If,
    Load,
    Nop,
    ParseError,
    Spill,
    Store,
    parse_program,
    print_program,
    uses_defs,
    validate_program,
)

from conftest import load_program, random_program


def test_minimal_program():
    p = parse_program("entry L0\nL0: ret\n")
    assert p.entry == "L0"
    assert p.instrs == {"L0": Exit()}


def test_simplerv1_listing():
    p = load_program("code_simplerv1.sp")
    assert p.entry == "1"
    assert isinstance(p.instrs["2"], If)
    assert p.instrs["2"].successors() == ("4", "3")
    assert p.instrs["3"] == Store("buf", "b", "secret", "4")
    assert p.instrs["4"] == Load("bytes", "stk", 0, "5")
    assert len(p.instrs) == 6


def test_const_address_out_of_bounds_rejected():
    text = "mem buf 8 low\nentry a\na: load a <- buf[#9] -> b\nb: ret\n"
    with pytest.raises(ParseError, match="out of bounds"):
        parse_program(text)


def test_parse_errors_carry_line_numbers():
    with pytest.raises(ParseError) as e:
        parse_program("entry a\na: frobnicate -> b\n")
    assert e.value.line == 2

    with pytest.raises(ParseError, match="duplicate label"):
        parse_program("entry a\na: ret\na: ret\n")


def test_validate_unknown_successor_and_slots():
    p = ir.Program("a", {"a": Nop("nowhere")}, [])
    diags = validate_program(p)
    assert len(diags) == 1 and diags[0].pc == "a"

    p = ir.Program(
        "a",
        {"a": Fill("x", 7, "b"), "b": Exit()},
        [ir.MemVar("stk", 4, "low")],
    )
    diags = validate_program(p)
    assert len(diags) == 1 and "slot" in diags[0].message


def test_validate_ok_and_exit_warning():
    p = parse_program("entry a\na: nop -> a\n")
    warnings = []
    assert validate_program(p, warnings) == []
    assert warnings and "no exit" in warnings[0].message


def test_uses_defs_table():
    assert uses_defs(Load("a", "buf", "b", "s")) == (frozenset({"b"}), frozenset({"a"}))
    assert uses_defs(Load("a", "buf", 3, "s")) == (frozenset(), frozenset({"a"}))
    assert uses_defs(Nop("s")) == (frozenset(), frozenset())
    assert uses_defs(Asgn("a", "b", "add", "c", "s")) == (frozenset({"b", "c"}), frozenset({"a"}))
    assert uses_defs(Store("buf", "b", "c", "s")) == (frozenset({"b", "c"}), frozenset())
    assert uses_defs(Spill(0, "x", "s")) == (frozenset({"x"}), frozenset())


def test_round_trip_corpus():
    for name in (
        "code_ra_source.sp",
        "code_ra_target.sp",
        "code_dce_source.sp",
        "code_simplerv1.sp",
        "code_specv1.sp",
    ):
        p = load_program(name)
        assert parse_program(print_program(p)) == p


def test_round_trip_random(rng):
    for _ in range(200):
        p = random_program(rng, n_instrs=rng.randint(2, 8), allow_shuffle=False)
        assert parse_program(print_program(p)) == p


def test_uses_defs_agrees_with_semantics(rng):
    """Perturbing a non-used register never changes step results on other
    registers; steps write only defined registers."""
    from snicheck.semantics import enabled_directives, step_spec
    from conftest import random_state

    for _ in range(300):
        p = random_program(rng, n_instrs=rng.randint(2, 6))
        nu = random_state(rng, p)
        i = p.instrs[nu[0].pc]
        uses, defs = uses_defs(i)
        en = enabled_directives(p, nu)
        others = [r for r in p.registers if r not in uses]
        if others:
            pert = (nu[0].with_reg(rng.choice(others), rng.randrange(256)),)
            assert [d for d in enabled_directives(p, pert)] == en
            for d in en:
                _, leak1 = step_spec(p, nu, d)
                _, leak2 = step_spec(p, pert, d)
                assert leak1 == leak2
        for d in en:
            nu2, _ = step_spec(p, nu, d)
            changed = {r for r in p.registers if nu2[-1].reg(r) != nu[-1].reg(r)}
            assert changed <= defs


# hypothesis check on label ordering


from hypothesis import given, strategies as st

from snicheck.ir import pc_key

label = st.from_regex(r"[A-Za-z0-9_.]{1,8}", fullmatch=True)


@given(st.lists(label, min_size=1, max_size=8))
def test_pc_key_orders_consistently(labels):
    ordered = sorted(labels, key=pc_key)
    assert sorted(ordered, key=pc_key) == ordered
    assert sorted(["1", "2", "10"], key=pc_key) == ["1", "2", "10"]


def test_print_minimal_is_two_lines():
    p = parse_program("entry L0\nL0: ret\n")
    assert print_program(p) == "entry L0\nL0: ret\n"
