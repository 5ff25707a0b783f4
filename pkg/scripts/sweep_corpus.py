#!/usr/bin/env python3
"""Verdict sweep over the bundled corpus.

Prints, for each bundled configuration, the SNI verdicts, the typability
violations, and the simulation/cube verdicts, at both widths.  Useful as a
quick smoke run and as a template for new experiments.
"""

import itertools
import sys
import time

from snicheck.cli import corpus_path
from snicheck.ir import parse_program
from snicheck.liveness import dce_transform, liveness
from snicheck.poison import check_poison_typable, fix_ra, poison_analysis
from snicheck.regalloc import parse_ra_witness
from snicheck.security import PairSource, check_sni, enumerate_high_states
from snicheck.semantics import Bounds, parse_initial_state
from snicheck.simulation import check_snippy_cube, dce_witness, ra_witness


def load(name):
    return parse_program(corpus_path(name).read_text())


def state(name, prog, width):
    return parse_initial_state(corpus_path(name).read_text(), prog, width)


def pairs(prog, init, width):
    base = state(init, prog, width)
    states = [s[0] for s in enumerate_high_states(prog, base, width)]
    return list(itertools.combinations(states, 2))


def row(label, verdict, started):
    print(f"{label:<46} {verdict:<12} {time.monotonic() - started:6.2f}s")


def main() -> int:
    b8, b2 = Bounds(32, 3), Bounds(24, 2)

    src = load("code_ra_source.sp")
    tgt = load("code_ra_target.sp")
    w = parse_ra_witness(corpus_path("code_ra.witness").read_text(), src, tgt)
    s1, s2 = state("code_ra.init", src, 8), state("code_ra_alt.init", src, 8)
    t1, t2 = state("code_ra.init", tgt, 8), state("code_ra_alt.init", tgt, 8)

    t0 = time.monotonic()
    row("allocation source, sni (42 vs 7)", check_sni(src, s1, PairSource("file", pairs=[(s1, s2)]), b8).kind, t0)
    t0 = time.monotonic()
    row("allocation target, sni (42 vs 7)", check_sni(tgt, t1, PairSource("file", pairs=[(t1, t2)]), b8).kind, t0)

    t0 = time.monotonic()
    violations = check_poison_typable(w, poison_analysis(w))
    row("allocation target, typability", f"{len(violations)} violation(s)", t0)

    t0 = time.monotonic()
    fixed, rep = fix_ra(w)
    f1, f2 = state("code_ra.init", fixed.target, 8), state("code_ra_alt.init", fixed.target, 8)
    row(
        f"fixed target ({len(rep.insertions)} insertion), sni",
        check_sni(fixed.target, f1, PairSource("file", pairs=[(f1, f2)]), b8).kind,
        t0,
    )

    p = load("code_dce_w2_source.sp")
    wit = dce_witness(p, dce_transform(p, liveness(p)), width=2)
    t0 = time.monotonic()
    row("dce width-2, cube", check_snippy_cube(wit, pairs(wit.target, "code_dce_w2.init", 2), b2, 2).status, t0)

    src2, tgt2 = load("code_ra_w2_source.sp"), load("code_ra_w2_target.sp")
    w2 = parse_ra_witness(corpus_path("code_ra_w2.witness").read_text(), src2, tgt2)
    t0 = time.monotonic()
    row("allocation width-2 unfixed, cube", check_snippy_cube(ra_witness(w2, 2), pairs(tgt2, "code_ra_w2.init", 2), b2, 2).status, t0)
    fixed2, _ = fix_ra(w2, 2)
    t0 = time.monotonic()
    row("allocation width-2 fixed, cube", check_snippy_cube(ra_witness(fixed2, 2), pairs(fixed2.target, "code_ra_w2.init", 2), b2, 2).status, t0)
    return 0


if __name__ == "__main__":
    sys.exit(main())
