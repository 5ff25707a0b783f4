"""Low-equivalence, program safety, and bounded speculative non-interference.

Two initial states are indistinguishable to the attacker when they share the
program counter and register file and agree on every cell of every low
variable; only high memory may differ.  A program is SNI when indistinguishable
initial states have the same behaviour: the same directive sequences are
executable and produce the same leakage.

The checker walks both states in lockstep over the joint directive tree,
comparing enabled-directive sets before each step and leakages after it.
Joint states already visited are pruned (rollback erases, so revisits cannot
add divergences); branches cut by the step or depth bound are counted and make
a Secure verdict explicitly "secure up to bounds".
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

from .ir import Program
from .semantics import (
    Bounds,
    DEFAULT_WIDTH,
    Directive,
    Leakage,
    SpecState,
    State,
    enabled_directives,
    step_spec,
    step_spec_free,
)


def low_equivalent(p: Program, s1: State, s2: State) -> bool:
    """Same pc, same registers, same low memory; high cells are free."""
    if s1.pc != s2.pc or s1.regs != s2.regs:
        return False
    for v in p.memvars:
        if v.level != "low":
            continue
        for off in range(v.size):
            if s1.cell(v.name, off) != s2.cell(v.name, off):
                return False
    return True


@dataclass
class SafetyResult:
    status: str  # safe | unsafe | bound-exhausted
    step_index: int | None = None


def check_safety(p: Program, s0: State, max_steps: int = 1024, width: int = DEFAULT_WIDTH) -> SafetyResult:
    """Run the deterministic speculation-free semantics from s0.

    Unsafe as soon as a step would need a load/store directive, i.e. an
    out-of-bounds access is reached architecturally.
    """
    from .ir import Exit, If

    s = s0
    for idx in range(max_steps):
        i = p.instrs[s.pc]
        if isinstance(i, Exit):
            return SafetyResult("safe")
        d = Directive("if") if isinstance(i, If) else Directive("step")
        res = step_spec_free(p, s, d, width)
        if res is None:
            return SafetyResult("unsafe", idx)
        s = res[0]
    return SafetyResult("bound-exhausted")


@dataclass
class SniVerdict:
    kind: str  # secure | violation
    bounds: Bounds
    truncated: int = 0
    pairs_checked: int = 0
    state1: SpecState | None = None
    state2: SpecState | None = None
    directives: tuple[Directive, ...] = ()
    divergence: str = ""  # leak | enabled
    leak1: Leakage | None = None
    leak2: Leakage | None = None
    enabled1: tuple[Directive, ...] = ()
    enabled2: tuple[Directive, ...] = ()

    @property
    def secure(self) -> bool:
        return self.kind == "secure"

    def report(self, p: Program | None = None, width: int = DEFAULT_WIDTH) -> dict:
        """Machine-readable verdict; for violations with the program available,
        includes the two initial-state files, the directive script, and both
        replayed leakage traces."""
        out = {"verdict": self.kind, "truncated": self.truncated, "pairs_checked": self.pairs_checked}
        if self.kind == "violation":
            out["directives"] = [str(d) for d in self.directives]
            out["divergence"] = self.divergence
            if self.divergence == "leak":
                out["leak1"], out["leak2"] = str(self.leak1), str(self.leak2)
            else:
                out["enabled1"] = [str(d) for d in self.enabled1]
                out["enabled2"] = [str(d) for d in self.enabled2]
            if p is not None:
                from .semantics import format_initial_state, run_directives

                out["state1"] = format_initial_state(self.state1)
                out["state2"] = format_initial_state(self.state2)
                ex1 = run_directives(p, self.state1, list(self.directives), width)
                ex2 = run_directives(p, self.state2, list(self.directives), width)
                out["leaks1"] = [str(l) for l in ex1.leaks]
                out["leaks2"] = [str(l) for l in ex2.leaks]
        return out


def check_sni_pair(p: Program, nu1: SpecState, nu2: SpecState, b: Bounds, width: int = DEFAULT_WIDTH) -> SniVerdict:
    """Synchronized bounded search for a behavioural difference of nu1 vs nu2."""
    if len(nu1) != 1 or len(nu2) != 1 or not low_equivalent(p, nu1[0], nu2[0]):
        raise ValueError("check_sni_pair requires low-equivalent initial states")

    truncated = 0
    visited: set = set()

    def rec(a: SpecState, c: SpecState, dirs: tuple[Directive, ...]) -> SniVerdict | None:
        nonlocal truncated
        e1 = enabled_directives(p, a, width)
        e2 = enabled_directives(p, c, width)
        if e1 != e2:
            return SniVerdict(
                "violation", b, truncated, state1=nu1, state2=nu2, directives=dirs,
                divergence="enabled", enabled1=tuple(e1), enabled2=tuple(e2),
            )
        if not e1:
            return None
        if len(dirs) >= b.max_steps:
            truncated += 1
            return None
        key = (a, c)
        if key in visited:
            return None
        visited.add(key)
        for d in e1:
            a2, l1 = step_spec(p, a, d, width)
            c2, l2 = step_spec(p, c, d, width)
            if l1 != l2:
                return SniVerdict(
                    "violation", b, truncated, state1=nu1, state2=nu2,
                    directives=dirs + (d,), divergence="leak", leak1=l1, leak2=l2,
                )
            if len(a2) > b.max_spec_depth:
                truncated += 1
                continue
            r = rec(a2, c2, dirs + (d,))
            if r is not None:
                return r
        return None

    res = rec(nu1, nu2, ())
    if res is not None:
        res.truncated = truncated
        return res
    return SniVerdict("secure", b, truncated, pairs_checked=1)


def high_cells(p: Program) -> list[tuple[str, int]]:
    return [(v.name, off) for v in p.memvars if v.level == "high" for off in range(v.size)]


def enumerate_high_states(p: Program, base: SpecState, width: int) -> list[SpecState]:
    """All initial states that agree with `base` except on high cells."""
    cells = high_cells(p)
    values = range(1 << width)
    out = []
    for combo in itertools.product(values, repeat=len(cells)):
        s = base[0]
        for (var, off), v in zip(cells, combo):
            s = s.with_cell(var, off, v)
        out.append((s,))
    return out


@dataclass
class PairSource:
    mode: str  # exhaustive | sampled | file
    count: int = 0
    seed: int = 0
    pairs: list[tuple[SpecState, SpecState]] = field(default_factory=list)


def check_sni(
    p: Program,
    base: SpecState,
    source: PairSource,
    b: Bounds,
    width: int = DEFAULT_WIDTH,
    budget: int = 12,
) -> SniVerdict:
    """First violation over the selected low-equivalent pairs, else Secure.

    Exhaustive mode enumerates every assignment of the high cells at the given
    width and is guarded by `|high cells| * width <= budget`.
    """
    import random

    if source.mode == "file":
        pairs = source.pairs
    elif source.mode == "exhaustive":
        if len(high_cells(p)) * width > budget:
            raise ValueError(
                f"exhaustive pair budget exceeded: {len(high_cells(p))} high cells at width {width}"
            )
        states = enumerate_high_states(p, base, width)
        pairs = [(a, c) for a, c in itertools.combinations(states, 2)]
    elif source.mode == "sampled":
        rng = random.Random(source.seed)
        cells = high_cells(p)
        pairs = []
        for _ in range(source.count):
            s1, s2 = base[0], base[0]
            for (var, off) in cells:
                s1 = s1.with_cell(var, off, rng.randrange(1 << width))
                s2 = s2.with_cell(var, off, rng.randrange(1 << width))
            pairs.append(((s1,), (s2,)))
    else:
        raise ValueError(f"unknown pair source {source.mode}")

    truncated = 0
    checked = 0
    for a, c in pairs:
        if not low_equivalent(p, a[0], c[0]):
            continue
        v = check_sni_pair(p, a, c, b, width)
        checked += 1
        truncated += v.truncated
        if not v.secure:
            v.pairs_checked = checked
            return v
    return SniVerdict("secure", b, truncated, pairs_checked=checked)
