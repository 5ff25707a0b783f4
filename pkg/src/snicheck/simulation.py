"""Directive-transforming simulation witnesses and their bounded checks.

A witness for a transformation provides three pieces: a relation between
target and source states, a mapping from target initial states to source
initial states, and an interval enumerator that pairs each target
continuation from a related pair with its canonical source replay.

Intervals for dead code elimination are single joint steps, except that a
misprediction extends greedily through plain steps until the target can no
longer step (speculated straight-line code runs to its end in one interval).
Intervals for register allocation follow the product: one matched step, then
the shuffle chain in the target while the source waits, ending either at the
next matched pair or early with a joint rollback.

`check_simulation` walks related pairs reachable through intervals and
verifies that every enabled target directive heads an interval, that both
projections of every interval replay, and that interval ends are related
again.  `check_snippy_cube` runs two low-equivalent executions of this walk
side by side and demands that whenever pair 1 takes an interval whose source
directives run with the same leaks from pair 2's source, pair 2 offers the
identical interval.  A Pass is evidence up to the given bounds, not a proof.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

from .ir import If, Load, Program, Store, STACK_VAR
from .liveness import DceResult, full_fact, live_before
from .poison import Product, StaticPoison, poison_analysis
from .regalloc import RAWitness
from .semantics import (
    DEFAULT_WIDTH,
    D_IF,
    D_RB,
    D_SPEC,
    D_STEP,
    Bounds,
    Directive,
    Leakage,
    SpecState,
    State,
    d_load,
    d_store,
    enabled_directives,
    is_final,
    run_directives,
    step_spec,
)
from .security import low_equivalent


@dataclass(frozen=True)
class SimInterval:
    tgt_dirs: tuple[Directive, ...]
    tgt_leaks: tuple[Leakage, ...]
    src_dirs: tuple[Directive, ...]
    src_leaks: tuple[Leakage, ...]
    end_src: SpecState
    end_tgt: SpecState

    @property
    def signature(self):
        return (self.tgt_dirs, self.tgt_leaks, self.src_dirs, self.src_leaks)


@dataclass
class ExtractResult:
    intervals: list[SimInterval]
    truncated: int = 0


@dataclass
class SimWitness:
    kind: str  # dce | ra
    source: Program
    target: Program
    related: Callable[[SpecState, SpecState], bool]  # (target, source)
    initial_map: Callable[[State], State]
    intervals: Callable[[SpecState, SpecState, Bounds], ExtractResult]


def extract_intervals(wit: SimWitness, nu_src: SpecState, nu_tgt: SpecState, b: Bounds) -> ExtractResult:
    if is_final(wit.target, nu_tgt):
        return ExtractResult([])
    return wit.intervals(nu_src, nu_tgt, b)


# --- dead code elimination witness ------------------------------------------------


def dce_witness(p: Program, res: DceResult, width: int = DEFAULT_WIDTH) -> SimWitness:
    t = res.target
    sol = res.solution
    ef = full_fact(p)

    def related(nu_tgt: SpecState, nu_src: SpecState) -> bool:
        if len(nu_tgt) != len(nu_src):
            return False
        for st, ss in zip(nu_tgt, nu_src):
            if st.pc != ss.pc:
                return False
            for item in live_before(p, sol, ss.pc, ef):
                if isinstance(item, str):
                    if st.reg(item) != ss.reg(item):
                        return False
                elif st.cell(*item) != ss.cell(*item):
                    return False
        return True

    def initial_map(tgt0: State) -> State:
        return tgt0.at(p.entry)

    def replay_dir(nu_src: SpecState, d: Directive) -> Directive | None:
        """Source directive matching one target step (identity off replaced pcs)."""
        pc = nu_src[-1].pc
        if d != D_STEP or not res.replaced.get(pc, False):
            return d
        i = p.instrs[pc]
        first_var = p.memvars[0].name
        match i:
            case Load(addr=adr):
                a = adr if isinstance(adr, int) else nu_src[-1].reg(adr)
                mv = p.memvar(i.var)
                return D_STEP if 0 <= a < mv.size else d_load(first_var, 0)
            case Store(addr=adr):
                a = adr if isinstance(adr, int) else nu_src[-1].reg(adr)
                mv = p.memvar(i.var)
                return D_STEP if 0 <= a < mv.size else d_store(first_var, 0)
        return d

    def intervals(nu_src: SpecState, nu_tgt: SpecState, b: Bounds) -> ExtractResult:
        out = ExtractResult([])
        for d in enabled_directives(t, nu_tgt, width):
            sd = replay_dir(nu_src, d)
            tgt_step = step_spec(t, nu_tgt, d, width)
            src_step = step_spec(p, nu_src, sd, width) if sd is not None else None
            if tgt_step is None or src_step is None:
                continue
            (ct, lt), (cs, ls) = tgt_step, src_step
            tdirs, tleaks, sdirs, sleaks = [d], [lt], [sd], [ls]
            if d == D_SPEC:
                # run the mispredicted straight line to its end in one interval
                while len(tdirs) < b.max_steps:
                    nxt = step_spec(t, ct, D_STEP, width)
                    if nxt is None:
                        break
                    sd2 = replay_dir(cs, D_STEP)
                    src2 = step_spec(p, cs, sd2, width)
                    if src2 is None:
                        break
                    ct, lt = nxt
                    cs, ls = src2
                    tdirs.append(D_STEP)
                    tleaks.append(lt)
                    sdirs.append(sd2)
                    sleaks.append(ls)
                else:
                    out.truncated += 1
            out.intervals.append(
                SimInterval(tuple(tdirs), tuple(tleaks), tuple(sdirs), tuple(sleaks), cs, ct)
            )
        return out

    return SimWitness("dce", p, t, related, initial_map, intervals)


# --- register allocation witness -----------------------------------------------


def ra_witness(w: RAWitness, width: int = DEFAULT_WIDTH, static: StaticPoison | None = None) -> SimWitness:
    prod = Product(w, width)
    sp = static if static is not None else poison_analysis(w, width)

    def related(nu_tgt: SpecState, nu_src: SpecState) -> bool:
        if len(nu_tgt) != len(nu_src):
            return False
        from .poison import ProductState

        return prod.well_formed(ProductState(nu_src, nu_tgt, sp.stack_for(nu_src, nu_tgt)))

    def initial_map(tgt0: State) -> State:
        return prod.initial_source_state(tgt0)

    def replay_dir(nu_src: SpecState, nu_tgt: SpecState, d: Directive) -> Directive | None:
        """Canonical source directive for one target step; None when the source
        only stutters (shuffle code)."""
        if d == D_RB:
            return D_RB
        t_pc = nu_tgt[-1].pc
        if t_pc in prod.st.owner:
            return None
        s_pc = prod.st.matched[t_pc]
        i = w.source.instrs[s_pc]
        match i:
            case If():
                return d
            case Load(var=x, addr=adr) if isinstance(adr, str):
                sval = nu_src[-1].reg(adr)
                safe = 0 <= sval < w.source.memvar(x).size
                if d == D_STEP:
                    return D_STEP if safe else d_load(x, 0)
                return d_load(x, 0) if d.var == STACK_VAR else d
            case Store(var=x, addr=adr) if isinstance(adr, str):
                sval = nu_src[-1].reg(adr)
                safe = 0 <= sval < w.source.memvar(x).size
                if d == D_STEP:
                    return D_STEP if safe else d_store(x, 0)
                return d_store(x, 0) if d.var == STACK_VAR else d
            case _:
                return D_STEP

    def joint(cs, ct, d):
        tgt_step = step_spec(w.target, ct, d, width)
        if tgt_step is None:
            return None
        sd = replay_dir(cs, ct, d)
        if sd is None:
            return tgt_step, None, (cs, None)
        src_step = step_spec(w.source, cs, sd, width)
        if src_step is None:
            return None
        return tgt_step, sd, src_step

    def at_matched(cs, ct) -> bool:
        return ct[-1].pc in prod.st.matched and prod.st.matched[ct[-1].pc] == cs[-1].pc

    def intervals(nu_src: SpecState, nu_tgt: SpecState, b: Bounds) -> ExtractResult:
        out = ExtractResult([])
        for d in enabled_directives(w.target, nu_tgt, width):
            first = joint(nu_src, nu_tgt, d)
            if first is None:
                continue
            (ct, lt), sd, (cs, ls) = first
            tdirs, tleaks = [d], [lt]
            sdirs = [sd] if sd is not None else []
            sleaks = [ls] if ls is not None else []
            # walk the shuffle chain; every speculating prefix may also roll back
            while not at_matched(cs, ct):
                if len(ct) >= 2:
                    rb_t = step_spec(w.target, ct, D_RB, width)
                    rb_s = step_spec(w.source, cs, D_RB, width)
                    if rb_t and rb_s:
                        out.intervals.append(
                            SimInterval(
                                tuple(tdirs) + (D_RB,),
                                tuple(tleaks) + (rb_t[1],),
                                tuple(sdirs) + (D_RB,),
                                tuple(sleaks) + (rb_s[1],),
                                rb_s[0],
                                rb_t[0],
                            )
                        )
                if len(tdirs) >= b.max_steps:
                    out.truncated += 1
                    break
                step = joint(cs, ct, D_STEP)
                if step is None:
                    break  # fenced off: only the rollback variants remain
                (ct, lt), sd2, (cs2, ls2) = step
                cs = cs2
                tdirs.append(D_STEP)
                tleaks.append(lt)
                if sd2 is not None:
                    sdirs.append(sd2)
                    sleaks.append(ls2)
            else:
                out.intervals.append(
                    SimInterval(tuple(tdirs), tuple(tleaks), tuple(sdirs), tuple(sleaks), cs, ct)
                )
        return out

    return SimWitness("ra", w.source, w.target, related, initial_map, intervals)


# --- bounded simulation check ----------------------------------------------------


@dataclass
class SimVerdict:
    status: str  # pass | fail
    intervals_checked: int = 0
    truncated: int = 0
    reason: str = ""
    pair: tuple[SpecState, SpecState] | None = None
    directive: Directive | None = None

    @property
    def ok(self) -> bool:
        return self.status == "pass"

    def report(self) -> dict:
        out = {"verdict": self.status, "intervals_checked": self.intervals_checked, "truncated": self.truncated}
        if self.status == "fail":
            out["reason"] = self.reason
            if self.directive is not None:
                out["directive"] = str(self.directive)
        return out


def check_simulation(
    wit: SimWitness,
    initial_targets: list[State],
    b: Bounds,
    width: int = DEFAULT_WIDTH,
) -> SimVerdict:
    checked = 0
    truncated = 0
    seen: set = set()
    queue: list[tuple[SpecState, SpecState, int]] = []
    for t0 in initial_targets:
        s0 = wit.initial_map(t0)
        if not wit.related((t0,), (s0,)):
            return SimVerdict("fail", checked, truncated, "initial states not related", ((s0,), (t0,)))
        queue.append(((s0,), (t0,), 0))

    while queue:
        nu_src, nu_tgt, dist = queue.pop(0)
        if (nu_src, nu_tgt) in seen:
            continue
        seen.add((nu_src, nu_tgt))
        if is_final(wit.target, nu_tgt):
            continue
        if dist >= b.max_steps:
            truncated += 1
            continue
        res = extract_intervals(wit, nu_src, nu_tgt, b)
        truncated += res.truncated
        for d in enabled_directives(wit.target, nu_tgt, width):
            if not any(iv.tgt_dirs[0] == d for iv in res.intervals):
                return SimVerdict(
                    "fail", checked, truncated, "target continuation has no interval", (nu_src, nu_tgt), d
                )
        for iv in res.intervals:
            checked += 1
            tgt_run = run_directives(wit.target, nu_tgt, list(iv.tgt_dirs), width)
            if tgt_run.status == "stuck" or tgt_run.leaks != iv.tgt_leaks or tgt_run.last != iv.end_tgt:
                return SimVerdict("fail", checked, truncated, "interval target projection does not replay", (nu_src, nu_tgt))
            src_run = run_directives(wit.source, nu_src, list(iv.src_dirs), width)
            if src_run.status == "stuck" or src_run.leaks != iv.src_leaks or src_run.last != iv.end_src:
                return SimVerdict("fail", checked, truncated, "interval source projection does not replay", (nu_src, nu_tgt))
            if not wit.related(iv.end_tgt, iv.end_src):
                return SimVerdict("fail", checked, truncated, "interval end not related", (iv.end_src, iv.end_tgt))
            if len(iv.end_tgt) > b.max_spec_depth:
                truncated += 1
                continue
            queue.append((iv.end_src, iv.end_tgt, dist + len(iv.tgt_dirs)))
    return SimVerdict("pass", checked, truncated)


# --- snippy cube ------------------------------------------------------------------


@dataclass
class CubeVerdict:
    status: str  # pass | fail
    intervals_checked: int = 0
    truncated: int = 0
    reason: str = ""
    quad: tuple | None = None
    interval: SimInterval | None = None

    @property
    def ok(self) -> bool:
        return self.status == "pass"

    def report(self) -> dict:
        out = {"verdict": self.status, "intervals_checked": self.intervals_checked, "truncated": self.truncated}
        if self.status == "fail":
            out["reason"] = self.reason
            if self.interval is not None:
                out["interval"] = {
                    "target_directives": [str(d) for d in self.interval.tgt_dirs],
                    "target_leaks": [str(l) for l in self.interval.tgt_leaks],
                    "source_directives": [str(d) for d in self.interval.src_dirs],
                    "source_leaks": [str(l) for l in self.interval.src_leaks],
                }
        return out


def _source_premise(wit: SimWitness, nu_src: SpecState, iv: SimInterval, width: int) -> bool:
    """Pair 2's source can execute pair 1's source directives with equal leaks."""
    run = run_directives(wit.source, nu_src, list(iv.src_dirs), width)
    return run.status != "stuck" and run.leaks == iv.src_leaks


def check_snippy_cube(
    wit: SimWitness,
    initial_target_pairs: list[tuple[State, State]],
    b: Bounds,
    width: int = DEFAULT_WIDTH,
) -> CubeVerdict:
    checked = 0
    truncated = 0
    for t1, t2 in initial_target_pairs:
        s1, s2 = wit.initial_map(t1), wit.initial_map(t2)
        t_low = low_equivalent(wit.target, t1, t2)
        s_low = low_equivalent(wit.source, s1, s2)
        if t_low != s_low:
            return CubeVerdict("fail", checked, truncated, "initial-state mapping does not respect levels")
        if not t_low:
            continue
        seen: set = set()
        queue = [((s1,), (t1,), (s2,), (t2,), 0)]
        while queue:
            n1s, n1t, n2s, n2t, dist = queue.pop(0)
            key = (n1s, n1t, n2s, n2t)
            if key in seen:
                continue
            seen.add(key)
            if is_final(wit.target, n1t) and is_final(wit.target, n2t):
                continue
            if dist >= b.max_steps:
                truncated += 1
                continue
            r1 = extract_intervals(wit, n1s, n1t, b)
            r2 = extract_intervals(wit, n2s, n2t, b)
            truncated += r1.truncated + r2.truncated
            sig2 = {iv.signature for iv in r2.intervals}
            sig1 = {iv.signature for iv in r1.intervals}
            for iv in r1.intervals:
                if not _source_premise(wit, n2s, iv, width):
                    continue
                checked += 1
                if iv.signature not in sig2:
                    reason = _describe_missing(iv, r2.intervals)
                    return CubeVerdict("fail", checked, truncated, reason, (n1s, n1t, n2s, n2t), iv)
            for iv in r2.intervals:
                if not _source_premise(wit, n1s, iv, width):
                    continue
                checked += 1
                if iv.signature not in sig1:
                    reason = _describe_missing(iv, r1.intervals)
                    return CubeVerdict("fail", checked, truncated, reason, (n2s, n2t, n1s, n1t), iv)
            by_sig = {iv.signature: iv for iv in r2.intervals}
            for iv in r1.intervals:
                other = by_sig.get(iv.signature)
                if other is None:
                    continue
                if len(iv.end_tgt) > b.max_spec_depth:
                    truncated += 1
                    continue
                queue.append((iv.end_src, iv.end_tgt, other.end_src, other.end_tgt, dist + len(iv.tgt_dirs)))
    return CubeVerdict("pass", checked, truncated)


def _describe_missing(iv: SimInterval, others: list[SimInterval]) -> str:
    for o in others:
        if o.src_dirs == iv.src_dirs and o.tgt_dirs == iv.tgt_dirs:
            if o.tgt_leaks != iv.tgt_leaks:
                return (
                    f"same directives, different target leaks: "
                    f"{[str(l) for l in iv.tgt_leaks]} vs {[str(l) for l in o.tgt_leaks]}"
                )
            return "same directives, different source leaks"
    return "no interval with these directives on the other pair"
