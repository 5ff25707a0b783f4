"""Register-allocation witnesses: representation, validation, construction.

A witness relates a source program P and a target program T through an
injective map `phi` from source pcs to their matched target pcs and a
relocation map `rho`: at each target pc, where each source register currently
lives (a hardware register or a stack slot of the reserved low variable
`stk`).  Every target pc outside the image of `phi` must hold a shuffle
instruction (move/fill/spill/slh/sfence), and each such pc sits on a
straight-line chain leading to the matched image of a unique source pc.

Validation enforces the three witness conditions:

  instruction matching   matched instructions are equal up to relocation of
                         uses (at the instruction) and defs (at its successor)
  shuffle conformity     untouched registers keep their location across every
                         instruction; each shuffle moves exactly one source
                         register to a location free of live registers
  obeying liveness       live registers are always mapped, and no location is
                         allocated to two live registers at once

Liveness here means live-before sets computed with registers dead at exit;
dead registers may be dropped from or linger in `rho` without complaint.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .ir import (
    Asgn,
    Exit,
    Fill,
    If,
    Instr,
    Load,
    MemVar,
    Move,
    Nop,
    Pc,
    Program,
    Reg,
    Sfence,
    Slh,
    Spill,
    Store,
    STACK_VAR,
    SHUFFLE_KINDS,
    pc_key,
    uses_defs,
)
from .liveness import cells_fact, live_before, liveness

Loc = "Reg | tuple[str, int]"  # hardware register or ("stk", slot)


def is_slot(loc) -> bool:
    return isinstance(loc, tuple)


def fmt_loc(loc) -> str:
    return f"{STACK_VAR}#{loc[1]}" if is_slot(loc) else loc


@dataclass
class RAWitness:
    source: Program
    target: Program
    phi: dict[Pc, Pc]
    rho: dict[Pc, dict[Reg, "Loc"]]


@dataclass(frozen=True)
class RADiagnostic:
    kind: str  # instruction-matching | shuffle-conformity | obeying-liveness | structure
    pcs: tuple[Pc, ...]
    message: str

    def __str__(self):
        return f"[{self.kind}] {','.join(self.pcs)}: {self.message}"


@dataclass
class Structure:
    matched: dict[Pc, Pc]  # target pc -> source pc
    owner: dict[Pc, Pc]  # shuffle target pc -> source pc it precedes
    chains: dict[tuple[Pc, int], list[Pc]]  # (source pc, successor index) -> shuffle pcs
    errors: list[RADiagnostic] = field(default_factory=list)


def analyze_structure(w: RAWitness) -> Structure:
    """Check phi/shuffle shape and recover chain ownership."""
    errs: list[RADiagnostic] = []
    src, tgt = w.source, w.target
    if sorted(w.phi) != sorted(src.instrs):
        errs.append(RADiagnostic("structure", (), "phi must be total on source pcs"))
    image = list(w.phi.values())
    if len(set(image)) != len(image):
        errs.append(RADiagnostic("structure", (), "phi must be injective"))
    for s_pc, t_pc in w.phi.items():
        if t_pc not in tgt.instrs:
            errs.append(RADiagnostic("structure", (s_pc,), f"phi image {t_pc} not in target"))
    if errs:
        return Structure({}, {}, {}, errs)
    if w.phi.get(src.entry) != tgt.entry:
        errs.append(RADiagnostic("structure", (src.entry,), "target entry must be phi(source entry)"))
    stk = tgt.memvar(STACK_VAR)
    if stk is None:
        errs.append(RADiagnostic("structure", (), "target must declare stk"))
    if src.memvar(STACK_VAR) is not None:
        errs.append(RADiagnostic("structure", (), "source must not declare stk"))

    matched = {t: s for s, t in w.phi.items()}
    for t_pc in tgt.pcs():
        if t_pc not in matched and not isinstance(tgt.instrs[t_pc], SHUFFLE_KINDS):
            errs.append(RADiagnostic("structure", (t_pc,), "non-matched target pc must hold a shuffle instruction"))

    owner: dict[Pc, Pc] = {}
    chains: dict[tuple[Pc, int], list[Pc]] = {}
    for s_pc in src.pcs():
        t_pc = w.phi[s_pc]
        s_succs = src.instrs[s_pc].successors()
        t_succs = tgt.instrs[t_pc].successors()
        if len(s_succs) != len(t_succs):
            errs.append(RADiagnostic("structure", (s_pc, t_pc), "successor arity mismatch"))
            continue
        for idx, (s_next, t_next) in enumerate(zip(s_succs, t_succs)):
            chain: list[Pc] = []
            cur = t_next
            seen = set()
            while cur not in matched:
                if cur in seen or cur not in tgt.instrs or not isinstance(tgt.instrs[cur], SHUFFLE_KINDS):
                    errs.append(RADiagnostic("structure", (s_pc, cur), "shuffle chain does not reach a matched pc"))
                    chain = None
                    break
                seen.add(cur)
                chain.append(cur)
                nxt = tgt.instrs[cur].successors()
                if len(nxt) != 1:
                    errs.append(RADiagnostic("structure", (cur,), "shuffle instruction must have one successor"))
                    chain = None
                    break
                cur = nxt[0]
            if chain is None:
                continue
            if matched[cur] != s_next:
                errs.append(
                    RADiagnostic("structure", (s_pc, cur), f"chain ends at {cur} matched to {matched[cur]}, expected {s_next}")
                )
                continue
            chains[(s_pc, idx)] = chain
            for c in chain:
                prev = owner.get(c)
                if prev is not None and prev != s_next:
                    errs.append(RADiagnostic("structure", (c,), "shuffle pc shared between different source pcs"))
                owner[c] = s_next
    # shuffle pcs not on any chain are unreachable from matched code; flag them
    for t_pc in tgt.pcs():
        if t_pc not in matched and t_pc not in owner:
            errs.append(RADiagnostic("structure", (t_pc,), "shuffle pc unreachable from any matched pc"))
    return Structure(matched, owner, chains, errs)


def live_regs_at_target(w: RAWitness, st: Structure, sol, t_pc: Pc) -> frozenset[Reg]:
    """Source registers live at a target pc (live-before its source pc)."""
    ef = cells_fact(w.source)
    s_pc = st.matched.get(t_pc, st.owner.get(t_pc))
    lb = live_before(w.source, sol, s_pc, ef)
    return frozenset(r for r in lb if isinstance(r, str))


def rho_live(w: RAWitness, st: Structure, sol) -> dict[Pc, dict[Reg, "Loc"]]:
    """rho restricted to live registers at every target pc."""
    out = {}
    for t_pc in w.target.pcs():
        live = live_regs_at_target(w, st, sol, t_pc)
        m = w.rho.get(t_pc, {})
        out[t_pc] = {r: m[r] for r in sorted(live) if r in m}
    return out


def _reloc_use(m: dict, r: Reg):
    loc = m.get(r)
    return loc if isinstance(loc, str) else None


def validate_ra(w: RAWitness, sol: dict[Pc, frozenset] | None = None) -> list[RADiagnostic]:
    """All witness diagnostics; empty iff the three conditions hold."""
    if sol is None:
        sol = liveness(w.source, cells_fact(w.source))
    st = analyze_structure(w)
    if st.errors:
        return st.errors
    out: list[RADiagnostic] = []
    src, tgt = w.source, w.target
    live_at = {t: live_regs_at_target(w, st, sol, t) for t in tgt.pcs()}
    rl = rho_live(w, st, sol)

    # obeying liveness: coverage and injectivity on live registers
    for t_pc in tgt.pcs():
        m = rl[t_pc]
        for r in sorted(live_at[t_pc]):
            if r not in m:
                out.append(RADiagnostic("obeying-liveness", (t_pc,), f"live register {r} unmapped"))
        locs = {}
        for r, loc in sorted(m.items()):
            if loc in locs:
                out.append(RADiagnostic("obeying-liveness", (t_pc,), f"{locs[loc]} and {r} both at {fmt_loc(loc)}"))
            locs[loc] = r
        for r, loc in sorted(m.items()):
            if is_slot(loc):
                stk = tgt.memvar(STACK_VAR)
                if not 0 <= loc[1] < stk.size:
                    out.append(RADiagnostic("obeying-liveness", (t_pc,), f"slot {loc[1]} outside stk size {stk.size}"))

    # instruction matching at phi pairs
    for s_pc in src.pcs():
        t_pc = w.phi[s_pc]
        i, ti = src.instrs[s_pc], tgt.instrs[t_pc]
        t_succs = ti.successors()
        succ_map = rl[t_succs[0]] if t_succs else {}
        live_succ = live_at[t_succs[0]] if t_succs else frozenset()
        ok, msg = _instr_matches(i, ti, rl[t_pc], succ_map, live_succ)
        if not ok:
            out.append(RADiagnostic("instruction-matching", (s_pc, t_pc), msg))

    # shuffle conformity: per-instruction frame condition + shuffle table
    for t_pc in tgt.pcs():
        ti = tgt.instrs[t_pc]
        t_uses, t_defs = uses_defs(ti)
        for t_next in ti.successors():
            m0, m1 = rl[t_pc], rl[t_next]
            moved = _moved_register(w, t_pc, ti, m0, m1, out)
            for r in sorted(live_at[t_pc] & live_at[t_next]):
                l0, l1 = m0.get(r), m1.get(r)
                if l0 is None or l1 is None:
                    continue  # coverage already diagnosed
                if (not is_slot(l0) and l0 in t_uses) or (not is_slot(l1) and l1 in t_defs):
                    continue
                if r == moved:
                    continue
                if l0 != l1:
                    out.append(
                        RADiagnostic("shuffle-conformity", (t_pc, t_next), f"{r} moves {fmt_loc(l0)} -> {fmt_loc(l1)} without a shuffle")
                    )
    return out


def _moved_register(w: RAWitness, t_pc: Pc, ti: Instr, m0: dict, m1: dict, out: list) -> Reg | None:
    """For a shuffle instruction, the source register it relocates (checked)."""
    if not isinstance(ti, SHUFFLE_KINDS):
        return None

    def occupied(loc) -> bool:
        return loc in m0.values()

    def find(pre, post) -> Reg | None:
        for r in sorted(set(m0) | set(m1)):
            if m0.get(r) == pre and m1.get(r) == post:
                return r
        return None

    match ti:
        case Move(dst=d, src=s):
            r = find(s, d)
            if r is None:
                out.append(RADiagnostic("shuffle-conformity", (t_pc,), f"move {d} <- {s} relocates no live register"))
            elif occupied(d):
                out.append(RADiagnostic("shuffle-conformity", (t_pc,), f"move target {d} is not free"))
            return r
        case Fill(dst=d, slot=sl):
            r = find((STACK_VAR, sl), d)
            if r is None:
                out.append(RADiagnostic("shuffle-conformity", (t_pc,), f"fill {d} <- stk#{sl} relocates no live register"))
            elif occupied(d):
                out.append(RADiagnostic("shuffle-conformity", (t_pc,), f"fill target {d} is not free"))
            return r
        case Spill(slot=sl, src=s):
            r = find(s, (STACK_VAR, sl))
            if r is None:
                out.append(RADiagnostic("shuffle-conformity", (t_pc,), f"spill stk#{sl} <- {s} relocates no live register"))
            elif occupied((STACK_VAR, sl)):
                out.append(RADiagnostic("shuffle-conformity", (t_pc,), f"spill slot stk#{sl} is not free"))
            return r
        case Slh(reg=a):
            owners = [r for r in sorted(m0) if m0.get(r) == a]
            for r in owners:
                if m1.get(r) == a:
                    return r
            # an owner that stays live must keep its place; a dead one may drop
            for r in owners:
                if r in m1:
                    out.append(RADiagnostic("shuffle-conformity", (t_pc,), f"slh register {a} must stay allocated in place"))
                    break
            return owners[0] if owners else None
        case _:  # sfence moves nothing
            return None


class _AnyFree:
    """Matches any register not taken by a live value (dead-destination case)."""

    def __init__(self, taken):
        self.taken = taken

    def __eq__(self, other):
        return other not in self.taken

    def __ne__(self, other):
        return other in self.taken


def _instr_matches(i: Instr, ti: Instr, m_use: dict, m_def: dict, live_succ: frozenset) -> tuple[bool, str]:
    def use(r):
        loc = m_use.get(r)
        if not isinstance(loc, str):
            return None
        return loc

    def targets(r):
        # a dead destination may land in any register that holds no live value
        if r not in live_succ:
            return _AnyFree({loc for x, loc in m_def.items() if x != r and x in live_succ})
        loc = m_def.get(r)
        if not isinstance(loc, str):
            return None
        return loc

    match (i, ti):
        case (Exit(), Exit()) | (Nop(), Nop()) | (Sfence(), Sfence()):
            return True, ""
        case (Asgn(dst=d, lhs=a, op=op, rhs=b), Asgn(dst=td, lhs=ta, op=top, rhs=tb)):
            if op != top or use(a) != ta or use(b) != tb or targets(d) != td:
                return False, f"assign mismatch under relocation"
        case (Load(dst=d, var=v, addr=adr), Load(dst=td, var=tv, addr=tadr)):
            ea = adr if isinstance(adr, int) else use(adr)
            if v != tv or ea != tadr or targets(d) != td:
                return False, "load mismatch under relocation"
        case (Store(var=v, addr=adr, src=c), Store(var=tv, addr=tadr, src=tc)):
            ea = adr if isinstance(adr, int) else use(adr)
            if v != tv or ea != tadr or use(c) != tc:
                return False, "store mismatch under relocation"
        case (If(cond=c), If(cond=tc)):
            if use(c) != tc:
                return False, "branch condition mismatch under relocation"
        case (Slh(reg=r), Slh(reg=tr)):
            if use(r) != tr or targets(r) != tr:
                return False, "slh register mismatch under relocation"
        case (Move(dst=d, src=s), Move(dst=td, src=ts)):
            if use(s) != ts or targets(d) != td:
                return False, "move mismatch under relocation"
        case _:
            return False, f"instruction kinds differ: {type(i).__name__} vs {type(ti).__name__}"
    return True, ""


# --- allocator ----------------------------------------------------------------


class AllocationInfeasible(ValueError):
    pass


def _next_use(p: Program) -> dict[Pc, dict[Reg, int]]:
    INF = 1 << 30
    regs = p.registers
    dist = {pc: {r: INF for r in regs} for pc in p.instrs}
    for _ in range(len(p.instrs) + 1):
        changed = False
        for pc in p.pcs():
            i = p.instrs[pc]
            u, _ = uses_defs(i)
            for r in regs:
                if r in u:
                    d = 0
                else:
                    succ = [dist[s][r] for s in i.successors()]
                    d = min((x + 1 for x in succ), default=INF)
                    d = min(d, INF)
                if d < dist[pc][r]:
                    dist[pc][r] = d
                    changed = True
        if not changed:
            break
    return dist


def _reverse_postorder(p: Program) -> list[Pc]:
    seen, order = set(), []

    def dfs(pc: Pc):
        seen.add(pc)
        for s in p.instrs[pc].successors():
            if s not in seen:
                dfs(s)
        order.append(pc)

    dfs(p.entry)
    for pc in p.pcs():  # unreachable code still needs a slot in the order
        if pc not in seen:
            dfs(pc)
    return list(reversed(order))


def allocate(p: Program, k: int) -> RAWitness:
    """Greedy allocation with k hardware registers; spills furthest next use.

    Hardware names reuse the first k source registers (identity relocation for
    small programs) padded with fresh names.  Excess live-at-entry registers
    start on the stack; repairs between instructions become shuffle chains.
    """
    if k < 2:
        raise AllocationInfeasible("need at least 2 hardware registers")
    if p.memvar(STACK_VAR) is not None:
        raise AllocationInfeasible("source already declares stk")
    sol = liveness(p, cells_fact(p))
    ef = cells_fact(p)
    lb = {pc: frozenset(r for r in live_before(p, sol, pc, ef) if isinstance(r, str)) for pc in p.instrs}
    la = {pc: frozenset(r for r in sol[pc] if isinstance(r, str)) for pc in p.instrs}
    nxt = _next_use(p)

    hw = sorted(p.registers)[:k]
    n = 0
    while len(hw) < k:
        cand = f"h{n}"
        n += 1
        if cand not in p.registers:
            hw.append(cand)

    slot_of: dict[Reg, int] = {}

    def slot(r: Reg):
        if r not in slot_of:
            slot_of[r] = len(slot_of)
        return (STACK_VAR, slot_of[r])

    def free_hw(m: dict) -> list[Reg]:
        used = set(m.values())
        return [h for h in hw if h not in used]

    def plan(pc: Pc, cand: dict | None) -> tuple[dict, dict]:
        """Map at the instruction and map after it (def placed, dead dropped)."""
        i = p.instrs[pc]
        uses, defs = uses_defs(i)
        live = lb[pc]
        m = {r: cand[r] for r in sorted(live) if cand and r in cand} if cand else {}
        for r in sorted(live - set(m)):
            fr = free_hw(m)
            m[r] = fr[0] if fr else slot(r)
        for u in sorted(uses & live):
            if isinstance(m[u], str):
                continue
            fr = free_hw(m)
            if not fr:
                victims = sorted(
                    (r for r in live - uses if isinstance(m[r], str)),
                    key=lambda r: (-nxt[pc][r], r),
                )
                if not victims:
                    raise AllocationInfeasible(f"{pc}: cannot place use {u} with k={k}")
                m[victims[0]] = slot(victims[0])
                fr = free_hw(m)
            m[u] = fr[0]
        out = {r: m[r] for r in sorted(la[pc] - defs) if r in m}
        for d in sorted(defs):
            if isinstance(i, Slh):
                out[d] = m[d]  # slh leaves the location unchanged
                continue
            fr = [h for h in hw if h not in out.values()]
            while not fr:
                victims = sorted(
                    (r for r in la[pc] - defs - uses if isinstance(out.get(r), str)),
                    key=lambda r: (-nxt[pc][r], r),
                )
                if not victims:
                    raise AllocationInfeasible(f"{pc}: cannot place def {d} with k={k}")
                v = victims[0]
                out[v] = slot(v)
                m[v] = slot(v)
                fr = [h for h in hw if h not in out.values()]
            out[d] = fr[0]
        return m, out

    rpo = _reverse_postorder(p)
    maps_in: dict[Pc, dict] = {}
    maps_out: dict[Pc, dict] = {}
    cand_in: dict[Pc, dict] = {}
    for pc in rpo:
        m_in, m_out = plan(pc, cand_in.get(pc))
        maps_in[pc], maps_out[pc] = m_in, m_out
        for s in p.instrs[pc].successors():
            cand_in.setdefault(s, m_out)

    # chain repairs per edge, then assemble the target program
    instrs: dict[Pc, Instr] = {}
    rho: dict[Pc, dict] = {}
    phi = {pc: pc for pc in p.instrs}

    def build_chain(edge: tuple[Pc, int], cur0: dict, goal: dict, regs) -> list[tuple[Instr, dict]]:
        cur = {r: cur0[r] for r in regs}
        ops: list[tuple[Instr, dict]] = []

        def emit(r: Reg, dst):
            src_loc = cur[r]
            snapshot = dict(cur)
            if is_slot(src_loc) and not is_slot(dst):
                op = Fill(dst, src_loc[1], "")
            elif not is_slot(src_loc) and is_slot(dst):
                op = Spill(dst[1], src_loc, "")
            elif not is_slot(src_loc) and not is_slot(dst):
                op = Move(dst, src_loc, "")
            else:
                raise AssertionError("slot-to-slot transfers never scheduled")
            ops.append((op, snapshot))
            cur[r] = dst

        pending = {r for r in regs if cur[r] != goal[r]}
        while pending:
            progress = False
            for r in sorted(pending):
                occ = {loc for x, loc in cur.items() if x != r}
                if goal[r] not in occ:
                    emit(r, goal[r])
                    pending.discard(r)
                    progress = True
                    break
            if progress:
                continue
            # all-register cycle; park the smallest register in its slot
            r0 = min(r for r in pending if not is_slot(cur[r]))
            emit(r0, slot(r0))
        return ops

    for pc in rpo:
        i = p.instrs[pc]
        m_in, m_out = maps_in[pc], maps_out[pc]
        succs = list(i.successors())
        new_succs = []
        for idx, s in enumerate(succs):
            regs = sorted(lb[s])
            ops = build_chain((pc, idx), m_out, maps_in[s], regs)
            if not ops:
                new_succs.append(s)
                continue
            labels = [f"{pc}.{idx}.{j}" for j in range(len(ops))]
            for j, (op, snapshot) in enumerate(ops):
                nxt_label = labels[j + 1] if j + 1 < len(ops) else s
                instrs[labels[j]] = _with_succ(op, nxt_label)
                rho[labels[j]] = snapshot
            new_succs.append(labels[0])
        instrs[pc] = _rename_instr(i, m_in, m_out, new_succs)
        rho[pc] = dict(m_in)

    stk_size = max(1, len(slot_of))
    memvars = list(p.memvars) + [MemVar(STACK_VAR, stk_size, "low")]
    t = Program(p.entry, instrs, memvars)
    return RAWitness(p, t, phi, rho)


def _with_succ(op: Instr, succ: Pc) -> Instr:
    match op:
        case Move(dst=d, src=s):
            return Move(d, s, succ)
        case Fill(dst=d, slot=sl):
            return Fill(d, sl, succ)
        case Spill(slot=sl, src=s):
            return Spill(sl, s, succ)
    raise AssertionError


def _rename_instr(i: Instr, m_in: dict, m_out: dict, succs: list[Pc]) -> Instr:
    def u(r):
        loc = m_in[r]
        if not isinstance(loc, str):
            raise AllocationInfeasible(f"use {r} not in a register")
        return loc

    def d(r):
        loc = m_out[r]
        if not isinstance(loc, str):
            raise AllocationInfeasible(f"def {r} not in a register")
        return loc

    match i:
        case Exit():
            return Exit()
        case Nop():
            return Nop(succs[0])
        case Asgn(dst=dst, lhs=a, op=op, rhs=b):
            return Asgn(d(dst), u(a), op, u(b), succs[0])
        case Load(dst=dst, var=v, addr=adr):
            return Load(d(dst), v, adr if isinstance(adr, int) else u(adr), succs[0])
        case Store(var=v, addr=adr, src=c):
            return Store(v, adr if isinstance(adr, int) else u(adr), u(c), succs[0])
        case If(cond=c):
            return If(u(c), succs[0], succs[1])
        case Sfence():
            return Sfence(succs[0])
        case Slh(reg=r):
            return Slh(u(r), succs[0])
        case Move(dst=dst, src=s):
            return Move(d(dst), u(s), succs[0])
    raise AllocationInfeasible(f"cannot allocate instruction {type(i).__name__}")


# --- witness text format --------------------------------------------------------


def serialize_ra_witness(w: RAWitness) -> str:
    lines = []
    for s_pc in sorted(w.phi, key=pc_key):
        lines.append(f"phi: {s_pc} -> {w.phi[s_pc]}")
    for t_pc in sorted(w.rho, key=pc_key):
        m = w.rho[t_pc]
        if not m:
            lines.append(f"rho {t_pc}:")
        for r in sorted(m):
            lines.append(f"rho {t_pc}: {r} -> {fmt_loc(m[r])}")
    return "\n".join(lines) + "\n"


def parse_ra_witness(text: str, source: Program, target: Program) -> RAWitness:
    """Parse phi/rho sections.

    A target pc with no rho section inherits its predecessor's map (the entry
    defaults to the identity on source registers), so a file with no rho
    sections at all means identity relocation everywhere.
    """
    import re

    phi: dict[Pc, Pc] = {}
    explicit: dict[Pc, dict] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        # comments start at a whitespace-preceded `#`; `stk#0` keeps its marker
        line = re.split(r"(?:^|\s)#", raw, maxsplit=1)[0].strip()
        if not line:
            continue
        if line.startswith("phi:"):
            parts = line[4:].split("->")
            if len(parts) != 2:
                raise ValueError(f"line {lineno}: bad phi entry")
            s_pc, t_pc = parts[0].strip(), parts[1].strip()
            if s_pc not in source.instrs:
                raise ValueError(f"line {lineno}: unknown source pc {s_pc}")
            if t_pc not in target.instrs:
                raise ValueError(f"line {lineno}: unknown target pc {t_pc}")
            phi[s_pc] = t_pc
        elif line.startswith("rho "):
            head, _, rest = line[4:].partition(":")
            t_pc = head.strip()
            if t_pc not in target.instrs:
                raise ValueError(f"line {lineno}: unknown target pc {t_pc}")
            explicit.setdefault(t_pc, {})
            rest = rest.strip()
            if not rest:
                continue
            parts = rest.split("->")
            if len(parts) != 2 or not parts[0].strip() or not parts[1].strip():
                raise ValueError(f"line {lineno}: malformed relocation entry")
            r, loc_s = parts[0].strip(), parts[1].strip()
            if loc_s.startswith(f"{STACK_VAR}#"):
                loc = (STACK_VAR, int(loc_s[len(STACK_VAR) + 1:]))
            else:
                loc = loc_s
            explicit[t_pc][r] = loc
        else:
            raise ValueError(f"line {lineno}: cannot parse {line!r}")

    identity = {r: r for r in source.registers}
    rho: dict[Pc, dict] = {}
    # propagate maps along target control flow; explicit sections win
    order: list[Pc] = []
    seen = set()
    todo = [target.entry]
    while todo:
        pc = todo.pop(0)
        if pc in seen:
            continue
        seen.add(pc)
        order.append(pc)
        todo.extend(target.instrs[pc].successors())
    preds: dict[Pc, list[Pc]] = {pc: [] for pc in target.instrs}
    for pc in target.pcs():
        for s in target.instrs[pc].successors():
            preds[s].append(pc)
    for pc in order:
        if pc in explicit:
            rho[pc] = dict(explicit[pc])
            continue
        cand = [rho[q] for q in preds[pc] if q in rho]
        if not cand:
            rho[pc] = dict(identity)
        else:
            first = cand[0]
            if any(c != first for c in cand[1:]):
                raise ValueError(f"rho for {pc} inherited from disagreeing predecessors; add an explicit section")
            rho[pc] = dict(first)
    for pc in target.pcs():
        rho.setdefault(pc, dict(explicit.get(pc, identity)))
    return RAWitness(source, target, phi, rho)
