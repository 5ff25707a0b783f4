"""Poison-tracking product of a source program and its register allocation.

The product executes source and target side by side and tracks, per
speculation level, a poison type: for every source register and every memory
cell outside the spill frame, whether the two runs agree on its value.

  H (healthy)          equal up to relocation
  W (weakly poisoned)  the target holds 0 (result of a speculative slh)
  P (poisoned)         no guarantee

Poison is born when a speculating unsafe access in the target hits the spill
frame `stk`: the source cannot touch a relocated register through memory, so
the runs diverge on the spilled register (loads poison the destination;
stores poison the slot's owner and the cell the source wrote instead).
Transitions that would leak a poisoned value (branches on non-healthy
registers, accesses through poisoned address registers) simply do not exist:
the product is stuck there.

The static analysis runs the same updates as a forward flow problem over the
product's program points: matched pairs (pc, phi(pc)) and shuffle pairs
(pc, s) for shuffle pcs s on the chain into phi(pc).  The store transfer
joins the stored register's poison onto untouched memory rather than
overwriting it, so every dynamic update stays below the static one.  A
witness is poison-typable when the least solution keeps every leaking
operand within bounds: address registers at most weakly poisoned, branch
conditions healthy.  `fix_ra` repairs failures by splicing `slh` (addresses)
or `sfence` (branches) at the end of the shuffle sequence in front of the
offending target pc until the witness is typable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import dataflow
from .ir import (
    Asgn,
    Exit,
    Fill,
    If,
    Instr,
    Load,
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
    pc_key,
)
from .liveness import cells_fact, liveness
from .regalloc import RAWitness, Structure, analyze_structure, is_slot, rho_live, validate_ra
from .semantics import (
    DEFAULT_WIDTH,
    D_IF,
    D_RB,
    D_SPEC,
    D_STEP,
    Directive,
    Leakage,
    SpecState,
    State,
    d_load,
    d_store,
    step_spec,
)

BOT, H, W, P = 0, 1, 2, 3
PV_NAMES = {BOT: "_", H: "H", W: "W", P: "P"}

_LEQ = {
    (BOT, BOT), (BOT, H), (BOT, W), (BOT, P),
    (H, H), (H, P), (W, W), (W, P), (P, P),
}


def pv_leq(a: int, b: int) -> bool:
    return (a, b) in _LEQ


def pv_join(a: int, b: int) -> int:
    if pv_leq(a, b):
        return b
    if pv_leq(b, a):
        return a
    return P


Key = "Reg | tuple[str, int]"
PoisonType = dict  # Key -> poison value, total over the witness domain


def poison_domain(w: RAWitness) -> list:
    regs = sorted(w.source.registers)
    cells = [c for c in w.source.cells() if c[0] != STACK_VAR]
    return regs + cells


def pt_const(domain, pv: int) -> PoisonType:
    return {k: pv for k in domain}


def pt_leq(a: PoisonType, b: PoisonType) -> bool:
    return all(pv_leq(a[k], b[k]) for k in a)


def pt_join(a: PoisonType, b: PoisonType) -> PoisonType:
    return {k: pv_join(a[k], b[k]) for k in a}


@dataclass
class ProductState:
    src: SpecState
    tgt: SpecState
    poisons: tuple[PoisonType, ...]

    @property
    def depth(self) -> int:
        return len(self.src)


@dataclass
class ProductTransition:
    tgt_dir: Directive
    tgt_leak: Leakage
    src_dir: Directive | None  # None on shuffle steps, where only the target moves
    src_leak: Leakage | None
    end: ProductState
    rule: str


class Product:
    """Product semantics and pairing structure for a validated witness."""

    def __init__(self, w: RAWitness, width: int = DEFAULT_WIDTH):
        self.w = w
        self.width = width
        self.sol = liveness(w.source, cells_fact(w.source))
        self.st: Structure = analyze_structure(w)
        if self.st.errors:
            raise ValueError(f"witness structure invalid: {self.st.errors[0]}")
        self.rho = rho_live(w, self.st, self.sol)
        self.domain = poison_domain(w)

    # -- state plumbing ---------------------------------------------------

    def source_pc_for(self, t_pc: Pc) -> Pc:
        if t_pc in self.st.matched:
            return self.st.matched[t_pc]
        return self.st.owner[t_pc]

    def is_matched(self, s_pc: Pc, t_pc: Pc) -> bool:
        return self.w.phi.get(s_pc) == t_pc

    def eval_loc(self, s: State, loc) -> int:
        return s.cell(*loc) if is_slot(loc) else s.reg(loc)

    def level_agrees(self, src: State, tgt: State, pt: PoisonType) -> bool:
        m = self.rho.get(tgt.pc, {})
        for k in self.domain:
            pv = pt[k]
            if pv not in (H, W):
                continue
            if isinstance(k, str):
                if k not in m:
                    continue  # dead register, no target location to compare
                got = self.eval_loc(tgt, m[k])
                want = src.reg(k) if pv == H else 0
            else:
                got = tgt.cell(*k)
                want = src.cell(*k) if pv == H else 0
            if got != want:
                return False
        return True

    def well_formed(self, ps: ProductState) -> bool:
        if not (len(ps.src) == len(ps.tgt) == len(ps.poisons) >= 1):
            return False
        for i, (s, t) in enumerate(zip(ps.src, ps.tgt)):
            top = i == len(ps.src) - 1
            if self.is_matched(s.pc, t.pc):
                pass
            elif top and t.pc in self.st.owner and self.st.owner[t.pc] == s.pc:
                pass  # shuffling toward the next matched pc
            else:
                return False
            if not self.level_agrees(s, t, ps.poisons[i]):
                return False
        return True

    def initial_source_state(self, tgt0: State) -> State:
        """Initial-state mapping: read each register through the entry relocation."""
        m = self.rho.get(self.w.target.entry, {})
        regs = {}
        for r in self.w.source.registers:
            regs[r] = self.eval_loc(tgt0, m[r]) if r in m else tgt0.reg(r)
        mem = {c: v for c, v in tgt0.mem if c[0] != STACK_VAR}
        return State.make(self.w.source.entry, regs, mem)

    def initial_product(self, tgt0: State) -> ProductState:
        src0 = self.initial_source_state(tgt0)
        return ProductState((src0,), (tgt0,), (pt_const(self.domain, H),))

    # -- dynamic steps ----------------------------------------------------

    def _mk(self, ps, src_step, tgt_step, pts, tgt_dir, src_dir, rule) -> ProductTransition:
        (nsrc, sleak) = src_step if src_step else (ps.src, None)
        (ntgt, tleak) = tgt_step
        end = ProductState(nsrc, ntgt, pts)
        sdir = src_dir if src_step else None
        return ProductTransition(tgt_dir, tleak, sdir, sleak, end, rule)

    def transitions(self, ps: ProductState) -> list[ProductTransition]:
        """All enabled product transitions (every unsafe-target choice)."""
        out = []
        for d, canonical_only in self._target_options(ps):
            out.extend(self._steps_for(ps, d, canonical_only=False))
        return out

    def replay_target_step(self, ps: ProductState, d: Directive) -> ProductTransition | None:
        """The canonical replay of one enabled target directive, or None if
        the product is stuck on it (a poisoned guard)."""
        res = self._steps_for(ps, d, canonical_only=True)
        return res[0] if res else None

    def _target_options(self, ps: ProductState):
        from .semantics import enabled_directives

        for d in enabled_directives(self.w.target, ps.tgt, self.width):
            yield d, False

    def _steps_for(self, ps: ProductState, d: Directive, canonical_only: bool) -> list[ProductTransition]:
        w, width = self.w, self.width
        tgt_step = step_spec(w.target, ps.tgt, d, width)
        if tgt_step is None:
            return []
        pts = ps.poisons
        pt = pts[-1]
        speculating = ps.depth >= 2

        if d == D_RB:
            if ps.depth < 2:
                return []
            src_step = step_spec(w.source, ps.src, D_RB, width)
            if src_step is None:
                return []
            return [self._mk(ps, src_step, tgt_step, pts[:-1], d, D_RB, "rollback")]

        t_pc = ps.tgt[-1].pc
        s_top = ps.src[-1]

        if t_pc in self.st.owner:  # shuffling state: the source stutters
            ti = w.target.instrs[t_pc]
            if isinstance(ti, Slh):
                owner = [r for r, loc in self.rho[t_pc].items() if loc == ti.reg]
                pt2 = dict(pt)
                if owner:
                    a = sorted(owner)[0]
                    pt2[a] = pt[a] if not speculating else W
                return [self._mk(ps, None, tgt_step, pts[:-1] + (pt2,), d, None, "shuffle-slh")]
            rule = {Move: "shuffle-move", Fill: "shuffle-fill", Spill: "shuffle-spill", Sfence: "shuffle-sfence"}[type(ti)]
            return [self._mk(ps, None, tgt_step, pts, d, None, rule)]

        # matched pair
        i = w.source.instrs[s_top.pc]
        match i:
            case Nop():
                src_step = step_spec(w.source, ps.src, D_STEP, width)
                return [self._mk(ps, src_step, tgt_step, pts, d, D_STEP, "nop")]
            case Sfence():
                src_step = step_spec(w.source, ps.src, D_STEP, width)
                if src_step is None:
                    return []
                return [self._mk(ps, src_step, tgt_step, pts, d, D_STEP, "sfence")]
            case Slh(reg=r):
                src_step = step_spec(w.source, ps.src, D_STEP, width)
                pt2 = dict(pt)
                pt2[r] = pt[r] if not speculating else H
                return [self._mk(ps, src_step, tgt_step, pts[:-1] + (pt2,), d, D_STEP, "slh")]
            case Asgn(dst=dst, lhs=a, rhs=b):
                pt2 = dict(pt)
                pt2[dst] = H if (pt[a] == H and pt[b] == H) else P
                src_step = step_spec(w.source, ps.src, D_STEP, width)
                return [self._mk(ps, src_step, tgt_step, pts[:-1] + (pt2,), d, D_STEP, "asgn")]
            case Move(dst=dst, src=sr):
                pt2 = dict(pt)
                pt2[dst] = pt[sr]
                src_step = step_spec(w.source, ps.src, D_STEP, width)
                return [self._mk(ps, src_step, tgt_step, pts[:-1] + (pt2,), d, D_STEP, "move")]
            case If(cond=c):
                if pt[c] != H:
                    return []  # stuck: non-healthy branch condition
                sd = D_IF if d == D_IF else D_SPEC
                src_step = step_spec(w.source, ps.src, sd, width)
                if src_step is None:
                    return []
                if d == D_SPEC:
                    return [self._mk(ps, src_step, tgt_step, pts + (dict(pt),), d, sd, "spec")]
                return [self._mk(ps, src_step, tgt_step, pts, d, sd, "branch")]
            case Load(dst=dst, var=x, addr=adr):
                return self._load_steps(ps, i, d, tgt_step, canonical_only)
            case Store(var=x, addr=adr, src=c):
                return self._store_steps(ps, i, d, tgt_step, canonical_only)
        return []

    def _load_steps(self, ps, i: Load, d, tgt_step, canonical_only) -> list[ProductTransition]:
        w, width = self.w, self.width
        pts, pt = ps.poisons, ps.poisons[-1]
        s_top = ps.src[-1]
        x, dst = i.var, i.dst
        if isinstance(i.addr, int):
            if d != D_STEP:
                return []
            src_step = step_spec(w.source, ps.src, D_STEP, width)
            pt2 = dict(pt)
            pt2[dst] = pt[(x, i.addr)]
            return [self._mk(ps, src_step, tgt_step, pts[:-1] + (pt2,), d, D_STEP, "load-const")]
        pb = pt[i.addr]
        if pb == P or pb == BOT:
            return []
        sval = s_top.reg(i.addr)
        in_bounds = 0 <= sval < w.source.memvar(x).size
        out = []
        if pb == H:
            if d == D_STEP:
                if not in_bounds:
                    return []
                src_step = step_spec(w.source, ps.src, D_STEP, width)
                pt2 = dict(pt)
                pt2[dst] = pt[(x, sval)]
                return [self._mk(ps, src_step, tgt_step, pts[:-1] + (pt2,), d, D_STEP, "load-healthy-safe")]
            if d.kind != "load":
                return []
            if d.var != STACK_VAR:
                sd = d_load(d.var, d.off)
                src_step = step_spec(w.source, ps.src, sd, width)
                if src_step is None:
                    return []
                pt2 = dict(pt)
                pt2[dst] = pt[(d.var, d.off)]
                return [self._mk(ps, src_step, tgt_step, pts[:-1] + (pt2,), d, sd, "load-healthy-unsafe")]
            # target reads the spill frame: the source loads elsewhere, dst is lost
            pt2 = dict(pt)
            pt2[dst] = P
            choices = [(x, 0)] if canonical_only else [c for c in w.source.cells()]
            for var, off in choices:
                sd = d_load(var, off)
                src_step = step_spec(w.source, ps.src, sd, width)
                if src_step is not None:
                    out.append(self._mk(ps, src_step, tgt_step, pts[:-1] + (dict(pt2),), d, sd, "load-poison-intro"))
                    if canonical_only:
                        break
            return out
        # weakly poisoned address: the target reads offset 0
        if d != D_STEP:
            return []
        pt2 = dict(pt)
        pt2[dst] = P
        if in_bounds:
            src_step = step_spec(w.source, ps.src, D_STEP, width)
            return [self._mk(ps, src_step, tgt_step, pts[:-1] + (pt2,), d, D_STEP, "load-weak-safe")]
        choices = [(x, 0)] if canonical_only else [(x, off) for off in range(w.source.memvar(x).size)]
        for var, off in choices:
            sd = d_load(var, off)
            src_step = step_spec(w.source, ps.src, sd, width)
            if src_step is not None:
                out.append(self._mk(ps, src_step, tgt_step, pts[:-1] + (dict(pt2),), d, sd, "load-weak-unsafe"))
                if canonical_only:
                    break
        return out

    def _store_steps(self, ps, i: Store, d, tgt_step, canonical_only) -> list[ProductTransition]:
        w, width = self.w, self.width
        pts, pt = ps.poisons, ps.poisons[-1]
        s_top = ps.src[-1]
        x, c = i.var, i.src
        if isinstance(i.addr, int):
            if d != D_STEP:
                return []
            src_step = step_spec(w.source, ps.src, D_STEP, width)
            pt2 = dict(pt)
            pt2[(x, i.addr)] = pt[c]
            return [self._mk(ps, src_step, tgt_step, pts[:-1] + (pt2,), d, D_STEP, "store-const")]
        pb = pt[i.addr]
        if pb == P or pb == BOT:
            return []
        sval = s_top.reg(i.addr)
        in_bounds = 0 <= sval < w.source.memvar(x).size
        out = []
        if pb == H:
            if d == D_STEP:
                if not in_bounds:
                    return []
                src_step = step_spec(w.source, ps.src, D_STEP, width)
                pt2 = dict(pt)
                pt2[(x, sval)] = pt[c]
                return [self._mk(ps, src_step, tgt_step, pts[:-1] + (pt2,), d, D_STEP, "store-healthy-safe")]
            if d.kind != "store":
                return []
            if d.var != STACK_VAR:
                sd = d_store(d.var, d.off)
                src_step = step_spec(w.source, ps.src, sd, width)
                if src_step is None:
                    return []
                pt2 = dict(pt)
                pt2[(d.var, d.off)] = pt[c]
                return [self._mk(ps, src_step, tgt_step, pts[:-1] + (pt2,), d, sd, "store-healthy-unsafe")]
            # target overwrites a spill slot: poison its owner, store to x instead
            tgt_next_pc = tgt_step[0][-1].pc
            owners = [r for r, loc in self.rho.get(tgt_next_pc, {}).items() if loc == (STACK_VAR, d.off)]
            choices = [(x, 0)] if canonical_only else [(x, off) for off in range(w.source.memvar(x).size)]
            for var, off in choices:
                sd = d_store(var, off)
                src_step = step_spec(w.source, ps.src, sd, width)
                if src_step is None:
                    continue
                pt2 = dict(pt)
                for r in owners:
                    pt2[r] = P
                pt2[(var, off)] = P
                out.append(self._mk(ps, src_step, tgt_step, pts[:-1] + (pt2,), d, sd, "store-poison-intro"))
                if canonical_only:
                    break
            return out
        # weakly poisoned address: the target writes offset 0
        if d != D_STEP:
            return []
        if in_bounds:
            src_step = step_spec(w.source, ps.src, D_STEP, width)
            pt2 = dict(pt)
            pt2[(x, sval)] = P
            pt2[(x, 0)] = P
            return [self._mk(ps, src_step, tgt_step, pts[:-1] + (pt2,), d, D_STEP, "store-weak-safe")]
        choices = [(x, 0)] if canonical_only else [(x, off) for off in range(w.source.memvar(x).size)]
        for var, off in choices:
            sd = d_store(var, off)
            src_step = step_spec(w.source, ps.src, sd, width)
            if src_step is None:
                continue
            pt2 = dict(pt)
            pt2[(x, off)] = P
            pt2[(x, 0)] = P
            out.append(self._mk(ps, src_step, tgt_step, pts[:-1] + (pt2,), d, sd, "store-weak-unsafe"))
            if canonical_only:
                break
        return out


# --- static analysis -----------------------------------------------------------


@dataclass
class StaticPoison:
    assignment: dict[tuple[Pc, Pc], PoisonType]
    nodes: list[tuple[Pc, Pc]]
    edges: list[tuple[tuple[Pc, Pc], tuple[Pc, Pc]]]
    domain: list = field(default_factory=list)

    def stack_for(self, src: SpecState, tgt: SpecState) -> tuple[PoisonType, ...]:
        """Per-level static poison stack; the bottom level is forced healthy."""
        out = []
        for idx, (s, t) in enumerate(zip(src, tgt)):
            if idx == 0:
                out.append(pt_const(self.domain, H))
            else:
                out.append(self.assignment.get((s.pc, t.pc), pt_const(self.domain, P)))
        return tuple(out)


def prod_pcs(w: RAWitness, st: Structure) -> tuple[list, list]:
    nodes: list[tuple[Pc, Pc]] = []
    edges: list[tuple] = []
    for s_pc in w.source.pcs():
        nodes.append((s_pc, w.phi[s_pc]))
    for s_pc in w.source.pcs():
        t_pc = w.phi[s_pc]
        for idx, s_next in enumerate(w.source.instrs[s_pc].successors()):
            chain = st.chains[(s_pc, idx)]
            path = [(s_next, c) for c in chain] + [(s_next, w.phi[s_next])]
            prev = (s_pc, t_pc)
            for node in path:
                if node not in nodes:
                    nodes.append(node)
                if (prev, node) not in edges:
                    edges.append((prev, node))
                prev = node
    return nodes, edges


def _transfer_matched(w: RAWitness, domain, i: Instr, pt: PoisonType) -> PoisonType:
    match i:
        case Asgn(dst=d, lhs=a, rhs=b):
            out = dict(pt)
            out[d] = H if (pt[a] == H and pt[b] == H) else P
            return out
        case Load(dst=d, var=x, addr=adr):
            out = dict(pt)
            out[d] = pt[(x, adr)] if isinstance(adr, int) else P
            return out
        case Store(var=x, addr=adr, src=c):
            if isinstance(adr, int):
                out = dict(pt)
                out[(x, adr)] = pt[c]
                return out
            out = {}
            for k in domain:
                if isinstance(k, str) or k[0] == x:
                    out[k] = P
                else:
                    out[k] = pv_join(pt[k], pt[c])
            return out
        case If(cond=c):
            return dict(pt) if pt[c] == H else pt_const(domain, P)
        case Sfence():
            return pt_const(domain, H)
        case Slh(reg=r):
            out = dict(pt)
            out[r] = H
            return out
        case Move(dst=d, src=s):
            out = dict(pt)
            out[d] = pt[s]
            return out
    return dict(pt)


def _transfer_shuffle(w: RAWitness, domain, rho: dict, t_pc: Pc, i: Instr, pt: PoisonType) -> PoisonType:
    match i:
        case Sfence():
            return pt_const(domain, H)
        case Slh(reg=a):
            owner = sorted(r for r, loc in rho.get(t_pc, {}).items() if loc == a)
            if not owner:
                return dict(pt)
            out = dict(pt)
            out[owner[0]] = W
            return out
    return dict(pt)


def poison_analysis(w: RAWitness, width: int = DEFAULT_WIDTH) -> StaticPoison:
    """Least forward solution over the product program points, healthy at entry."""
    prod = Product(w, width)
    st = prod.st
    nodes, edges = prod_pcs(w, st)
    domain = prod.domain
    bottom = pt_const(domain, BOT)

    def transfer(node, pt):
        if pt == bottom:
            return bottom
        s_pc, t_pc = node
        if w.phi.get(s_pc) == t_pc:
            return _transfer_matched(w, domain, w.source.instrs[s_pc], pt)
        return _transfer_shuffle(w, domain, prod.rho, t_pc, w.target.instrs[t_pc], pt)

    lat = dataflow.Lattice(bottom, pt_join, pt_leq)
    prob = dataflow.FlowProblem(
        nodes=nodes,
        edges=edges,
        direction="forward",
        transfer=transfer,
        init=pt_const(domain, H),
        init_nodes=[(w.source.entry, w.target.entry)],
        lattice=lat,
        height_hint=3 * max(1, len(domain)),
    )
    sol = dataflow.solve(prob)
    return StaticPoison(sol, nodes, edges, domain)


@dataclass(frozen=True)
class TypabilityViolation:
    src_pc: Pc
    tgt_pc: Pc
    reg: Reg
    kind: str  # address | branch
    value: int

    def __str__(self):
        need = "at most W" if self.kind == "address" else "H"
        return f"({self.src_pc},{self.tgt_pc}): {self.kind} register {self.reg} is {PV_NAMES[self.value]}, needs {need}"


def check_poison_typable(w: RAWitness, sp: StaticPoison) -> list[TypabilityViolation]:
    """Leakage guards on the static solution: addresses <= W, branches = H."""
    out = []
    for s_pc in w.source.pcs():
        t_pc = w.phi[s_pc]
        pt = sp.assignment[(s_pc, t_pc)]
        i = w.source.instrs[s_pc]
        match i:
            case Load(addr=str(b)) | Store(addr=str(b)):
                if pt[b] == P:
                    out.append(TypabilityViolation(s_pc, t_pc, b, "address", pt[b]))
            case If(cond=c):
                if pt[c] in (W, P):
                    out.append(TypabilityViolation(s_pc, t_pc, c, "branch", pt[c]))
    return sorted(out, key=lambda v: (v.tgt_pc, v.reg))


@dataclass
class FixInsertion:
    pc: Pc
    kind: str  # sfence | slh
    before: Pc
    violation: TypabilityViolation


@dataclass
class FixReport:
    insertions: list[FixInsertion] = field(default_factory=list)
    iterations: int = 0


def fix_ra(w: RAWitness, width: int = DEFAULT_WIDTH) -> tuple[RAWitness, FixReport]:
    """Insert fences until poison-typable.

    One violation is fixed per round, in (target pc, register) order: `slh` on
    the relocated register when weak poison suffices (addresses), `sfence`
    when health is required (branches).  The new pc is spliced in front of the
    violating target pc, inheriting its relocation.
    """
    report = FixReport()
    cur = w
    cap = 2 * len(w.target.instrs) * max(1, len(w.source.registers)) + 1
    counter = 0
    prev_key = None
    for it in range(cap):
        sp = poison_analysis(cur, width)
        violations = check_poison_typable(cur, sp)
        report.iterations = it
        if not violations:
            return cur, report
        v = violations[0]
        keys = {(x.src_pc, x.tgt_pc, x.reg, x.kind) for x in violations}
        # an slh does not discharge a constraint whose node also joins healthy
        # inflow (H and W join to P); escalate to a fence in that case
        escalate = prev_key in keys
        if escalate:
            v = next(x for x in violations if (x.src_pc, x.tgt_pc, x.reg, x.kind) == prev_key)
        prev_key = (v.src_pc, v.tgt_pc, v.reg, v.kind)
        while f"fx{counter}" in cur.target.instrs:
            counter += 1
        fresh = f"fx{counter}"
        if v.kind == "branch" or escalate:
            new_instr = Sfence(v.tgt_pc)
            kind = "sfence"
        else:
            hw = cur.rho[v.tgt_pc][v.reg]
            if is_slot(hw):
                raise RuntimeError(f"cannot slh a stack-resident address register {v.reg}")
            new_instr = Slh(hw, v.tgt_pc)
            kind = "slh"
        instrs = {}
        for pc, i in cur.target.instrs.items():
            instrs[pc] = _redirect(i, v.tgt_pc, fresh)
        instrs[fresh] = new_instr
        rho = {pc: dict(m) for pc, m in cur.rho.items()}
        rho[fresh] = dict(cur.rho.get(v.tgt_pc, {}))
        target = Program(cur.target.entry, instrs, list(cur.target.memvars))
        cur = RAWitness(cur.source, target, dict(cur.phi), rho)
        report.insertions.append(FixInsertion(fresh, kind, v.tgt_pc, v))
        bad = validate_ra(cur)
        if bad:
            raise RuntimeError(f"fix produced an invalid witness: {bad[0]}")
    raise RuntimeError(f"fix iteration cap {cap} exceeded; witness still not typable")


def _redirect(i: Instr, old: Pc, new: Pc) -> Instr:
    def r(pc):
        return new if pc == old else pc

    match i:
        case Exit():
            return i
        case Nop(succ=s):
            return Nop(r(s))
        case Asgn(dst=d, lhs=a, op=op, rhs=b, succ=s):
            return Asgn(d, a, op, b, r(s))
        case Load(dst=d, var=v, addr=adr, succ=s):
            return Load(d, v, adr, r(s))
        case Store(var=v, addr=adr, src=c, succ=s):
            return Store(v, adr, c, r(s))
        case If(cond=c, succ_true=t, succ_false=f):
            return If(c, r(t), r(f))
        case Sfence(succ=s):
            return Sfence(r(s))
        case Slh(reg=x, succ=s):
            return Slh(x, r(s))
        case Move(dst=d, src=x, succ=s):
            return Move(d, x, r(s))
        case Fill(dst=d, slot=sl, succ=s):
            return Fill(d, sl, r(s))
        case Spill(slot=sl, src=x, succ=s):
            return Spill(sl, x, r(s))
    raise AssertionError


def format_poison_table(sp: StaticPoison) -> str:
    keys = sp.domain
    head = "node".ljust(16) + " ".join(
        (k if isinstance(k, str) else f"{k[0]}[{k[1]}]").rjust(8) for k in keys
    )
    lines = [head]
    for node in sorted(sp.nodes, key=lambda n: (pc_key(n[0]), pc_key(n[1]))):
        pt = sp.assignment[node]
        lines.append(
            f"({node[0]},{node[1]})".ljust(16)
            + " ".join(PV_NAMES[pt[k]].rjust(8) for k in keys)
        )
    return "\n".join(lines) + "\n"
