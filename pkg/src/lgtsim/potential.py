"""The potential function and the per-step certificate suite.

The potential over a tree state, an algorithm state x, and the offline
play y (the indicator of a root-to-leaf path) is

    P = 2 * sum_u w~_u * ( 4k y_u ln((1+delta_u)/(x_u+delta_u)) + (2k-h_u) x_u )

and decomposes as P = 4kD - 2Psi with

    D   = sum_u w~_u * ( 2 y_u ln((1+delta_u)/(x_u+delta_u)) + x_u )
    Psi = sum_u h_u w~_u x_u.

``certificate_report`` replays a recorded game trace against the offline
play reconstructed by ``lineage_y`` and checks, numerically and with the
explicit constants, that every step respects its certified inequality:
cost-plus-potential growth bounds for continuous steps (integrated and at
sampled instants), the geometric fork budget, potential decrease through
deadends, and monotonicity through merges.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .dynamics import GameTrace, StepRecord
from .errors import InputError
from .tree import ROOT, EvolvingTree, new_game_tree, birth_term_value

REL_TOL = 1e-6  # continuous-step checks: tol = REL_TOL * (1 + |rhs|)
FORK_TOL = 1e-9
MERGE_TOL = 1e-9
DEADEND_TOL = 1e-6


# ----------------------------------------------------------------------
# node tables: per-node derived quantities for any recorded tree state
# ----------------------------------------------------------------------


class TreeTable:
    """Flat per-node view (parent, w, j, h, delta, w~) of a tree snapshot.

    Unlike the live tree this tolerates a single-child internal node, which
    occurs transiently between a leaf removal and the merge that follows;
    the shift recursion hands such a child its parent's full share.
    """

    def __init__(self, k: int, epsilon: float):
        self.k = k
        self.epsilon = epsilon
        self.ids: list[int] = []
        self.parent: dict[int, int] = {}
        self.children: dict[int, list[int]] = {}
        self.w: dict[int, float] = {}
        self.j: dict[int, int] = {}
        self.h: dict[int, int] = {}
        self.delta: dict[int, float] = {}
        self.coef: dict[int, float] = {}
        self.wt: dict[int, float] = {}
        self.c_r: int = -1

    @classmethod
    def from_tree_dict(cls, data: dict) -> "TreeTable":
        tb = cls(int(data["k"]), float(data["epsilon"]))
        root = data["root"]

        def walk(obj: dict, parent: int | None, depth: int) -> None:
            u = int(obj["id"])
            kids = obj["children"]
            if parent is not None:
                tb.ids.append(u)
                tb.parent[u] = parent
                tb.w[u] = float(obj["weight"])
                tb.j[u] = int(obj["creation_step"])
                tb.h[u] = depth
            tb.children[u] = [int(c["id"]) for c in kids]
            for c in kids:
                walk(c, u, depth + 1)

        walk(root, None, 0)
        tb.c_r = tb.children[ROOT][0]
        tb._finish()
        return tb

    @classmethod
    def from_tree(cls, tree: EvolvingTree) -> "TreeTable":
        return cls.from_tree_dict(tree.to_dict())

    def _finish(self) -> None:
        k = self.k
        for u in self.ids:
            self.coef[u] = (2 * k - 1) / (2 * k - self.h[u])
            self.wt[u] = self.coef[u] * (self.w[u] + birth_term_value(self.epsilon, self.j[u]))
        self._recompute_delta()

    def _recompute_delta(self) -> None:
        self.delta = {}
        stack = [(self.c_r, 1.0)]
        while stack:
            u, d = stack.pop()
            self.delta[u] = d
            kids = self.children.get(u, [])
            if kids:
                share = d / len(kids)
                for v in kids:
                    stack.append((v, share))

    def drop_leaf(self, leaf: int) -> "TreeTable":
        """Table for the tree with one leaf removed (before any merge)."""
        if self.children.get(leaf):
            raise InputError(f"{leaf} is not a leaf of this snapshot")
        tb = TreeTable(self.k, self.epsilon)
        tb.ids = [u for u in self.ids if u != leaf]
        tb.parent = {u: p for u, p in self.parent.items() if u != leaf}
        tb.children = {
            u: [v for v in kids if v != leaf]
            for u, kids in self.children.items()
            if u != leaf
        }
        for name in ("w", "j", "h", "coef", "wt"):
            src = getattr(self, name)
            setattr(tb, name, {u: src[u] for u in tb.ids})
        tb.c_r = tb.children[ROOT][0]
        tb._recompute_delta()
        return tb

    def path_to_root(self, u: int) -> list[int]:
        path = []
        while u != ROOT:
            path.append(u)
            u = self.parent[u]
        return path


def as_table(tree) -> TreeTable:
    if isinstance(tree, TreeTable):
        return tree
    if isinstance(tree, EvolvingTree):
        return TreeTable.from_tree(tree)
    if isinstance(tree, dict):
        return TreeTable.from_tree_dict(tree)
    raise InputError(f"cannot interpret {type(tree).__name__} as a tree state")


# ----------------------------------------------------------------------
# potential evaluation
# ----------------------------------------------------------------------


def eval_potential(tree, x: dict, y: dict, k: int | None = None) -> tuple[float, float, float]:
    """Return (P, D, Psi) for the given tree state, algorithm state, and play.

    All summands of P are nonnegative (x_u <= 1 makes the log nonnegative),
    and P = 4kD - 2Psi holds identically.
    """
    tb = as_table(tree)
    if k is not None and k != tb.k:
        raise InputError(f"depth bound mismatch: table has k={tb.k}, got k={k}")
    k = tb.k
    P = 0.0
    D = 0.0
    Psi = 0.0
    for u in tb.ids:
        xu = x[u]
        yu = y.get(u, 0.0)
        wt = tb.wt[u]
        h = tb.h[u]
        if yu != 0.0:
            L = yu * math.log((1.0 + tb.delta[u]) / (xu + tb.delta[u]))
        else:
            L = 0.0
        P += 2.0 * wt * (4.0 * k * L + (2 * k - h) * xu)
        D += wt * (2.0 * L + xu)
        Psi += h * wt * xu
    return P, D, Psi


def initial_potential(k: int, epsilon: float) -> float:
    """P at the start of the game: 2(2k-1) * epsilon."""
    return 2.0 * (2 * k - 1) * epsilon


def certified_bound(trace: GameTrace, opt: float) -> float:
    """The numeric end-to-end cost bound for a finished game.

    16k(2 + k ln d_max)(opt + eps) + P_0 + the per-fork potential budget
    eps 2^(-j+2) (2k + 4k^2 ln d_max) summed over fork steps.
    """
    k = trace.k
    eps = trace.epsilon
    ln_d = math.log(max(trace.d_max_seen, 1))
    bound = 16.0 * k * (2.0 + k * ln_d) * (opt + eps) + initial_potential(k, eps)
    for rec in trace.records:
        if rec.kind == "fork":
            bound += eps * 2.0 ** (-rec.step_no + 2) * (2 * k + 4 * k * k * ln_d)
    return bound


# ----------------------------------------------------------------------
# offline optimal play by lineage replay
# ----------------------------------------------------------------------


@dataclass
class OptimalPlay:
    """Per-step indicator of the path toward the eventual optimal leaf.

    ``y_before[i]`` / ``y_after[i]`` are full {node: 0/1} maps on the tree
    as it stood before/after step i; ``rep_before[i]`` is the leaf the play
    occupies at the start of step i (the ancestor-representative of the
    final optimal leaf).
    """

    final_leaf: int
    opt: float
    rep_before: list[int]
    rep_after: list[int]
    y_before: list[dict]
    y_after: list[dict]

    def __len__(self) -> int:
        return len(self.rep_before)


def lineage_y(script) -> OptimalPlay:
    """Reconstruct the offline play for a complete adversary script.

    Replays the script topologically, picks the final leaf of minimum
    root distance (ties: smallest id), and walks the fork lineage backward
    so each step's y is the indicator of the path to that leaf's
    representative.  The online algorithm never sees this; it is a
    post-hoc pass.
    """
    tree = new_game_tree(script.k, script.epsilon)
    tables: list[TreeTable] = []
    events = []
    for step in script.steps:
        tables.append(TreeTable.from_tree(tree))
        if step.op == "grow":
            tree.add_weight(step.leaf, step.duration)
            tree.advance_step()
            events.append(("grow", step.leaf, None))
        elif step.op == "fork":
            children = tree.fork(step.leaf, step.q)
            events.append(("fork", step.leaf, children))
        elif step.op == "delete":
            outcome = tree.delete_leaf(step.leaf)
            events.append(("delete", step.leaf, outcome.merged))
        else:
            raise InputError(f"unknown script op {step.op!r}")
    tables.append(TreeTable.from_tree(tree))

    leaves = tree.leaves()
    best = min(leaves, key=lambda u: (tree.root_distance(u), u))
    opt = tree.root_distance(best)

    n = len(events)
    rep_before = [0] * n
    rep_after = [0] * n
    rep = best
    for i in range(n - 1, -1, -1):
        rep_after[i] = rep
        kind, leaf, extra = events[i]
        if kind == "fork" and rep in extra:
            rep = leaf
        rep_before[i] = rep

    def indicator(tb: TreeTable, rep_node: int) -> dict:
        y = {u: 0.0 for u in tb.ids}
        for u in tb.path_to_root(rep_node):
            y[u] = 1.0
        return y

    y_before = [indicator(tables[i], rep_before[i]) for i in range(n)]
    y_after = [indicator(tables[i + 1], rep_after[i]) for i in range(n)]
    return OptimalPlay(
        final_leaf=best, opt=opt,
        rep_before=rep_before, rep_after=rep_after,
        y_before=y_before, y_after=y_after,
    )


@dataclass(frozen=True)
class _OpView:
    op: str
    leaf: int
    duration: float | None = None
    q: int | None = None


@dataclass(frozen=True)
class _ScriptView:
    k: int
    epsilon: float
    steps: tuple


def lineage_from_trace(trace: GameTrace) -> OptimalPlay:
    """Offline play for a trace, via the script embedded in it."""
    steps = tuple(
        _OpView(op=s["op"], leaf=s["leaf"], duration=s.get("duration"), q=s.get("q"))
        for s in trace.script
    )
    return lineage_y(_ScriptView(k=trace.k, epsilon=trace.epsilon, steps=steps))


# ----------------------------------------------------------------------
# certificates
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class CertEntry:
    step_no: int
    check: str
    lhs: float
    rhs: float
    tol: float
    t: float | None = None  # sampled instant, for rate checks

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs

    @property
    def passed(self) -> bool:
        return self.lhs <= self.rhs + self.tol

    @property
    def rel_gap(self) -> float:
        return (self.lhs - self.rhs) / (1.0 + abs(self.rhs))

    def to_dict(self) -> dict:
        return {
            "step_no": self.step_no,
            "check": self.check,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "slack": self.slack,
            "tol": self.tol,
            "t": self.t,
            "passed": self.passed,
        }


@dataclass
class CertificateReport:
    entries: list[CertEntry] = field(default_factory=list)

    @property
    def max_violation(self) -> float:
        """Worst signed relative gap (lhs-rhs)/(1+|rhs|); negative = slack."""
        if not self.entries:
            return 0.0
        return max(e.rel_gap for e in self.entries)

    @property
    def all_passed(self) -> bool:
        return all(e.passed for e in self.entries)

    def failures(self) -> list[CertEntry]:
        return [e for e in self.entries if not e.passed]

    def worst(self) -> CertEntry | None:
        return max(self.entries, key=lambda e: e.rel_gap) if self.entries else None

    def to_dict(self) -> dict:
        return {
            "max_violation": self.max_violation,
            "all_passed": self.all_passed,
            "entries": [e.to_dict() for e in self.entries],
        }

    def summary_lines(self) -> list[str]:
        lines = []
        by_check: dict[str, list[CertEntry]] = {}
        for e in self.entries:
            by_check.setdefault(e.check, []).append(e)
        for check in sorted(by_check):
            group = by_check[check]
            worst = max(group, key=lambda e: e.rel_gap)
            status = "ok" if all(e.passed for e in group) else "FAIL"
            lines.append(
                f"{check:<18} {len(group):>5} checks  worst gap {worst.rel_gap:+.3e} "
                f"(step {worst.step_no})  {status}"
            )
        return lines


def certificate_report(trace: GameTrace, y: OptimalPlay) -> CertificateReport:
    """Check every step of a trace against its certified inequality.

    Continuous steps get the integrated bound

        dC + dP <= 16 k (2 + k ln d_max) dw_l y_l

    plus, at each sampled instant, the three rate bounds on C', Psi', D'.
    Fork steps get the geometric budget eps 2^(-j+2)(2k + 4 k^2 ln d_max);
    deadends must pay for their movement out of the potential; merges must
    not increase it.  Rate checks are aggregated to the worst sample per
    step.
    """
    if len(y) != len(trace.records):
        raise InputError(
            f"trace has {len(trace.records)} records but the play covers {len(y)} steps"
        )
    k = trace.k
    eps = trace.epsilon
    ln_d = math.log(max(trace.d_max_seen, 1))
    report = CertificateReport()

    for i, rec in enumerate(trace.records):
        if rec.kind == "grow":
            _check_grow(report, rec, y.y_before[i], k, ln_d)
        elif rec.kind == "fork":
            _check_fork(report, rec, y.y_after[i], k, eps, ln_d)
        elif rec.kind == "delete":
            _check_delete(report, rec, y.y_before[i], k)
    return report


def _check_grow(report, rec: StepRecord, y: dict, k: int, ln_d: float) -> None:
    tb_before = TreeTable.from_tree_dict(rec.tree_before)
    tb_after = TreeTable.from_tree_dict(rec.tree_after)
    leaf = rec.leaf
    p_before, _, _ = eval_potential(tb_before, rec.x_before, y)
    p_after, _, _ = eval_potential(tb_after, rec.x_after, y)
    d_cost = rec.service + rec.movement
    rhs = 16.0 * k * (2.0 + k * ln_d) * rec.duration * y.get(leaf, 0.0)
    report.entries.append(
        CertEntry(rec.step_no, "grow_total", d_cost + p_after - p_before, rhs,
                  REL_TOL * (1.0 + abs(rhs)))
    )
    worst = {"cost_rate": None, "psi_rate": None, "bregman_rate": None}
    for s in rec.samples:
        triple = _rate_checks(tb_before, leaf, s.t, s.x, s.lam, y, k, ln_d)
        for name, (lhs, rhs_v) in triple.items():
            entry = CertEntry(rec.step_no, name, lhs, rhs_v,
                              REL_TOL * (1.0 + abs(rhs_v)), t=s.t)
            if worst[name] is None or entry.rel_gap > worst[name].rel_gap:
                worst[name] = entry
    for name in ("cost_rate", "psi_rate", "bregman_rate"):
        if worst[name] is not None:
            report.entries.append(worst[name])


def _rate_checks(tb: TreeTable, leaf: int, t: float, x: dict, lam: dict,
                 y: dict, k: int, ln_d: float) -> dict:
    """Instantaneous C', Psi', D' bounds at one sampled instant."""
    wtp = tb.coef[leaf]
    wt_leaf = tb.wt[leaf] + wtp * t
    w_leaf = tb.w[leaf] + t
    c_r = tb.c_r
    xdot = {}
    for u in tb.ids:
        wt_u = wt_leaf if u == leaf else tb.wt[u]
        wtp_u = wtp if u == leaf else 0.0
        lam_p = lam[tb.parent[u]]
        xdot[u] = (-2.0 * x[u] * wtp_u + (x[u] + tb.delta[u]) * (lam_p - lam[u])) / wt_u

    sum_lam_xd = sum(lam[u] * (x[u] + tb.delta[u]) for u in tb.ids)
    x_l = x[leaf]

    c_rate = x_l + sum(
        (w_leaf if u == leaf else tb.w[u]) * abs(xdot[u]) for u in tb.ids if u != c_r
    )
    c_rhs = 3.0 * wtp * x_l + 2.0 * sum_lam_xd

    psi_rate = tb.h[leaf] * wtp * x_l + sum(
        tb.h[u] * (wt_leaf if u == leaf else tb.wt[u]) * xdot[u] for u in tb.ids
    )
    psi_lhs = -k * wtp * x_l + sum_lam_xd

    y_l = y.get(leaf, 0.0)
    d_rate = wtp * (2.0 * y_l * math.log((1.0 + tb.delta[leaf]) / (x_l + tb.delta[leaf])) + x_l)
    for u in tb.ids:
        wt_u = wt_leaf if u == leaf else tb.wt[u]
        d_rate += wt_u * xdot[u] * (1.0 - 2.0 * y.get(u, 0.0) / (x[u] + tb.delta[u]))
    d_rhs = -wtp * x_l + 2.0 * (2.0 + k * ln_d) * y_l * wtp

    return {
        "cost_rate": (c_rate, c_rhs),
        "psi_rate": (psi_lhs, psi_rate),
        "bregman_rate": (d_rate, d_rhs),
    }


def _check_fork(report, rec: StepRecord, y_after: dict, k: int, eps: float, ln_d: float) -> None:
    tb_after = TreeTable.from_tree_dict(rec.tree_after)
    delta_p = 0.0
    for v in rec.children:
        xv = rec.x_after[v]
        yv = y_after.get(v, 0.0)
        L = yv * math.log((1.0 + tb_after.delta[v]) / (xv + tb_after.delta[v]))
        delta_p += 2.0 * tb_after.wt[v] * (4.0 * k * L + (2 * k - tb_after.h[v]) * xv)
    rhs = eps * 2.0 ** (-rec.step_no + 2) * (2 * k + 4 * k * k * ln_d)
    report.entries.append(CertEntry(rec.step_no, "fork_potential", delta_p, rhs, FORK_TOL))


def _check_delete(report, rec: StepRecord, y: dict, k: int) -> None:
    tb_before = TreeTable.from_tree_dict(rec.tree_before)
    leaf = rec.leaf
    if y.get(leaf, 0.0) != 0.0:
        raise InputError(f"optimal play sits on deleted leaf {leaf}; trace and play disagree")
    p_before, _, _ = eval_potential(tb_before, rec.x_before, y)
    tb_mid = tb_before.drop_leaf(leaf)
    x_mid = {u: rec.x_drained[u] for u in tb_mid.ids}
    y_mid = {u: y[u] for u in tb_mid.ids}
    p_mid, _, _ = eval_potential(tb_mid, x_mid, y_mid)
    report.entries.append(
        CertEntry(rec.step_no, "deadend_potential", p_mid - p_before + rec.movement, 0.0,
                  DEADEND_TOL)
    )
    if rec.merged is not None:
        tb_after = TreeTable.from_tree_dict(rec.tree_after)
        y_after = {u: y_mid.get(u, 0.0) for u in tb_after.ids}
        p_after, _, _ = eval_potential(tb_after, rec.x_after, y_after)
        report.entries.append(
            CertEntry(rec.step_no, "merge_potential", p_after - p_mid, 0.0, MERGE_TOL)
        )


# ----------------------------------------------------------------------
# derivative validation
# ----------------------------------------------------------------------


def finite_diff_check(trace: GameTrace, y: OptimalPlay | None = None) -> float:
    """Compare numeric dP/dt against the analytic rate at sampled instants.

    Returns the maximum of |numeric - analytic| / (1 + |analytic|) over all
    interior samples of all continuous steps; needs dense sampling to be
    meaningful.
    """
    if y is None:
        y = lineage_from_trace(trace)
    worst = 0.0
    for i, rec in enumerate(trace.records):
        if rec.kind != "grow" or len(rec.samples) < 3:
            continue
        tb = TreeTable.from_tree_dict(rec.tree_before)
        y_map = y.y_before[i]
        values = []
        for s in rec.samples:
            wt_save = tb.wt[rec.leaf]
            w_save = tb.w[rec.leaf]
            tb.wt[rec.leaf] = wt_save + tb.coef[rec.leaf] * s.t
            tb.w[rec.leaf] = w_save + s.t
            p, _, _ = eval_potential(tb, s.x, y_map)
            tb.wt[rec.leaf] = wt_save
            tb.w[rec.leaf] = w_save
            values.append((s.t, p, s))
        for m in range(1, len(values) - 1):
            t0, p0, _ = values[m - 1]
            t1, _, s1 = values[m]
            t2, p2, _ = values[m + 1]
            if t2 - t0 <= 0.0:
                continue
            numeric = (p2 - p0) / (t2 - t0)
            analytic = _potential_rate(tb, rec.leaf, t1, s1.x, s1.lam, y_map)
            dev = abs(numeric - analytic) / (1.0 + abs(analytic))
            worst = max(worst, dev)
    return worst


def _potential_rate(tb: TreeTable, leaf: int, t: float, x: dict, lam: dict, y: dict) -> float:
    """Analytic P' = 4kD' - 2Psi' along the flow at one instant."""
    k = tb.k
    wtp = tb.coef[leaf]
    wt_leaf = tb.wt[leaf] + wtp * t
    rate = wtp * (
        8.0 * k * y.get(leaf, 0.0)
        * math.log((1.0 + tb.delta[leaf]) / (x[leaf] + tb.delta[leaf]))
        + 2.0 * (2 * k - tb.h[leaf]) * x[leaf]
    )
    for u in tb.ids:
        wt_u = wt_leaf if u == leaf else tb.wt[u]
        wtp_u = wtp if u == leaf else 0.0
        lam_p = lam[tb.parent[u]]
        xd = (-2.0 * x[u] * wtp_u + (x[u] + tb.delta[u]) * (lam_p - lam[u])) / wt_u
        rate += 2.0 * wt_u * xd * (
            -4.0 * k * y.get(u, 0.0) / (x[u] + tb.delta[u]) + (2 * k - tb.h[u])
        )
    return rate
