"""Stopping-time extraction of a weakly active process from a likelihood ratio.

Given a nonnegative supermartingale L_t and the schedule eps_t = psi/(t+1)^nu,
the stopping times tau_k pick out the first time after tau_{k-1} at which
either (condition 1) the one-step law at the realized prefix gives a relative
drop below -eps_t/#A with conditional probability above eps_t/#A, or
(condition 2) the running ratio L_t/L_{tau_{k-1}} has risen by more than
eps_t/(2 #A).  If no such time exists the remaining stopping times are
infinite and the extracted process sits at zero.

On exact enumeration trees condition-1 probabilities are available per node,
so both the extraction and the activity guarantee of the extracted process
can be verified without sampling.  On sampled paths the model kernel supplies
the same conditional law at the realized public ratio; there, stopping times
past the horizon are reported as censored (a finite sample cannot certify an
infinite stopping time, except from a provably frozen state).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .beliefs import BeliefPair
from .dynamics import EnumeratedTree, PublicPath, _kernel
from .errors import InvalidDomainError, NotAModelTreeError

_INF = math.inf


@dataclass(frozen=True)
class ExtractionRule:
    """Schedule parameters: eps_t = psi/(t+1)^nu over an #A-action alphabet."""

    psi: float
    nu: float
    action_count: int = 2

    def __post_init__(self):
        if not (0.0 < self.psi < 1.0) or not (0.0 < self.nu < 1.0):
            raise InvalidDomainError(
                f"psi and nu must lie in (0,1), got psi={self.psi}, nu={self.nu}"
            )
        if self.action_count < 2:
            raise InvalidDomainError(f"action_count must be >= 2, got {self.action_count}")

    def epsilon(self, t: int) -> float:
        return self.psi / (t + 1) ** self.nu

    def activity_floor(self, k: int) -> float:
        """Guaranteed jump size/probability of the extracted process at step k."""
        return self.psi / (2.0 * self.action_count * (k + 1) ** self.nu)


@dataclass
class ExtractedProcess:
    """The faster process: values of L at the stopping times.

    stopping_times[0] = 0; a single trailing `inf` stands for "all remaining
    stopping times are infinite" (the extracted value is 0 from there on).
    triggers[j] names the rule that fired for stopping_times[j]
    ("start", "condition-1", "condition-2", "rule-3-infinity").  When the
    data ran out before any rule fired, `censored` is True and no further
    stopping time is reported.
    """

    stopping_times: list
    log_values: list
    triggers: list
    censored: bool = False
    tau_nodes: Optional[list] = None   # node index at each tau (tree extractions)

    @property
    def values(self) -> list:
        out = []
        for lv in self.log_values:
            with np.errstate(under="ignore"):
                out.append(0.0 if lv == -_INF else float(np.exp(lv)))
        return out

    def validate(self) -> None:
        finite = [t for t in self.stopping_times if t != _INF]
        assert finite == sorted(set(finite)), "stopping times must strictly increase"
        assert all(v >= 0 for v in self.values)
        hit_inf = False
        for t, v in zip(self.stopping_times, self.values):
            if t == _INF:
                hit_inf = True
            if hit_inf:
                assert v == 0.0

    def to_json_dict(self) -> dict:
        return {
            "taus": ["inf" if t == _INF else t for t in self.stopping_times],
            "values": self.values,
            "triggers": self.triggers,
            "censored": self.censored,
        }


def _extract_core(
    log_values: Sequence[float],
    cond1_flags: Sequence[bool],
    frozen_flags: Sequence[bool],
    rule: ExtractionRule,
    exhaust_to_infinity: bool,
    nodes: Optional[Sequence[int]] = None,
) -> ExtractedProcess:
    """Run the stopping-time recursion along one realized value sequence.

    cond1_flags[t-1] says whether condition 1 holds for the step into time t;
    frozen_flags[t] marks states from which the process provably never moves
    (those certify rule 3 even on finite data).
    """
    horizon = len(log_values) - 1
    a = rule.action_count
    taus = [0]
    logs = [float(log_values[0])]
    trig = ["start"]
    tau_nodes = [0] if nodes is not None else None
    t_prev = 0
    while True:
        base = log_values[t_prev]
        fired = None
        t = t_prev
        while t < horizon:
            t += 1
            eps = rule.epsilon(t)
            if cond1_flags[t - 1]:
                fired = (t, "condition-1")
                break
            if log_values[t] - base > math.log1p(eps / (2.0 * a)):
                fired = (t, "condition-2")
                break
        if fired is None:
            if exhaust_to_infinity or (t_prev <= horizon and frozen_flags[t_prev]):
                taus.append(_INF)
                logs.append(-_INF)
                trig.append("rule-3-infinity")
                if tau_nodes is not None:
                    tau_nodes.append(None)
                return ExtractedProcess(
                    stopping_times=taus,
                    log_values=logs,
                    triggers=trig,
                    censored=False,
                    tau_nodes=tau_nodes,
                )
            return ExtractedProcess(
                stopping_times=taus,
                log_values=logs,
                triggers=trig,
                censored=True,
                tau_nodes=tau_nodes,
            )
        t_k, why = fired
        taus.append(t_k)
        logs.append(float(log_values[t_k]))
        trig.append(why)
        if tau_nodes is not None:
            tau_nodes.append(int(nodes[t_k]))
        t_prev = t_k


def _cond1_arrays(tree: EnumeratedTree, rule: ExtractionRule):
    """Per level: condition-1 flags and frozen flags at each node."""
    cond1, frozen = [], []
    for k in range(tree.depth):
        t = k + 1
        eps = rule.epsilon(t)
        r1h = tree.rho1_H[k]
        r1l = tree.rho1_L[k]
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio1 = np.where(r1h > 0, r1l / r1h, np.nan)
            ratio2 = np.where(r1h < 1, (1.0 - r1l) / (1.0 - r1h), np.nan)
        drop1 = (r1h > 0) & (ratio1 - 1.0 < -eps / rule.action_count)
        drop2 = (r1h < 1) & (ratio2 - 1.0 < -eps / rule.action_count)
        prob = np.where(drop1, r1h, 0.0) + np.where(drop2, 1.0 - r1h, 0.0)
        cond1.append(prob > eps / rule.action_count)
        # frozen: every H-possible action leaves l unchanged
        still1 = (r1h <= 0) | (ratio1 == 1.0)
        still2 = (r1h >= 1) | (ratio2 == 1.0)
        frozen.append(still1 & still2)
    return cond1, frozen


@dataclass
class TreeExtraction:
    """Extraction applied to every leaf path of an enumeration tree."""

    tree: EnumeratedTree
    rule: ExtractionRule
    processes: list               # ExtractedProcess per leaf, leaf order

    def leaf_probability(self, i: int, state: str = "H") -> float:
        return float((self.tree.p_H if state == "H" else self.tree.p_L)[self.tree.depth][i])


def extract(
    tree: EnumeratedTree, pair: Optional[BeliefPair], rule: ExtractionRule
) -> TreeExtraction:
    """Extract the faster process along every path of an exact tree.

    Exhausting the tree depth without a trigger reports the infinite stopping
    time (the extracted value is 0 there); exact conditional laws make
    condition-1 history-measurable, so all paths through a prefix share taus.
    """
    if not tree.rho1_H:
        raise NotAModelTreeError("tree carries no one-step laws")
    cond1_lv, frozen_lv = _cond1_arrays(tree, rule)
    d = tree.depth
    out = []
    for leaf in range(2 ** d):
        nodes = [leaf >> (d - t) for t in range(d + 1)]  # node index at each time
        logv = [float(tree.log_l[t][nodes[t]]) for t in range(d + 1)]
        c1 = [bool(cond1_lv[t][nodes[t]]) for t in range(d)]
        fro = [bool(frozen_lv[t][nodes[t]]) for t in range(d)] + [True]
        out.append(
            _extract_core(logv, c1, fro, rule, exhaust_to_infinity=True, nodes=nodes)
        )
    return TreeExtraction(tree=tree, rule=rule, processes=out)


def extract_from_path(
    path: PublicPath, pair: BeliefPair, rule: ExtractionRule
) -> ExtractedProcess:
    """Extraction along a sampled path, condition 1 from the model kernel."""
    kern = _kernel(pair)
    logv = path.log_l_values
    h = path.horizon
    cond1 = np.zeros(h, dtype=bool)
    frozen = np.zeros(h + 1, dtype=bool)
    for t in range(1, h + 1):
        eps = rule.epsilon(t)
        p = kern.pos_scalar(logv[t - 1])
        r1h, r1l = kern.p1_h[p], kern.p1_l[p]
        prob = 0.0
        if r1h > 0 and math.expm1(kern.log_r1[p]) < -eps / rule.action_count:
            prob += r1h
        if r1h < 1 and math.expm1(kern.log_r2[p]) < -eps / rule.action_count:
            prob += 1.0 - r1h
        cond1[t - 1] = prob > eps / rule.action_count
        frozen[t - 1] = (r1h <= 0 or kern.log_r1[p] == 0.0) and (
            r1h >= 1 or kern.log_r2[p] == 0.0
        )
    frozen[h] = False
    return _extract_core(logv, cond1, frozen, rule, exhaust_to_infinity=False)


def extract_values(
    values: Sequence[float],
    rule: ExtractionRule,
    cond1_flags: Optional[Sequence[bool]] = None,
) -> ExtractedProcess:
    """Extraction along a raw value sequence (condition 2 / rule 3 only by
    default; pass cond1_flags when the conditional law is known externally)."""
    v = np.asarray(values, dtype=np.float64)
    if np.any(v < 0):
        raise InvalidDomainError("values must be nonnegative")
    with np.errstate(divide="ignore"):
        logv = np.where(v > 0, np.log(np.maximum(v, 1e-320)), -_INF)
    h = len(v) - 1
    c1 = cond1_flags if cond1_flags is not None else [False] * h
    # a path sitting at exact zero is absorbed: certifies rule 3
    frozen = [(v[t] == 0.0) for t in range(h + 1)]
    return _extract_core(logv, c1, frozen, rule, exhaust_to_infinity=False)


# --------------------------------------------------------------------------
# Exact verification of the extracted process's activity
# --------------------------------------------------------------------------

@dataclass
class ExtractedActivityReport:
    passed: bool
    min_slack: float
    worst_node: dict
    nodes_checked: int
    params: dict

    def __bool__(self) -> bool:
        return self.passed

    def to_json_dict(self) -> dict:
        return {
            "check": "extracted-activity",
            "params": self.params,
            "pass": self.passed,
            "min_slack": self.min_slack,
            "per_node_worst": self.worst_node,
            "confidence": None,
        }


def verify_extracted_activity(
    extraction: TreeExtraction, rule: Optional[ExtractionRule] = None
) -> ExtractedActivityReport:
    """Check, exactly, that the extracted process is weakly active.

    For every sampling node (the prefix at a finite tau_k with positive value)
    the conditional probability of |L~_{k+1}/L~_k - 1| > psi/(2#A (k+1)^nu)
    must itself exceed psi/(2#A (k+1)^nu).  Conditioning atoms are prefix
    cylinders because the stopping times are history-measurable.
    """
    rule = rule or extraction.rule
    tree = extraction.tree
    d = tree.depth
    p_leaf = tree.p_H[d]
    groups: dict = {}
    for i, proc in enumerate(extraction.processes):
        w = float(p_leaf[i])
        if w == 0.0:
            continue
        taus = proc.stopping_times
        logs = proc.log_values
        for k in range(len(taus) - 1):
            t_k = taus[k]
            if t_k == _INF or logs[k] == -_INF:
                continue
            thr = rule.activity_floor(k)
            nxt = logs[k + 1]
            if nxt == -_INF:
                jump = True               # drop to zero: relative move of 1
            else:
                jump = abs(math.expm1(nxt - logs[k])) > thr
            key = (k, t_k, proc.tau_nodes[k] if proc.tau_nodes else None)
            g = groups.setdefault(key, [0.0, 0.0])
            g[0] += w
            if jump:
                g[1] += w
    min_slack = math.inf
    worst = {}
    for (k, t_k, node), (tot, hit) in groups.items():
        thr = rule.activity_floor(k)
        prob = hit / tot
        slack = prob - thr
        if slack < min_slack:
            min_slack = slack
            worst = {
                "k": k,
                "tau": t_k,
                "node": node,
                "jump_prob": prob,
                "required": thr,
            }
    return ExtractedActivityReport(
        passed=min_slack > 0,
        min_slack=min_slack if groups else math.inf,
        worst_node=worst,
        nodes_checked=len(groups),
        params={
            "psi": rule.psi,
            "nu": rule.nu,
            "action_count": rule.action_count,
        },
    )


# --------------------------------------------------------------------------
# Distance-implies-likely-fall (exact, per node)
# --------------------------------------------------------------------------

@dataclass
class DistanceJumpReport:
    violations: int
    nodes_triggered: int
    min_slack: float
    params: dict

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def to_json_dict(self) -> dict:
        return {
            "check": "distance-implies-fall",
            "params": self.params,
            "pass": self.passed,
            "min_slack": self.min_slack,
            "per_node_worst": {"nodes_triggered": self.nodes_triggered},
            "confidence": None,
        }


def distance_jump_check(
    tree: EnumeratedTree,
    pair: Optional[BeliefPair] = None,
    psi: float = 0.3,
    nu: float = 0.5,
    action_count: int = 2,
) -> DistanceJumpReport:
    """Where the action-law distance exceeds psi/k^nu, the conditional chance
    of a relative drop of at least psi/(k^nu #A) must be at least psi/(k^nu #A).
    """
    a = action_count
    violations = 0
    triggered = 0
    min_slack = math.inf
    for lvl in range(tree.depth):
        t = lvl + 1
        thr = psi / t ** nu
        need = thr / a
        r1h = tree.rho1_H[lvl]
        r1l = tree.rho1_L[lvl]
        ph = tree.p_H[lvl]
        live = ph > 0
        dist = np.abs(r1h - r1l)
        with np.errstate(divide="ignore", invalid="ignore"):
            drop1 = (r1h > 0) & (r1l / r1h - 1.0 <= -need)
            drop2 = (r1h < 1) & ((1.0 - r1l) / (1.0 - r1h) - 1.0 <= -need)
        prob = np.where(drop1, r1h, 0.0) + np.where(drop2, 1.0 - r1h, 0.0)
        hit = live & (dist > thr)
        triggered += int(np.sum(hit))
        if np.any(hit):
            slack = prob[hit] - need
            min_slack = min(min_slack, float(np.min(slack)))
            violations += int(np.sum(slack < 0))
    return DistanceJumpReport(
        violations=violations,
        nodes_triggered=triggered,
        min_slack=min_slack,
        params={"psi": psi, "nu": nu, "action_count": a},
    )
