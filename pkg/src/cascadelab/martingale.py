"""Property detectors and bound calculators for (weakly) active supermartingales.

Covers: the per-node weak-activity audit on exact enumeration trees, path-wise
jump and upcrossing counters, the classical maximal and upcrossing-number
inequalities, the judicious-constants table behind the uniform convergence
argument, the empirical uniform-time estimator, and the two-scenario
dichotomy audit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .beliefs import BeliefPair
from .dynamics import BatchSummaries, EnumeratedTree, PublicPath, sample_path_summaries
from .errors import HorizonTooShortError, InvalidDomainError, InvalidIntervalError

_Z95 = 1.959963984540054


@dataclass(frozen=True)
class ActivitySpec:
    """Activity psi, rate nu and action-space size for weak-activity checks.

    nu = 0 reduces the time-dependent jump floor psi/(k+1)^nu to the constant
    floor of a plain active supermartingale.
    """

    psi: float
    nu: float
    action_count: int = 2

    def __post_init__(self):
        if not (0.0 < self.psi < 1.0):
            raise InvalidDomainError(f"psi must be in (0,1), got {self.psi}")
        if not (0.0 <= self.nu < 1.0):
            raise InvalidDomainError(f"nu must be in [0,1), got {self.nu}")
        if self.action_count < 2:
            raise InvalidDomainError(f"action_count must be >= 2, got {self.action_count}")

    def jump_size(self, k: int) -> float:
        """Required relative jump at step k -> k+1: psi/(k+1)^nu."""
        return self.psi / (k + 1) ** self.nu


@dataclass
class WeakActivityReport:
    passed: bool
    min_slack: float
    worst_node: dict
    nodes_checked: int
    params: dict

    def __bool__(self) -> bool:
        return self.passed

    def to_json_dict(self) -> dict:
        return {
            "check": "weak-activity",
            "params": self.params,
            "pass": self.passed,
            "min_slack": self.min_slack,
            "per_node_worst": self.worst_node,
            "confidence": None,
        }


def weak_activity_check(
    tree: EnumeratedTree, spec: ActivitySpec, prob_floor_factor: float = 0.5
) -> WeakActivityReport:
    """Exact per-node audit on an enumeration tree.

    At every P^H-reachable node with l > 0 at depth k, computes the exact
    conditional probability of a relative jump larger than psi/(k+1)^nu and
    compares it against the floor prob_floor_factor * psi/(k+1)^nu.  The
    default factor 1/2 is what the induced learning process guarantees;
    factor 1 gives the symmetric textbook predicate (used by the nu = 0
    reduction to plain activity).
    """
    min_slack = math.inf
    worst = {}
    checked = 0
    for k in range(tree.depth):
        r1h = tree.rho1_H[k]
        r1l = tree.rho1_L[k]
        ph = tree.p_H[k]
        ll = tree.log_l[k]
        live = (ph > 0) & np.isfinite(ll)
        if not np.any(live):
            continue
        size = spec.jump_size(k)
        floor = prob_floor_factor * size
        with np.errstate(divide="ignore", invalid="ignore"):
            jump1 = np.abs(r1l / r1h - 1.0) > size
            jump2 = np.abs((1.0 - r1l) / (1.0 - r1h) - 1.0) > size
        prob = np.where((r1h > 0) & jump1, r1h, 0.0) + np.where(
            (r1h < 1) & jump2, 1.0 - r1h, 0.0
        )
        slack = prob - floor
        slack_live = slack[live]
        i = int(np.argmin(slack_live))
        if slack_live[i] < min_slack:
            min_slack = float(slack_live[i])
            idx = np.flatnonzero(live)[i]
            worst = {
                "depth": k,
                "node": int(idx),
                "log_l": float(ll[idx]),
                "jump_prob": float(prob[idx]),
                "required": floor,
            }
        checked += int(np.sum(live))
    return WeakActivityReport(
        passed=min_slack > 0,
        min_slack=min_slack,
        worst_node=worst,
        nodes_checked=checked,
        params={
            "psi": spec.psi,
            "nu": spec.nu,
            "action_count": spec.action_count,
            "prob_floor_factor": prob_floor_factor,
        },
    )


def first_failing_depth(
    pair_tree: EnumeratedTree, spec: ActivitySpec, prob_floor_factor: float = 0.5
) -> Optional[int]:
    """Smallest depth whose nodes break the weak-activity floor, if any."""
    for d in range(1, pair_tree.depth + 1):
        sub = EnumeratedTree(
            depth=d,
            log_l=pair_tree.log_l[: d + 1],
            p_H=pair_tree.p_H[: d + 1],
            p_L=pair_tree.p_L[: d + 1],
            rho1_H=pair_tree.rho1_H[:d],
            rho1_L=pair_tree.rho1_L[:d],
        )
        rep = weak_activity_check(sub, spec, prob_floor_factor)
        if not rep.passed:
            return rep.worst_node.get("depth")
    return None


# --------------------------------------------------------------------------
# Path-wise counters
# --------------------------------------------------------------------------

def _path_values(path: Union[PublicPath, Sequence[float]]) -> np.ndarray:
    if isinstance(path, PublicPath):
        return path.l_values
    return np.asarray(path, dtype=np.float64)


def jump_count(path: Union[PublicPath, Sequence[float]], spec: ActivitySpec, K: int) -> int:
    """Number of steps k' < K with |L_k'/L_{k'-1} - 1| >= psi/k'^nu."""
    v = _path_values(path)
    if len(v) < K:
        raise ValueError(f"path has {len(v)} values, needs at least K={K}")
    if K < 2:
        return 0
    prev = v[: K - 1]
    cur = v[1:K]
    kp = np.arange(1, K, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.abs(np.where(prev > 0, cur / prev - 1.0, 0.0))
    return int(np.sum(rel >= spec.psi / kp ** spec.nu))


def upcrossings(path: Union[PublicPath, Sequence[float]], a: float, b: float, K: int) -> int:
    """Completed passages from <= a to >= b within the first K entries."""
    if not (0.0 < a < b):
        raise InvalidIntervalError(f"need 0 < a < b, got a={a}, b={b}")
    v = _path_values(path)[:K]
    count = 0
    armed = False
    for x in v:
        if not armed and x <= a:
            armed = True
        elif armed and x >= b:
            count += 1
            armed = False
    return count


def maximal_inequality_bound(l0: float, c: float) -> float:
    """Fact-1 bound: P(sup_k L_k >= c) <= min(1, L_0/c)."""
    if c <= 0:
        raise InvalidDomainError(f"c must be > 0, got {c}")
    if l0 < 0:
        raise InvalidDomainError(f"l0 must be >= 0, got {l0}")
    return min(1.0, l0 / c)


def dubins_bound(l0: float, a: float, b: float, n: int) -> float:
    """Dubins upcrossing bound: P(U_inf(a,b) >= N) <= (a/b)^N min(1, L_0/a)."""
    if not (0.0 < a < b):
        raise InvalidIntervalError(f"need 0 < a < b, got a={a}, b={b}")
    if n < 1:
        raise InvalidDomainError(f"N must be >= 1, got {n}")
    return (a / b) ** n * min(1.0, l0 / a)


@dataclass
class PathStats:
    """Per-path counters: jumps, upcrossings, extremes, first passages."""

    jump_counts: dict          # K -> J_K
    upcrossing_counts: dict    # (a, b, K) -> count
    running_max: float
    running_min: float
    first_passage_below: dict  # threshold -> first k with L_k < thr (None if never)


def compute_path_stats(
    path: Union[PublicPath, Sequence[float]],
    spec: ActivitySpec,
    k_values: Sequence[int] = (),
    intervals: Sequence[tuple] = (),
    thresholds: Sequence[float] = (),
) -> PathStats:
    v = _path_values(path)
    jumps = {int(k): jump_count(path, spec, int(k)) for k in k_values}
    ups = {
        (a, b, int(k)): upcrossings(path, a, b, int(k)) for (a, b, k) in intervals
    }
    fp = {}
    for thr in thresholds:
        below = np.flatnonzero(v < thr)
        fp[thr] = int(below[0]) if len(below) else None
    return PathStats(
        jump_counts=jumps,
        upcrossing_counts=ups,
        running_max=float(np.max(v)),
        running_min=float(np.min(v)),
        first_passage_below=fp,
    )


# --------------------------------------------------------------------------
# Judicious constants for the uniform convergence argument
# --------------------------------------------------------------------------

@dataclass
class BoundConstants:
    """The interval/upcrossing/jump constants for given (epsilon, psi, l0, L)."""

    epsilon: float
    psi: float
    l0: float
    L_lower: float
    c_lower: float
    c_upper: float
    I: int
    N: int
    J: int
    K_estimate: Union[int, str] = "empirical"

    def to_json_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "psi": self.psi,
            "l0": self.l0,
            "L_lower": self.L_lower,
            "c_lower": self.c_lower,
            "c_upper": self.c_upper,
            "I": self.I,
            "N": self.N,
            "J": self.J,
            "K_estimate": self.K_estimate,
        }


def uniform_bound_constants(
    epsilon: float,
    psi: float,
    l0: float = 1.0,
    L_lower: float = 0.5,
    j_rule: str = "main",
) -> BoundConstants:
    """Compute (c, c_bar, I, N, J) and re-verify the defining inequalities.

    I uses the horizon-free form ceil(2*c_bar/(c*psi)) + 2; N is the smallest
    integer meeting the upcrossing-probability budget; J follows the main-text
    rule 2I(N+1)+I+1, with the footnote rule 2N(I+1)+3 behind `j_rule`.
    """
    if not (0.0 < epsilon < 1.0) or not (0.0 < psi < 1.0):
        raise InvalidDomainError("epsilon and psi must lie in (0,1)")
    if l0 <= 0 or not (0.0 < L_lower < l0):
        raise InvalidDomainError("need l0 > 0 and 0 < L_lower < l0")
    if j_rule not in ("main", "footnote"):
        raise InvalidDomainError(f"j_rule must be 'main' or 'footnote', got {j_rule!r}")
    c_lo = (epsilon / 4.0) * L_lower
    c_hi = (4.0 / epsilon) * l0
    i_const = math.ceil(2.0 * c_hi / (c_lo * psi)) + 2
    shrink = math.log1p(-(c_hi - c_lo) / (i_const * c_hi))
    budget = math.log((epsilon / 4.0) * (1.0 / i_const) * (c_lo / l0))
    n_const = math.ceil(budget / shrink)
    assert n_const * shrink <= budget, "N fails its defining inequality after rounding"
    assert i_const >= 2.0 * c_hi / (c_lo * psi) + 2 - 1e-9
    if j_rule == "main":
        j_const = 2 * i_const * (n_const + 1) + i_const + 1
    else:
        j_const = 2 * n_const * (i_const + 1) + 3
    return BoundConstants(
        epsilon=epsilon,
        psi=psi,
        l0=l0,
        L_lower=L_lower,
        c_lower=c_lo,
        c_upper=c_hi,
        I=i_const,
        N=n_const,
        J=j_const,
    )


# --------------------------------------------------------------------------
# Empirical uniform convergence time
# --------------------------------------------------------------------------

@dataclass
class UniformKReport:
    epsilon: float
    L_lower: float
    horizon: int
    paths_per_pair: int
    seed: int
    per_pair: list                 # dicts: pair_id, K_hat, ci_low, ci_high, coverage
    max_K_hat: int

    def to_csv(self) -> str:
        lines = ["pair_id,K_hat,ci_low,ci_high"]
        for row in self.per_pair:
            lines.append(
                f"{row['pair_id']},{row['K_hat']},{row['ci_low']},{row['ci_high']}"
            )
        return "\n".join(lines) + "\n"

    def to_json_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "L_lower": self.L_lower,
            "horizon": self.horizon,
            "paths_per_pair": self.paths_per_pair,
            "seed": self.seed,
            "per_pair": self.per_pair,
            "max_K_hat": self.max_K_hat,
        }


def pair_stream_seed(master_seed: int, pair_index: int) -> int:
    """Derived per-pair stream key; offsets keep chunk keys disjoint."""
    return master_seed + 1_000_003 * (pair_index + 1)


def last_exceed_times(
    pair: BeliefPair, L_lower: float, horizon: int, n_paths: int, seed: int
) -> np.ndarray:
    """Per-path last round k >= 1 with l_k > L_lower (0 if never)."""
    s = sample_path_summaries(
        pair, "H", horizon, n_paths, seed, l_thresholds=(L_lower,)
    )
    return next(iter(s.last_above.values()))


def uniform_k_estimate(
    pairs: Sequence[BeliefPair],
    epsilon: float,
    L_lower: float,
    horizon: int,
    paths_per_pair: int,
    seed: int,
) -> UniformKReport:
    """Empirical K per pair: smallest K with P(sup_{K<k<=horizon} l_k <= L) >= 1-eps.

    K_hat is the ceil(n*(1-eps))-th smallest last-exceedance time; its CI uses
    the binomial order-statistic ranks at 95%.
    """
    if not (0.0 < epsilon < 1.0):
        raise InvalidDomainError("epsilon must be in (0,1)")
    if not (0.0 < L_lower):
        raise InvalidDomainError("L_lower must be > 0")
    rows = []
    for i, pair in enumerate(pairs):
        t_exc = last_exceed_times(
            pair, L_lower, horizon, paths_per_pair, pair_stream_seed(seed, i)
        )
        t_sorted = np.sort(t_exc)
        n = len(t_sorted)
        q = 1.0 - epsilon
        rank = math.ceil(n * q)
        k_hat = 0 if rank < 1 else int(t_sorted[rank - 1])
        if k_hat >= horizon:
            raise HorizonTooShortError(
                f"pair {i}: no K < horizon={horizon} reaches coverage {q}"
            )
        half = _Z95 * math.sqrt(max(n * q * (1 - q), 0.0))
        lo_rank = max(1, math.ceil(n * q - half))
        hi_rank = min(n, math.ceil(n * q + half))
        coverage = float(np.mean(t_exc <= k_hat))
        rows.append(
            {
                "pair_id": i,
                "K_hat": k_hat,
                "ci_low": int(t_sorted[lo_rank - 1]),
                "ci_high": int(t_sorted[hi_rank - 1]),
                "coverage": coverage,
            }
        )
    return UniformKReport(
        epsilon=epsilon,
        L_lower=L_lower,
        horizon=horizon,
        paths_per_pair=paths_per_pair,
        seed=seed,
        per_pair=rows,
        max_K_hat=max(r["K_hat"] for r in rows),
    )


# --------------------------------------------------------------------------
# Dichotomy audit
# --------------------------------------------------------------------------

@dataclass
class DichotomyReport:
    scenario_1_count: int      # periods k <= n where the pair is NOT psi/k^nu-close
    scenario_2_holds: bool     # l_k < eps(1+eps) for every k in (n, horizon]
    n: int
    epsilon: float


def dichotomy_audit(
    path: PublicPath,
    pair: BeliefPair,
    psi: float,
    nu: float,
    epsilon: float,
    n: int,
) -> DichotomyReport:
    """Count far-apart-transition periods before n; test the post-n ceiling."""
    if path.horizon <= n:
        raise ValueError(f"path length {path.horizon} must exceed n={n}")
    logl = path.log_l_values
    count = 0
    for k in range(1, n + 1):
        d = pair.cdf_logit("L", logl[k]) - pair.cdf_logit("H", logl[k])
        if d >= psi / k ** nu:
            count += 1
    ceiling = math.log(epsilon * (1.0 + epsilon))
    tail = logl[n + 1 :]
    return DichotomyReport(
        scenario_1_count=count,
        scenario_2_holds=bool(np.all(tail < ceiling)),
        n=n,
        epsilon=epsilon,
    )


# --------------------------------------------------------------------------
# Monte Carlo vs the classical bounds
# --------------------------------------------------------------------------

@dataclass
class InequalityAudit:
    """Empirical frequencies vs analytic ceilings, with 3-sigma allowances."""

    maximal: list      # dicts: c, bound, freq, sigma, pass
    dubins: list       # dicts: a, b, N, bound, freq, sigma, pass
    n_paths: int
    horizon: int
    seed: int

    @property
    def passed(self) -> bool:
        return all(r["pass"] for r in self.maximal + self.dubins)

    def to_json_dict(self) -> dict:
        return {
            "check": "classical-inequalities",
            "params": {"n_paths": self.n_paths, "horizon": self.horizon, "seed": self.seed},
            "pass": self.passed,
            "maximal": self.maximal,
            "dubins": self.dubins,
        }


def classical_inequality_audit(
    pair: BeliefPair,
    horizon: int,
    n_paths: int,
    seed: int,
    c_values: Sequence[float] = (2.0, 4.0, 8.0),
    dubins_configs: Sequence[tuple] = ((0.25, 0.75, 3), (0.5, 0.9, 2), (0.1, 0.4, 2)),
) -> InequalityAudit:
    """Check Monte Carlo exceedance/upcrossing frequencies against the bounds.

    A configuration passes when the empirical frequency is at most the
    analytic bound plus three binomial standard deviations at that bound.
    """
    summaries = sample_path_summaries(
        pair,
        "H",
        horizon,
        n_paths,
        seed,
        intervals=[(a, b) for (a, b, _n) in dubins_configs],
    )
    out_max = []
    for c in c_values:
        bound = maximal_inequality_bound(1.0, c)
        freq = float(np.mean(summaries.max_log_l >= math.log(c)))
        sigma = math.sqrt(bound * (1 - bound) / n_paths)
        out_max.append(
            {"c": c, "bound": bound, "freq": freq, "sigma": sigma,
             "pass": freq <= bound + 3 * sigma}
        )
    out_dub = []
    for (a, b, n_up) in dubins_configs:
        bound = dubins_bound(1.0, a, b, n_up)
        ups = summaries.upcrossings[(a, b)]
        freq = float(np.mean(ups >= n_up))
        sigma = math.sqrt(bound * (1 - bound) / n_paths)
        out_dub.append(
            {"a": a, "b": b, "N": n_up, "bound": bound, "freq": freq, "sigma": sigma,
             "pass": freq <= bound + 3 * sigma}
        )
    return InequalityAudit(
        maximal=out_max, dubins=out_dub, n_paths=n_paths, horizon=horizon, seed=seed
    )
