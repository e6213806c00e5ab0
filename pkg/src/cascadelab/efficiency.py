"""Learning-efficiency statistics: stopping times, bounds and tail estimation.

Stopping times on a path of actions a_1, a_2, ... (state H, correct action 2):
tau        first round with the correct action,
n_wrong    number of incorrect actions,
t_learn    first round from which every later action is correct,
t_first    round of the first mistake.

The analytic side evaluates the split-sum ceiling on E^H[tau] and the exact
expectation from the deterministic all-wrong excursion (the event {tau = k}
pins the first k actions, so its probability is a product of one-sided
transition probabilities along that single path; the enumeration tree
cross-checks the identity).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .beliefs import BeliefPair, cdf
from .dynamics import (
    EnumeratedTree,
    PublicPath,
    _kernel,
    sample_path_summaries,
)
from .errors import (
    HorizonInsufficientError,
    InsufficientTailMassError,
    SplitNotFoundError,
)

_Z95 = 1.959963984540054


# --------------------------------------------------------------------------
# Per-path stopping statistics
# --------------------------------------------------------------------------

@dataclass
class StoppingStats:
    tau: Optional[int]
    tau_censored: bool
    n_wrong: int
    t_learn: int
    t_learn_censored: bool
    t_first_mistake: Optional[int]
    t_first_mistake_censored: bool


def stopping_stats(path: PublicPath, horizon: Optional[int] = None) -> StoppingStats:
    """All four stopping statistics with explicit censoring flags."""
    h = path.horizon if horizon is None else horizon
    if path.horizon < h:
        raise ValueError(f"path length {path.horizon} < horizon {h}")
    a = path.actions[:h]
    correct = a == 2
    idx_correct = np.flatnonzero(correct)
    idx_wrong = np.flatnonzero(~correct)
    tau = int(idx_correct[0]) + 1 if len(idx_correct) else None
    first_wrong = int(idx_wrong[0]) + 1 if len(idx_wrong) else None
    last_wrong = int(idx_wrong[-1]) + 1 if len(idx_wrong) else 0
    t_learn = last_wrong + 1
    return StoppingStats(
        tau=tau,
        tau_censored=tau is None,
        n_wrong=int(len(idx_wrong)),
        t_learn=t_learn,
        t_learn_censored=t_learn > h,
        t_first_mistake=first_wrong,
        t_first_mistake_censored=first_wrong is None,
    )


# --------------------------------------------------------------------------
# Analytic ceiling on E^H[tau]
# --------------------------------------------------------------------------

@dataclass
class TauBound:
    value: float
    split: int
    head_sum: float
    tail_sum: float
    psi: float
    nu: float


def _log_term(t: float, psi: float, nu: float) -> float:
    """log of t * (1 - psi/t^nu)^(t-1)."""
    return math.log(t) + (t - 1.0) * math.log1p(-psi / t ** nu)


def expected_tau_bound(
    psi: float, nu: float, split: Optional[int] = None, search_cap: int = 10_000_000
) -> TauBound:
    """Split-sum ceiling: sum_{t=2..N} t(1-psi/t^nu)^{t-1} + sum_{t>N} 1/t^2.

    The split N must dominate: t(1-psi/t^nu)^{t-1} <= 1/t^2 for all t > N,
    verified numerically (pointwise on a window past N and decay of the
    log-ratio at doublings up to the cap).
    """
    if not (0.0 < psi < 1.0) or not (0.0 < nu < 1.0):
        raise SplitNotFoundError(f"psi, nu must be in (0,1), got {psi}, {nu}")

    def dominated(t: float) -> bool:
        return _log_term(t, psi, nu) + 2.0 * math.log(t) <= 0.0

    def monotone_from(t0: int) -> bool:
        # h(t) = t^3 (1-psi/t^nu)^(t-1) must keep shrinking past the split
        t = float(t0)
        prev = _log_term(t, psi, nu) + 2.0 * math.log(t)
        while t < search_cap:
            t *= 2.0
            cur = _log_term(t, psi, nu) + 2.0 * math.log(t)
            if cur >= prev:
                return False
            prev = cur
        return True

    if split is None:
        n = 2
        while n <= search_cap:
            window = range(n + 1, n + 1 + 64)
            if all(dominated(float(t)) for t in window) and monotone_from(n + 64):
                split = n
                break
            n = n * 2 if n >= 64 else n + 8
        if split is None:
            raise SplitNotFoundError(
                f"no domination split <= {search_cap} for psi={psi}, nu={nu}"
            )
    else:
        if not all(dominated(float(t)) for t in range(split + 1, split + 65)):
            raise SplitNotFoundError(
                f"provided split {split} does not dominate for psi={psi}, nu={nu}"
            )

    t_vals = np.arange(2, split + 1, dtype=np.float64)
    with np.errstate(under="ignore"):
        head = float(
            np.sum(np.exp(np.log(t_vals) + (t_vals - 1.0) * np.log1p(-psi / t_vals ** nu)))
        )
    tail = math.pi ** 2 / 6.0 - float(np.sum(1.0 / np.arange(1, split + 1, dtype=np.float64) ** 2))
    return TauBound(
        value=head + tail, split=split, head_sum=head, tail_sum=tail, psi=psi, nu=nu
    )


def exact_expected_tau(pair: BeliefPair, tol: float = 1e-16, max_rounds: int = 200_000) -> float:
    """E^H[tau] from the closed product form along the all-wrong excursion.

    P^H(tau > k) multiplies the probability of the incorrect action at each
    node of the deterministic all-wrong path; E[tau] = sum_k P(tau > k).
    """
    kern = _kernel(pair)
    theta = 0.0
    surv = 1.0
    total = 0.0
    for _k in range(max_rounds):
        total += surv
        p = kern.pos_scalar(theta)
        p1h = kern.p1_h[p]
        surv *= p1h
        if surv < tol:
            break
        theta += kern.log_r1[p]
    return total


def expected_tau_from_tree(tree: EnumeratedTree) -> tuple:
    """Exact partial expectation from the tree: (sum k P(tau=k), P(tau > depth)).

    {tau = k} is the single all-wrong prefix of length k-1 followed by the
    correct action, so only the leftmost branch contributes.
    """
    total = 0.0
    for k in range(1, tree.depth + 1):
        ph_prefix = float(tree.p_H[k - 1][0])
        rho2 = 1.0 - float(tree.rho1_H[k - 1][0])
        total += k * ph_prefix * rho2
    tail = float(tree.p_H[tree.depth][0])
    return total, tail


# --------------------------------------------------------------------------
# Monte Carlo estimators
# --------------------------------------------------------------------------

def _mean_ci(x: np.ndarray) -> dict:
    n = len(x)
    m = float(np.mean(x)) if n else math.nan
    s = float(np.std(x, ddof=1)) if n > 1 else math.nan
    half = _Z95 * s / math.sqrt(n) if n > 1 else math.nan
    return {"mean": m, "ci_low": m - half, "ci_high": m + half, "n": n}


@dataclass
class EfficiencyReport:
    horizon: int
    paths: int
    seed: int
    per_pair: list
    uniform: dict      # max of the per-pair means per statistic

    def to_json_dict(self) -> dict:
        return {
            "horizon": self.horizon,
            "paths": self.paths,
            "seed": self.seed,
            "per_pair": self.per_pair,
            "uniform": self.uniform,
        }


def efficiency_estimate(
    pairs: Union[BeliefPair, Sequence[BeliefPair]],
    horizon: int,
    paths: int,
    seed: int,
    tau_censor_gate: float = 0.001,
) -> EfficiencyReport:
    """Estimate E^H[tau], E^H[N], E^H[T_H], E^H[T_1] with CIs and censoring.

    T_1 can be infinite with positive probability (mistake-free paths); its
    mean is reported conditional on being finite next to that probability.
    Raises horizon-insufficient when tau censoring exceeds the gate.
    """
    if isinstance(pairs, BeliefPair):
        pairs = [pairs]
    rows = []
    for i, pair in enumerate(pairs):
        s = sample_path_summaries(pair, "H", horizon, paths, seed + 7_777_777 * i)
        tau_cens = float(np.mean(s.tau == 0))
        if tau_cens > tau_censor_gate:
            raise HorizonInsufficientError(
                f"pair {i}: tau censored fraction {tau_cens:.4f} exceeds {tau_censor_gate}"
            )
        t_learn = s.last_wrong + 1
        t_learn_cens = float(np.mean(s.last_wrong == horizon))
        first = s.first_wrong
        no_mistake = float(np.mean(first == 0))
        row = {
            "pair_id": i,
            "tau": _mean_ci(s.tau[s.tau > 0]),
            "tau_censored_fraction": tau_cens,
            "n_wrong": _mean_ci(s.n_wrong),
            "t_learn": _mean_ci(t_learn),
            "t_learn_censored_fraction": t_learn_cens,
            "t_learn_gate_ok": t_learn_cens < 0.01,
            "t_first_mistake_finite": _mean_ci(first[first > 0]) if np.any(first > 0) else None,
            "p_no_mistake_within_horizon": no_mistake,
        }
        rows.append(row)
    uniform = {
        stat: max(r[stat]["mean"] for r in rows)
        for stat in ("tau", "n_wrong", "t_learn")
    }
    return EfficiencyReport(
        horizon=horizon, paths=paths, seed=seed, per_pair=rows, uniform=uniform
    )


# --------------------------------------------------------------------------
# Wrong-action tail estimation
# --------------------------------------------------------------------------

@dataclass
class TailFit:
    alpha_hat: float
    K_hat: float
    stderr: float
    ci_low: float
    ci_high: float
    t_min: int
    n_points: int
    t_used: np.ndarray
    p_wrong: np.ndarray
    counts: np.ndarray

    def to_json_dict(self) -> dict:
        return {
            "alpha_hat": self.alpha_hat,
            "K_hat": self.K_hat,
            "stderr": self.stderr,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "t_min": self.t_min,
            "n_points": self.n_points,
        }

    def wrong_prob_csv(self, n_paths: int) -> str:
        lines = ["t,p_wrong,ci_low,ci_high"]
        for t, p, c in zip(self.t_used, self.p_wrong, self.counts):
            half = _Z95 * math.sqrt(max(p * (1 - p) / n_paths, 0.0))
            lines.append(f"{int(t)},{p!r},{max(p - half, 0.0)!r},{min(p + half, 1.0)!r}")
        return "\n".join(lines) + "\n"


def wrong_action_probabilities(
    pair: BeliefPair, horizon: int, paths: int, seed: int
) -> np.ndarray:
    """Empirical P^H(a_t != 2) for t = 1..horizon."""
    s = sample_path_summaries(pair, "H", horizon, paths, seed)
    return s.wrong_count_per_t / paths


def tail_fit(
    pair: BeliefPair,
    horizon: int,
    paths: int,
    seed: int,
    t_min: int = 10,
    min_points: int = 10,
) -> TailFit:
    """Fit log P^H(a_t != 2) ~ log K - alpha log t by count-weighted least squares.

    Rounds with empirical probability zero carry no log value and are dropped;
    if fewer than `min_points` usable rounds remain at or after t_min the tail
    is too thin to fit and insufficient-tail-mass is raised.
    """
    if paths < 10_000:
        raise ValueError("tail_fit needs at least 1e4 paths")
    s = sample_path_summaries(pair, "H", horizon, paths, seed)
    counts = s.wrong_count_per_t
    t_all = np.arange(1, horizon + 1)
    use = (t_all >= t_min) & (counts > 0)
    if int(np.sum(use)) < min_points:
        raise InsufficientTailMassError(
            f"only {int(np.sum(use))} nonzero wrong-action rounds at t >= {t_min}; "
            f"need {min_points}"
        )
    t_used = t_all[use].astype(np.float64)
    c_used = counts[use].astype(np.float64)
    p_used = c_used / paths
    x = np.log(t_used)
    y = np.log(p_used)
    w = c_used
    wx = np.sum(w * x)
    wy = np.sum(w * y)
    wxx = np.sum(w * x * x)
    wxy = np.sum(w * x * y)
    wt = np.sum(w)
    denom = wt * wxx - wx * wx
    slope = (wt * wxy - wx * wy) / denom
    intercept = (wy - slope * wx) / wt
    resid = y - (intercept + slope * x)
    dof = max(len(t_used) - 2, 1)
    sigma2 = float(np.sum(w * resid ** 2) / dof)
    se = math.sqrt(sigma2 * wt / denom)
    alpha = -slope
    return TailFit(
        alpha_hat=float(alpha),
        K_hat=float(np.exp(intercept)),
        stderr=float(se),
        ci_low=float(alpha - _Z95 * se),
        ci_high=float(alpha + _Z95 * se),
        t_min=t_min,
        n_points=int(len(t_used)),
        t_used=t_used,
        p_wrong=p_used,
        counts=c_used.astype(np.int64),
    )


# --------------------------------------------------------------------------
# Smooth-monotone diagnostic near zero
# --------------------------------------------------------------------------

@dataclass
class SmoothMonotoneReport:
    probes: np.ndarray
    values: np.ndarray
    trends_to_zero: bool


def smooth_monotone_check(
    pair: BeliefPair, probe_points: Sequence[float], rel_step: float = 0.5
) -> SmoothMonotoneReport:
    """Discrete analogue of p F'(p) -> 0 near 0, F the even-prior mixture."""
    probes = np.asarray(probe_points, dtype=np.float64)
    if np.any(probes <= 0) or np.any(probes > 0.1):
        raise ValueError("probe points must lie in (0, 0.1]")
    if np.any(np.diff(probes) >= 0):
        raise ValueError("probe points must be strictly decreasing")
    vals = []
    for p in probes:
        h = rel_step * p
        f_hi = 0.5 * (cdf(pair, "H", p) + cdf(pair, "L", p))
        f_lo = 0.5 * (cdf(pair, "H", p - h) + cdf(pair, "L", p - h))
        vals.append(p * (f_hi - f_lo) / h)
    vals = np.asarray(vals)
    first = vals[0] if vals[0] > 0 else 1e-300
    trend = bool(vals[-1] <= 0.1 * first + 1e-15)
    return SmoothMonotoneReport(probes=probes, values=vals, trends_to_zero=trend)
