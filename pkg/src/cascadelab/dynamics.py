"""Sequential-learning state machine over a belief pair.

The public likelihood ratio l (odds of state L against H) starts at 1 and is
multiplied each round by rho(a|l,L)/rho(a|l,H), where a is the action the
current individual takes and rho(a|l,s) comes from the pair's CDFs at the
threshold l/(1+l).  Everything here is driven by one lookup kernel: because
the grid is integer-logit, both transition probabilities and the log jump
sizes depend on l only through floor(log l).

Three consumers share the kernel: a single-path sampler (`simulate`), an
exact enumerator over the binary action tree (`enumerate_tree`), and a
chunked vectorized sampler (`sample_path_summaries`) used by the Monte Carlo
estimators.  Sampling is deterministic given (seed, horizon, path layout):
chunk c of a batch draws from Philox keyed by SeedSequence((seed, c)) with a
fixed chunk width, so results do not depend on scheduling or worker count.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .beliefs import BeliefPair
from .errors import DepthTooLargeError

_CHUNK = 8192
MAX_TREE_DEPTH = 24
CASCADE_TOL = 1e-9


@dataclass(frozen=True)
class PublicState:
    """Public likelihood ratio l and round index k."""

    l: float
    k: int = 0

    def __post_init__(self):
        if not (self.l >= 0.0) or math.isinf(self.l):
            raise ValueError(f"public likelihood ratio must be finite and >= 0, got {self.l}")


def threshold(l: float) -> float:
    """Private-belief cutoff for the binary action rule: l/(1+l)."""
    if l < 0 or math.isinf(l) or math.isnan(l):
        raise ValueError(f"l must be finite and >= 0, got {l}")
    return l / (1.0 + l)


def transition_prob(pair: BeliefPair, l: float, action: int, state: str) -> float:
    """rho(action | l, state): chance the next individual takes `action`."""
    if action not in (1, 2):
        raise ValueError(f"action must be 1 or 2, got {action}")
    with np.errstate(divide="ignore"):
        theta = math.log(l) if l > 0 else -math.inf
    f = pair.cdf_logit(state, theta)
    return f if action == 1 else 1.0 - f


# --------------------------------------------------------------------------
# Lookup kernel: transition probabilities and log jumps per logit floor
# --------------------------------------------------------------------------

class _Kernel:
    """Tables over padded floor(log l) positions [-T-1 .. T] (length 2T+2)."""

    def __init__(self, pair: BeliefPair):
        t = pair.half_width
        self.t = t
        fh = np.concatenate([[0.0], pair._cum_H[:-1], [1.0]])
        fl = np.concatenate([[0.0], pair._cum_L[:-1], [1.0]])
        # position p = clip(floor(theta), -t-1, t) + t + 1
        self.p1_h, self.p1_l = fh, fl
        with np.errstate(divide="ignore", invalid="ignore"):
            self.log_r1 = np.where(fh > 0, np.log(fl) - np.log(fh), 0.0)
            self.log_r2 = np.where(fh < 1, np.log1p(-fl) - np.log1p(-fh), 0.0)

    def pos(self, theta):
        idx = np.floor(theta)
        return (np.clip(idx, -self.t - 1, self.t) + self.t + 1).astype(np.int64)

    def pos_scalar(self, theta: float) -> int:
        return int(min(max(math.floor(theta), -self.t - 1), self.t)) + self.t + 1


def _kernel(pair: BeliefPair) -> _Kernel:
    k = pair.construction.get("_kernel_cache")
    if k is None:
        k = _Kernel(pair)
        pair.construction["_kernel_cache"] = k
    return k


# --------------------------------------------------------------------------
# Single-path sampling
# --------------------------------------------------------------------------

@dataclass
class PublicPath:
    """A realized trajectory: actions, l values and per-step transitions.

    l_values has length horizon+1 (l_0 = 1 first); actions[k-1] is the
    action of individual k, taken at public ratio l_values[k-1]; rho_H/rho_L
    record the probability of that action under each state.  l values beyond
    float range underflow to 0 in `l_values`; `log_l_values` stay exact.
    """

    state: str
    seed: int
    actions: np.ndarray
    log_l_values: np.ndarray
    rho_H: np.ndarray
    rho_L: np.ndarray
    boundary_hits: int = 0

    @property
    def l_values(self) -> np.ndarray:
        with np.errstate(under="ignore", over="ignore"):
            return np.exp(self.log_l_values)

    @property
    def horizon(self) -> int:
        return len(self.actions)

    def validate(self, rtol: float = 1e-12) -> None:
        """One-step update identity and the direction-of-move invariant."""
        logl = self.log_l_values
        step_log = np.log(self.rho_L) - np.log(self.rho_H)
        assert np.allclose(logl[1:] - logl[:-1], step_log, rtol=0, atol=rtol * (1 + np.abs(logl[1:])))
        moved = np.abs(step_log) > 0
        assert np.all((step_log[moved] > 0) == (self.actions[moved] == 1))

    def to_json_dict(self, path_id: int = 0) -> dict:
        return {
            "path_id": path_id,
            "state": self.state,
            "seed": self.seed,
            "actions": self.actions.tolist(),
            "l": self.l_values.tolist(),
            "log_l": self.log_l_values.tolist(),
            "rho_H": self.rho_H.tolist(),
            "rho_L": self.rho_L.tolist(),
            "boundary_hits": self.boundary_hits,
        }


def paths_to_csv(paths: Sequence[PublicPath]) -> str:
    """CSV batch form: path_id, k, action, l, rho_H, rho_L ('.' decimal)."""
    lines = ["path_id,k,action,l,rho_H,rho_L"]
    for pid, p in enumerate(paths):
        l = p.l_values
        for k in range(p.horizon):
            lines.append(
                f"{pid},{k + 1},{int(p.actions[k])},{l[k + 1]!r},"
                f"{p.rho_H[k]!r},{p.rho_L[k]!r}"
            )
    return "\n".join(lines) + "\n"


def step(
    pair: BeliefPair, state_of_world: str, current: PublicState, rng: np.random.Generator
) -> tuple[int, PublicState]:
    """Sample one individual's action and advance the public ratio."""
    kern = _kernel(pair)
    with np.errstate(divide="ignore"):
        theta = math.log(current.l) if current.l > 0 else -math.inf
    p = kern.pos_scalar(theta)
    p1 = kern.p1_h[p] if state_of_world == "H" else kern.p1_l[p]
    action = 1 if rng.random() < p1 else 2
    rho_h = kern.p1_h[p] if action == 1 else 1.0 - kern.p1_h[p]
    assert rho_h > 0.0, "division-by-zero-transition: sampled action impossible under H"
    jump = kern.log_r1[p] if action == 1 else kern.log_r2[p]
    new_theta = theta + jump
    with np.errstate(under="ignore"):
        new_l = math.exp(new_theta) if math.isfinite(new_theta) else 0.0
    return action, PublicState(l=new_l, k=current.k + 1)


def simulate(pair: BeliefPair, state_of_world: str, horizon: int, seed: int) -> PublicPath:
    """Sample a full path; deterministic given (pair, state, horizon, seed)."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if state_of_world not in ("H", "L"):
        raise ValueError(f"state_of_world must be 'H' or 'L', got {state_of_world!r}")
    kern = _kernel(pair)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence((seed,))))
    u = rng.random(horizon)
    actions = np.empty(horizon, dtype=np.int8)
    logl = np.empty(horizon + 1, dtype=np.float64)
    rho_h = np.empty(horizon, dtype=np.float64)
    rho_l = np.empty(horizon, dtype=np.float64)
    logl[0] = 0.0
    theta = 0.0
    boundary = 0
    p1h, p1l = kern.p1_h, kern.p1_l
    lr1, lr2 = kern.log_r1, kern.log_r2
    for k in range(horizon):
        p = kern.pos_scalar(theta)
        p1s = p1h[p] if state_of_world == "H" else p1l[p]
        if u[k] < p1s:
            actions[k] = 1
            rho_h[k], rho_l[k] = p1h[p], p1l[p]
            theta += lr1[p]
        else:
            actions[k] = 2
            rho_h[k], rho_l[k] = 1.0 - p1h[p], 1.0 - p1l[p]
            theta += lr2[p]
        if p1h[p] in (0.0, 1.0):
            boundary += 1
        logl[k + 1] = theta
    return PublicPath(
        state=state_of_world,
        seed=seed,
        actions=actions,
        log_l_values=logl,
        rho_H=rho_h,
        rho_L=rho_l,
        boundary_hits=boundary,
    )


# --------------------------------------------------------------------------
# Exact enumeration over the binary action tree
# --------------------------------------------------------------------------

@dataclass
class EnumeratedTree:
    """All action prefixes to `depth` with exact l and path probabilities.

    Level k holds 2^k nodes; node i's children at level k+1 are 2i (action 1)
    and 2i+1 (action 2).  rho arrays hold the one-step law at each node and
    are what the exact property checks consume; nodes with p_H = 0 are kept
    but skipped by every P^H-conditional check.
    """

    depth: int
    log_l: list          # level -> float array (2^k,)
    p_H: list
    p_L: list
    rho1_H: list         # level -> one-step law at each node (levels 0..depth-1)
    rho1_L: list

    @property
    def l(self) -> list:
        with np.errstate(under="ignore", over="ignore"):
            return [np.exp(v) for v in self.log_l]

    def leaf_probabilities(self, state: str) -> np.ndarray:
        return (self.p_H if state == "H" else self.p_L)[self.depth]

    @classmethod
    def from_kernel(cls, kernel_fn, depth: int, log_l0: float = 0.0) -> "EnumeratedTree":
        """Build from an arbitrary one-step law (synthetic trees in tests).

        kernel_fn(log_l: array, k: int) -> (rho1_H, rho1_L) arrays.
        """
        log_l = [np.array([log_l0])]
        p_h = [np.array([1.0])]
        p_l = [np.array([1.0])]
        r1h_all, r1l_all = [], []
        for k in range(depth):
            ll = log_l[k]
            r1h, r1l = kernel_fn(ll, k)
            r1h = np.asarray(r1h, dtype=np.float64)
            r1l = np.asarray(r1l, dtype=np.float64)
            r2h, r2l = 1.0 - r1h, 1.0 - r1l
            with np.errstate(divide="ignore", invalid="ignore"):
                j1 = np.where(r1h > 0, np.log(r1l) - np.log(r1h), np.nan)
                j2 = np.where(r2h > 0, np.log(r2l) - np.log(r2h), np.nan)
            n = len(ll)
            nxt_ll = np.empty(2 * n)
            nxt_ph = np.empty(2 * n)
            nxt_pl = np.empty(2 * n)
            nxt_ll[0::2] = ll + j1
            nxt_ll[1::2] = ll + j2
            nxt_ph[0::2] = p_h[k] * r1h
            nxt_ph[1::2] = p_h[k] * r2h
            nxt_pl[0::2] = p_l[k] * r1l
            nxt_pl[1::2] = p_l[k] * r2l
            r1h_all.append(r1h)
            r1l_all.append(r1l)
            log_l.append(nxt_ll)
            p_h.append(nxt_ph)
            p_l.append(nxt_pl)
        return cls(depth=depth, log_l=log_l, p_H=p_h, p_L=p_l,
                   rho1_H=r1h_all, rho1_L=r1l_all)

    def to_json_dict(self) -> dict:
        nodes = {}
        for k in range(self.depth + 1):
            ll = self.log_l[k]
            lh = self.p_H[k]
            lp = self.p_L[k]
            for i in range(len(ll)):
                prefix = "".join(
                    "2" if (i >> (k - 1 - b)) & 1 else "1" for b in range(k)
                )
                with np.errstate(under="ignore", over="ignore"):
                    lval = float(np.exp(ll[i]))
                nodes[prefix] = {
                    "l": lval,
                    "log_l": float(ll[i]),
                    "p_H": float(lh[i]),
                    "p_L": float(lp[i]),
                }
        return {"depth": self.depth, "nodes": nodes}


def enumerate_tree(pair: BeliefPair, depth: int) -> EnumeratedTree:
    """Exact probability tree of the learning process under both states."""
    if not (1 <= depth <= MAX_TREE_DEPTH):
        raise DepthTooLargeError(f"depth must be in 1..{MAX_TREE_DEPTH}, got {depth}")
    kern = _kernel(pair)

    def kernel_fn(log_l, _k):
        p = kern.pos(log_l)
        return kern.p1_h[p], kern.p1_l[p]

    return EnumeratedTree.from_kernel(kernel_fn, depth)


@dataclass
class MartingaleReport:
    """Per-node conditional-expectation audit of E^H[l_{k+1} | node] vs l_k."""

    max_violation: float        # max of E[l'|node] - l over nodes (>0 breaks supermartingale)
    max_abs_gap_rel: float      # max |sum of reachable rho_L - 1| over l>0 nodes
    is_supermartingale: bool
    is_martingale: bool
    nodes_checked: int

    def __bool__(self) -> bool:
        return self.is_supermartingale


def martingale_check(tree: EnumeratedTree, tol: float = 1e-12) -> MartingaleReport:
    """E^H[l_{k+1}|node] = l_k * sum of rho(a|l,L) over H-possible actions."""
    max_viol = 0.0
    max_gap = 0.0
    checked = 0
    for k in range(tree.depth):
        r1h = tree.rho1_H[k]
        r1l = tree.rho1_L[k]
        ph = tree.p_H[k]
        ll = tree.log_l[k]
        live = ph > 0
        s = np.where(r1h > 0, r1l, 0.0) + np.where(r1h < 1, 1.0 - r1l, 0.0)
        with np.errstate(under="ignore", over="ignore"):
            l = np.exp(ll)
        viol = l * (s - 1.0)
        if np.any(live):
            max_viol = max(max_viol, float(np.max(viol[live])))
            pos = live & (l > 0)
            if np.any(pos):
                max_gap = max(max_gap, float(np.max(np.abs(s[pos] - 1.0))))
            checked += int(np.sum(live))
    return MartingaleReport(
        max_violation=max_viol,
        max_abs_gap_rel=max_gap,
        is_supermartingale=max_viol <= tol,
        is_martingale=max_gap <= tol,
        nodes_checked=checked,
    )


# --------------------------------------------------------------------------
# Vectorized batch sampling
# --------------------------------------------------------------------------

@dataclass
class BatchSummaries:
    """Per-path statistics from a chunked Monte Carlo run.

    Times are 1-based round indices; 0 means "never within the horizon".
    """

    n_paths: int
    horizon: int
    state: str
    seed: int
    last_above: dict            # log-threshold -> int array: last k>=1 with l_k > thr
    max_log_l: np.ndarray
    upcrossings: dict           # (a, b) -> int array of completed upcrossings
    tau: np.ndarray             # first correct action (0 = censored)
    first_wrong: np.ndarray     # 0 = no mistake within horizon
    last_wrong: np.ndarray
    n_wrong: np.ndarray
    wrong_count_per_t: np.ndarray   # shape (horizon,), index t-1
    leaf_counts: Optional[np.ndarray] = None
    boundary_hit_paths: int = 0


def sample_path_summaries(
    pair: BeliefPair,
    state_of_world: str,
    horizon: int,
    n_paths: int,
    seed: int,
    *,
    l_thresholds: Iterable[float] = (),
    intervals: Iterable[tuple] = (),
    leaf_depth: Optional[int] = None,
) -> BatchSummaries:
    """Simulate n_paths trajectories, streaming per-path statistics.

    Chunked over paths with a fixed width so the draw layout (and thus every
    statistic) is a pure function of (seed, horizon, n_paths).
    """
    if horizon < 1 or n_paths < 1:
        raise ValueError("horizon and n_paths must be >= 1")
    kern = _kernel(pair)
    p1_tab = kern.p1_h if state_of_world == "H" else kern.p1_l
    thr_logs = [math.log(t) for t in l_thresholds]
    ivals = [(float(a), float(b)) for a, b in intervals]

    last_above = {t: np.zeros(n_paths, dtype=np.int64) for t in thr_logs}
    max_log = np.zeros(n_paths, dtype=np.float64)
    ups = {iv: np.zeros(n_paths, dtype=np.int64) for iv in ivals}
    tau = np.zeros(n_paths, dtype=np.int64)
    first_wrong = np.zeros(n_paths, dtype=np.int64)
    last_wrong = np.zeros(n_paths, dtype=np.int64)
    n_wrong = np.zeros(n_paths, dtype=np.int64)
    wrong_per_t = np.zeros(horizon, dtype=np.int64)
    leaf = np.zeros(2 ** leaf_depth, dtype=np.int64) if leaf_depth else None
    boundary_paths = 0

    for c0 in range(0, n_paths, _CHUNK):
        c1 = min(c0 + _CHUNK, n_paths)
        n = c1 - c0
        rng = np.random.Generator(
            np.random.Philox(np.random.SeedSequence((seed, c0 // _CHUNK)))
        )
        theta = np.zeros(n, dtype=np.float64)
        armed = {iv: np.ones(n, dtype=bool) * (1.0 <= iv[0]) for iv in ivals}
        leaf_idx = np.zeros(n, dtype=np.int64) if leaf_depth else None
        hit_boundary = np.zeros(n, dtype=bool)
        for k in range(1, horizon + 1):
            pos = kern.pos(theta)
            u = rng.random(n)
            a1 = u < p1_tab[pos]
            hit_boundary |= (kern.p1_h[pos] == 0.0) | (kern.p1_h[pos] == 1.0)
            theta = theta + np.where(a1, kern.log_r1[pos], kern.log_r2[pos])
            np.maximum(max_log[c0:c1], theta, out=max_log[c0:c1])
            for t in thr_logs:
                above = theta > t
                last_above[t][c0:c1][above] = k
            for iv in ivals:
                la, lb = math.log(iv[0]), math.log(iv[1])
                fired = armed[iv] & (theta >= lb)
                ups[iv][c0:c1][fired] += 1
                armed[iv] = (armed[iv] & ~fired) | (theta <= la)
            wrong = a1
            wrong_per_t[k - 1] += int(np.sum(wrong))
            nw = n_wrong[c0:c1]
            nw += wrong
            fw = first_wrong[c0:c1]
            fw[wrong & (fw == 0)] = k
            lw = last_wrong[c0:c1]
            lw[wrong] = k
            tv = tau[c0:c1]
            tv[(~a1) & (tv == 0)] = k
            if leaf_depth and k <= leaf_depth:
                leaf_idx = (leaf_idx << 1) | (~a1).astype(np.int64)
        if leaf_depth:
            leaf += np.bincount(leaf_idx, minlength=2 ** leaf_depth)
        boundary_paths += int(np.sum(hit_boundary))

    return BatchSummaries(
        n_paths=n_paths,
        horizon=horizon,
        state=state_of_world,
        seed=seed,
        last_above={math.exp(t): arr for t, arr in last_above.items()},
        max_log_l=max_log,
        upcrossings=ups,
        tau=tau,
        first_wrong=first_wrong,
        last_wrong=last_wrong,
        n_wrong=n_wrong,
        wrong_count_per_t=wrong_per_t,
        leaf_counts=leaf,
        boundary_hit_paths=boundary_paths,
    )


def tree_to_json(tree: EnumeratedTree) -> str:
    return json.dumps(tree.to_json_dict(), sort_keys=True)
