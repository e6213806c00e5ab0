"""Private-belief distribution pairs on an integer logit grid.

The model couples two probability mass functions (one per state of the
world, ``H`` and ``L``) living on integer logit points ``j``; the belief
value attached to ``j`` is ``sigma(j) = 1/(1+e^-j)``.  The constructive
family implemented here is

    f1(-1) = a,  f1(0) = b,  f1(k) = psi / k^nu   (k >= 1)
    f(j)  = f1(j-1) - f1(j)                        (j >= 1, the H side)
    f(-j) = f(j) * exp(-b_j)                       (the damped mirror)
    P_H(j) = f(j)/C,  P_L(j) = f(-j)/C

with ``a = b`` (no atom at the tie point, which makes the H<->L mirror
exact), ``b = psi + (1-psi)*theta_b`` and the damping sequence
``b_1 = log((b-psi)/(S-R_2))``, ``b_k = 32 + ln k`` for ``k >= 2``.  The
free knobs ``(theta_b, S)`` are chosen by a deterministic scan so that the
informativeness inequality

    Delta(threshold(l~_k)) > psi / (k+1)^nu

holds with positive margin along the all-correct benchmark sequence l~ *and*
the mirrored all-wrong path, for every k up to the requested horizon.

Grids are finite: the two infinite tails are folded into the boundary atoms
at +-T_max, so every interior CDF value equals the infinite-support model
exactly and total mass is exactly one.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import (
    ConstructionInfeasibleError,
    DegenerateTransitionError,
    InvalidParamsError,
)

_QMAX = 400_000     # resolution of the damped-tail table
_MARGIN_FLOOR = 0.0
_BAND_DEPTH = 12    # node-level activity self-check depth at construction


@dataclass(frozen=True)
class InformativeParams:
    """The (psi, nu) activity/rate pair, both restricted to (0, 1)."""

    psi: float
    nu: float

    def __post_init__(self) -> None:
        if not (0.0 < self.psi < 1.0) or not (0.0 < self.nu < 1.0):
            raise InvalidParamsError(
                f"psi and nu must lie in (0,1), got psi={self.psi}, nu={self.nu}"
            )

    def demand(self, k: int) -> float:
        """Required CDF distance at benchmark index k: psi/(k+1)^nu."""
        return self.psi / (k + 1) ** self.nu


@dataclass
class BeliefPair:
    """A pair of private-belief distributions on a shared integer logit grid.

    ``grid[i]`` is an integer logit point; ``mass_H[i]``/``mass_L[i]`` are the
    probabilities the two states assign to it.  CDFs are right-continuous step
    functions of the logit (equivalently of the belief through the logistic
    map).
    """

    grid: np.ndarray
    mass_H: np.ndarray
    mass_L: np.ndarray
    construction: dict = field(default_factory=dict)
    _cum_H: np.ndarray = field(init=False, repr=False)
    _cum_L: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.grid = np.asarray(self.grid, dtype=np.int64)
        self.mass_H = np.asarray(self.mass_H, dtype=np.float64)
        self.mass_L = np.asarray(self.mass_L, dtype=np.float64)
        self._cum_H = np.minimum(np.cumsum(self.mass_H), 1.0)
        self._cum_L = np.minimum(np.cumsum(self.mass_L), 1.0)

    @property
    def half_width(self) -> int:
        return int(self.grid[-1])

    @property
    def truncation(self) -> Optional[int]:
        return self.construction.get("truncation")

    # -- CDF evaluation ----------------------------------------------------

    def cdf_logit(self, state: str, theta: float) -> float:
        """F^state(theta) = P(logit <= theta), right-continuous in theta."""
        cum = self._cum_H if state == "H" else self._cum_L
        t = self.half_width
        idx = math.floor(theta)
        if idx < -t:
            return 0.0
        if idx >= t:
            return 1.0
        return float(cum[idx + t])

    def cdf_logit_many(self, state: str, thetas: np.ndarray) -> np.ndarray:
        cum = self._cum_H if state == "H" else self._cum_L
        t = self.half_width
        idx = np.floor(thetas).astype(np.int64)
        out = np.empty(idx.shape, dtype=np.float64)
        below = idx < -t
        above = idx >= t
        mid = ~(below | above)
        out[below] = 0.0
        out[above] = 1.0
        out[mid] = cum[idx[mid] + t]
        return out

    def validate(self, atol: float = 1e-12) -> None:
        """Check the structural invariants; raise AssertionError on failure."""
        assert abs(float(np.sum(self.mass_H)) - 1.0) <= atol
        assert abs(float(np.sum(self.mass_L)) - 1.0) <= atol
        assert np.all((self.mass_H > 0) == (self.mass_L > 0)), "mutual absolute continuity"
        assert np.any(self.mass_H != self.mass_L), "distributions must not coincide"
        assert np.allclose(self.mass_L, self.mass_H[::-1], rtol=0, atol=0), "mirror symmetry"

    # -- serialization -----------------------------------------------------

    def to_json_dict(self) -> dict:
        meta = {k: v for k, v in self.construction.items() if not k.startswith("_")}
        return {
            "psi": meta.get("psi"),
            "nu": meta.get("nu"),
            "a": meta.get("a"),
            "b": meta.get("b"),
            "b_seq": meta.get("b_seq", []),
            "grid": self.grid.tolist(),
            "mass_H": self.mass_H.tolist(),
            "mass_L": self.mass_L.tolist(),
            "meta": {k: v for k, v in meta.items() if k != "b_seq"},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True)

    @classmethod
    def from_json_dict(cls, doc: dict) -> "BeliefPair":
        meta = dict(doc.get("meta", {}))
        for key in ("psi", "nu", "a", "b"):
            meta.setdefault(key, doc.get(key))
        meta["b_seq"] = doc.get("b_seq", [])
        pair = cls(
            grid=np.asarray(doc["grid"], dtype=np.int64),
            mass_H=np.asarray(doc["mass_H"], dtype=np.float64),
            mass_L=np.asarray(doc["mass_L"], dtype=np.float64),
            construction=meta,
        )
        return pair

    @classmethod
    def from_json(cls, text: str) -> "BeliefPair":
        return cls.from_json_dict(json.loads(text))


@dataclass
class DeltaProfile:
    """Delta(p) = F^L(p) - F^H(p) sampled at a list of belief points."""

    points: np.ndarray
    values: np.ndarray


@dataclass
class BenchmarkSequence:
    """The deterministic all-correct-action benchmark l~_0 .. l~_h.

    ``values`` underflow to 0.0 once log(1/l~) exceeds ~745; ``log_values``
    stay exact and are what the informativeness checks consume.
    """

    log_values: np.ndarray

    @property
    def values(self) -> np.ndarray:
        with np.errstate(under="ignore"):
            return np.exp(self.log_values)

    def __len__(self) -> int:
        return len(self.log_values)


@dataclass
class InformativenessResult:
    passed: bool
    first_failing_k: Optional[int]
    min_margin: float
    horizon: int

    def __bool__(self) -> bool:
        return self.passed


# --------------------------------------------------------------------------
# Public operations
# --------------------------------------------------------------------------

def cdf(pair: BeliefPair, state: str, p: float) -> float:
    """CDF of the private belief under `state` at belief value p in [0,1]."""
    if state not in ("H", "L"):
        raise ValueError(f"state must be 'H' or 'L', got {state!r}")
    if p <= 0.0:
        return 0.0
    if p >= 1.0:
        return 1.0
    theta = math.log(p / (1.0 - p))
    return pair.cdf_logit(state, theta)


def delta(pair: BeliefPair, p: float) -> float:
    """Distance F^L(p) - F^H(p) between the two belief CDFs at p."""
    return cdf(pair, "L", p) - cdf(pair, "H", p)


def delta_profile(pair: BeliefPair, points: Sequence[float]) -> DeltaProfile:
    pts = np.asarray(points, dtype=np.float64)
    vals = np.array([delta(pair, float(p)) for p in pts])
    return DeltaProfile(points=pts, values=vals)


def benchmark_sequence(pair: BeliefPair, horizon: int) -> BenchmarkSequence:
    """Iterate l~_{k+1} = l~_k * rho(2|l~_k,L)/rho(2|l~_k,H) from l~_0 = 1.

    Computed in log space; raises DegenerateTransitionError if the correct
    action ever has zero probability under H (bounded-pair cascade).
    """
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    logs = np.empty(horizon + 1, dtype=np.float64)
    logs[0] = 0.0
    theta = 0.0
    for k in range(horizon):
        rho2_h = 1.0 - pair.cdf_logit("H", theta)
        rho2_l = 1.0 - pair.cdf_logit("L", theta)
        if rho2_h <= 0.0:
            raise DegenerateTransitionError(
                f"rho(2 | l~_{k}, H) = 0: benchmark entered a cascade"
            )
        theta += math.log(rho2_l / rho2_h)
        logs[k + 1] = theta
    return BenchmarkSequence(log_values=logs)


def is_informative(
    pair: BeliefPair, params: InformativeParams, horizon: int
) -> InformativenessResult:
    """Check Delta(threshold(l~_k)) > psi/(k+1)^nu strictly for k = 0..horizon."""
    trunc = pair.truncation
    if trunc is not None and horizon > trunc:
        raise ValueError(
            f"horizon {horizon} exceeds the pair's construction truncation {trunc}"
        )
    theta = 0.0
    min_margin = math.inf
    first_fail = None
    for k in range(horizon + 1):
        # threshold of l~_k has logit log(l~_k) = theta
        d = pair.cdf_logit("L", theta) - pair.cdf_logit("H", theta)
        need = params.demand(k)
        margin = d / need - 1.0
        if margin < min_margin:
            min_margin = margin
        if d <= need and first_fail is None:
            first_fail = k
        if k < horizon:
            rho2_h = 1.0 - pair.cdf_logit("H", theta)
            rho2_l = 1.0 - pair.cdf_logit("L", theta)
            if rho2_h <= 0.0:
                # bounded-pair cascade: nothing informative can follow
                if first_fail is None:
                    first_fail = k + 1
                min_margin = -1.0
                break
            theta += math.log(rho2_l / rho2_h)
    return InformativenessResult(
        passed=first_fail is None,
        first_failing_k=first_fail,
        min_margin=min_margin,
        horizon=horizon,
    )


# --------------------------------------------------------------------------
# Construction
# --------------------------------------------------------------------------

class _Family:
    """Closed-form CDF pieces of the infinite-support construction.

    The damping sequence is b_1 (tuned) then b_k = beta + ln k, so the
    residual tails are R_j = e^{-beta} * sum_{i>=j} f(i)/i for j >= 2.
    beta controls how deep a wrong-then-correct crash lands: too large and
    the landing leaves the region where the CDF distance still beats the
    activity demands at small depth.
    """

    def __init__(self, psi: float, nu: float, q_table: np.ndarray, beta: float):
        self.psi = psi
        self.nu = nu
        self.beta = beta
        self._q = q_table  # Q[j-2] = sum_{i>=j} f(i)/i, j >= 2

    def f1(self, k: int, b: float) -> float:
        return b if k == 0 else self.psi / k ** self.nu

    def r_tail(self, j: int, s_total: float) -> float:
        """R_j = sum_{i>=j} f(i) e^{-b_i}; R_1 is the full damped mass S."""
        if j <= 1:
            return s_total
        jj = min(j, len(self._q) + 1)
        return math.exp(-self.beta) * float(self._q[jj - 2])


def _q_table(psi: float, nu: float) -> np.ndarray:
    i = np.arange(2, _QMAX, dtype=np.float64)
    f = psi * ((i - 1.0) ** (-nu) - i ** (-nu))
    q = np.concatenate([np.cumsum((f / i)[::-1])[::-1], [0.0]])
    q += psi / (_QMAX - 1) ** nu / _QMAX   # bound on the unresolved tail
    return q


def _sweep(fam: _Family, b: float, s: float, horizon: int):
    """Verify the informativeness inequality along the benchmark and the
    mirrored all-wrong path with closed forms.

    Returns (min_margin, tail_margin, reach): min_margin is the worst
    relative slack over k = 0..horizon, tail_margin the worst over k >= 1
    (what governs how tightly the pair hugs the demanded decay rate), and
    reach the max log-excursion at `horizon`.  Non-positive min_margin means
    the candidate fails.
    """
    psi, nu = fam.psi, fam.nu
    c = b + s
    d0 = (b - s) / c
    k0_margin = d0 / psi - 1.0
    if k0_margin <= _MARGIN_FLOOR:
        return k0_margin, math.inf, 0.0
    tail_margin = math.inf
    m = 0.0    # log(1/l~) along the benchmark
    mh = 0.0   # log(l) along the all-wrong path
    for k in range(1, horizon + 1):
        jj = int(m) if m == math.floor(m) else math.ceil(m)
        if jj == 0:
            rho2_h, rho2_l = b / c, s / c
        else:
            rho2_h = (c - fam.r_tail(jj, s)) / c
            rho2_l = (c - fam.f1(jj - 1, b)) / c
        m += math.log(rho2_h / rho2_l)
        jk = int(m) if m == math.floor(m) else math.ceil(m)
        if jk == 0:
            d = (b - s) / c
        else:
            d = (fam.f1(jk - 1, b) - fam.r_tail(jk, s)) / c
        need = psi / (k + 1) ** nu
        # mirror condition: P(correct action) at the all-wrong node beats the
        # same demand (needed for the expected-tau bound chain and node-level
        # activity away from the benchmark path)
        qq = int(math.floor(mh))
        rho2_h_wrong = fam.f1(qq, b) / c
        mm = min(d / need, rho2_h_wrong / need) - 1.0
        if mm < tail_margin:
            tail_margin = mm
            if mm <= _MARGIN_FLOOR:
                return mm, tail_margin, max(m, mh)
        rho1_h = (c - fam.f1(qq, b)) / c
        rho1_l = (c - fam.r_tail(qq + 1, s)) / c
        mh += math.log(rho1_l / rho1_h)
    return min(k0_margin, tail_margin), tail_margin, max(m, mh)


_THETA_B_CANDIDATES = (0.5, 0.35, 0.65, 0.2, 0.8, 0.9)
_M1_SCAN = tuple(np.linspace(0.7, 3.5, 15))
_BETA_SCAN = (8.0, 5.0, 11.0, 3.5)


def _candidates(psi: float):
    """Deterministic knob list: (theta_b, m1_target, beta, is_bracket)."""
    out = []
    for beta in _BETA_SCAN:
        for tb in _THETA_B_CANDIDATES:
            b = psi + (1.0 - psi) * tb
            out.append((tb, 1.0 + 1.0 / (2.0 * b + 2.0), beta, True))
            for m1 in _M1_SCAN:
                out.append((tb, float(m1), beta, False))
    return out


def _band_margin(pair: BeliefPair, params: InformativeParams, depth: int) -> float:
    """Node-level weak-activity margin over the full depth-`depth` tree.

    Walks every reachable logit value (far fewer than 2^depth nodes since
    jumps depend only on floor(log l)) and returns the worst slack of
    P^H(|jump| > psi/(k+1)^nu) against psi/(2 (k+1)^nu), relative.
    """
    psi, nu = params.psi, params.nu
    thetas = [0.0]
    worst = math.inf
    for k in range(depth):
        size = psi / (k + 1) ** nu
        floor_p = 0.5 * size
        nxt = []
        seen = set()
        for th in thetas:
            f_h = pair.cdf_logit("H", th)
            f_l = pair.cdf_logit("L", th)
            prob = 0.0
            children = []
            if f_h > 0.0:
                if abs(f_l / f_h - 1.0) > size:
                    prob += f_h
                children.append(th + math.log(f_l / f_h))
            if f_h < 1.0:
                if abs((1.0 - f_l) / (1.0 - f_h) - 1.0) > size:
                    prob += 1.0 - f_h
                children.append(th + math.log((1.0 - f_l) / (1.0 - f_h)))
            worst = min(worst, (prob - floor_p) / floor_p)
            if worst <= 0:
                return worst
            for c in children:
                key = round(c, 9)
                if key not in seen:
                    seen.add(key)
                    nxt.append(c)
        thetas = nxt
    return worst


def construct_informative_pair(
    params: InformativeParams,
    truncation: int,
    variant: int = 0,
) -> BeliefPair:
    """Build a pair passing `is_informative` up to `truncation` with margin.

    `variant` selects among distinct passing parameterizations (0 = best),
    used to exercise uniformity claims across several pairs sharing (psi, nu).
    """
    if not isinstance(params, InformativeParams):
        params = InformativeParams(*params)
    if truncation < 100:
        raise ValueError("truncation must be >= 100")
    if variant < 0:
        raise ValueError("variant must be >= 0")
    psi, nu = params.psi, params.nu
    q_table = _q_table(psi, nu)

    scored = []
    for tb, m1, beta, is_bracket in _candidates(psi):
        fam = _Family(psi, nu, q_table, beta)
        b = psi + (1.0 - psi) * tb
        s = b * math.exp(-m1)
        cap = 0.98 * min(b - psi, b * (1.0 - psi) / (1.0 + psi))
        clamped = s >= cap
        if clamped:
            s = cap
        m1_eff = math.log(b / s)
        in_bracket = 1.0 < m1_eff < 1.0 + 2.0 / (2.0 * b + 2.0)
        margin, tail_margin, reach = _sweep(fam, b, s, truncation)
        scored.append(
            {
                "theta_b": tb,
                "b": b,
                "S": s,
                "m1": m1_eff,
                "beta": beta,
                "margin": margin,
                "tail_margin": tail_margin,
                "reach": reach,
                "bracket": is_bracket and in_bracket and not clamped,
            }
        )

    passing = [c for c in scored if c["margin"] > _MARGIN_FLOOR]
    if not passing:
        best = max(scored, key=lambda c: c["margin"])
        raise ConstructionInfeasibleError(
            f"no (theta_b, S, beta) candidate satisfies the informativeness "
            f"inequality up to k={truncation} for psi={psi}, nu={nu} "
            f"(best margin {best['margin']:.4g})"
        )
    # Prefer the paper's bracketed first step when it passes comfortably;
    # otherwise hug the demanded decay rate: the tightest instance whose
    # slack still clears a safety floor (loose instances learn so fast that
    # the wrong-action tail becomes unmeasurable, defeating the family's
    # point of decaying no faster than required).
    passing.sort(
        key=lambda c: (
            round(abs(c["tail_margin"] - 0.12), 2) if c["margin"] >= 0.05 else 10.0 + c["margin"],
            -c["beta"],
            -c["margin"],
            c["theta_b"],
            c["m1"],
        )
    )
    good_brackets = [
        c for c in passing
        if c["bracket"] and c["margin"] >= 0.08 and c["tail_margin"] <= 0.8
    ]
    ranked = good_brackets + [c for c in passing if c not in good_brackets]
    seen, distinct = set(), []
    for c in ranked:
        key = (round(c["theta_b"], 6), round(c["m1"], 6), c["beta"])
        if key not in seen:
            seen.add(key)
            distinct.append(c)

    # materialize, then confirm both the benchmark inequality and the
    # node-level activity band on the actual grid; fall through to the next
    # distinct candidate if either exact check disagrees with the sweep
    skipped = variant
    attempts = 0
    for chosen in distinct:
        attempts += 1
        fam = _Family(psi, nu, q_table, chosen["beta"])
        pair = _materialize(params, fam, chosen, truncation)
        final = is_informative(pair, params, truncation)
        if not final.passed:
            continue
        band = _band_margin(pair, params, min(_BAND_DEPTH, truncation))
        if band <= 0:
            continue
        if skipped > 0:
            skipped -= 1
            continue
        pair.construction["verified_min_margin"] = final.min_margin
        pair.construction["band_margin"] = band
        return pair
    raise ConstructionInfeasibleError(
        f"no candidate passed exact verification for psi={psi}, nu={nu}, "
        f"variant={variant} ({attempts} tried)"
    )


def _materialize(
    params: InformativeParams, fam: _Family, knobs: dict, truncation: int
) -> BeliefPair:
    psi, nu = params.psi, params.nu
    b, s, m1, beta = knobs["b"], knobs["S"], knobs["m1"], knobs["beta"]
    c = b + s
    r2 = fam.r_tail(2, s)
    if s <= r2 or math.log((b - psi) / (s - r2)) <= 0.0:
        raise ConstructionInfeasibleError(
            f"damped-mass target S={s:.4g} unreachable with beta={beta} "
            f"for psi={psi}, nu={nu}"
        )
    b1 = math.log((b - psi) / (s - r2))
    if b1 >= beta + math.log(2.0):
        raise ConstructionInfeasibleError(
            f"damping exponent b_1={b1:.4g} not below b_2 for psi={psi}, nu={nu}"
        )

    # grid half-width: covers any path of `truncation` steps (max per-step
    # log jump is m1 at the tie band, beta+ln j on the damped ladder)
    t = int(
        math.ceil(
            (truncation + 2) * (m1 + 1.0)
            + 2.0 * (beta + math.log(truncation + 4.0) + 16.0)
        )
    )

    j = np.arange(1, t, dtype=np.float64)
    f1_jm1 = np.where(j == 1, b, psi * np.maximum(j - 1.0, 1.0) ** (-nu))
    f1_j = psi * j ** (-nu)
    f_pos = f1_jm1 - f1_j
    bk = beta + np.log(j)
    bk[0] = b1
    f_neg = f_pos * np.exp(-bk)

    mass = np.zeros(2 * t + 1, dtype=np.float64)
    mass[t + 1 : 2 * t] = f_pos
    mass[2 * t] = f1_j[-1]                    # fold: sum_{i>=t} f(i) = f1(t-1)
    mass[t - 1 : 0 : -1] = f_neg
    mass[0] = fam.r_tail(t, s)                # fold of the damped tail
    mass /= mass.sum()

    meta = {
        "psi": psi,
        "nu": nu,
        "a": b,
        "b": b,
        "S": s,
        "C": c,
        "b1": b1,
        "m1": m1,
        "beta": beta,
        "theta_b": knobs["theta_b"],
        "T_max": t,
        "truncation": truncation,
        "margin": knobs["margin"],
        "tail_margin": knobs["tail_margin"],
        "reach": knobs["reach"],
        "bracket": knobs["bracket"],
        "b_seq": bk.tolist(),
    }
    return BeliefPair(
        grid=np.arange(-t, t + 1, dtype=np.int64),
        mass_H=mass,
        mass_L=mass[::-1].copy(),
        construction=meta,
    )


def equal_mass_pair(half_width: int = 8) -> BeliefPair:
    """Degenerate control: mass_H == mass_L (zero-information test double)."""
    t = half_width
    grid = np.arange(-t, t + 1, dtype=np.int64)
    w = np.exp(-0.5 * np.abs(grid).astype(np.float64))
    w /= w.sum()
    return BeliefPair(
        grid=grid, mass_H=w, mass_L=w.copy(), construction={"degenerate": True}
    )
