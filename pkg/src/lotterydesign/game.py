"""Perturbed fixed-prize lottery game: payoffs, equilibrium, sensitivities.

Players simultaneously invest s_i >= 0. If total investment covers the reward
R, player i receives the reward share (s_i - c_i)/(sum_j s_j - sum_j c_j)*R,
benefit h_i(sum_j s_j - R) from the financed public good, and pays s_i;
otherwise the lottery is canceled and everyone gets zero. The designer-chosen
offsets c_i shift each player's winning odds while the shares still sum to one.

The unique Nash equilibrium is computed by an active-set loop around a scalar
root-find on the aggregate first-order condition of the active players.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .benefit import BenefitProfile
from .errors import (
    DomainError,
    InfeasibleRegimeError,
    InvariantViolationError,
    NonconvergenceError,
    SingularPoolError,
    UnsupportedRegimeError,
)

# Investments below this are reported as inactive.
TOL_ACTIVE = 1e-9
# Required accuracy of the first-order conditions at a returned equilibrium.
FOC_TOL = 1e-8
# Inactive players are pulled back in when their residual exceeds this.
_TOL_ADD = 1e-10
# Smallest admissible pool when bracketing the aggregate FOC.
_POOL_FLOOR = 1e-12


@dataclass(frozen=True)
class LotteryInstance:
    """Game definition: a benefit profile plus optional per-player wealth caps."""

    profile: BenefitProfile
    wealth_caps: np.ndarray | None = None

    def __post_init__(self):
        if self.wealth_caps is not None:
            caps = np.asarray(self.wealth_caps, dtype=float)
            if caps.shape != (self.profile.n_players,):
                raise InvariantViolationError("wealth caps must match the player count")
            if np.any(caps <= 0.0):
                raise InvariantViolationError("wealth caps must be positive")
            caps.setflags(write=False)
            object.__setattr__(self, "wealth_caps", caps)

    @property
    def n_players(self) -> int:
        return self.profile.n_players


@dataclass(frozen=True)
class DesignPoint:
    """The planner's decision: reward R > 0 and perturbation vector c >= 0."""

    reward: float
    perturbation: np.ndarray
    perturbation_total: float = field(init=False)

    def __post_init__(self):
        if not (self.reward > 0.0) or not math.isfinite(self.reward):
            raise InvariantViolationError(f"reward must be positive, got {self.reward!r}")
        c = np.asarray(self.perturbation, dtype=float).copy()
        if c.ndim != 1 or c.size < 1:
            raise InvariantViolationError("perturbation must be a nonempty vector")
        if np.any(c < 0.0) or not np.all(np.isfinite(c)):
            raise InvariantViolationError("perturbation entries must be finite and >= 0")
        c.setflags(write=False)
        object.__setattr__(self, "perturbation", c)
        object.__setattr__(self, "perturbation_total", float(c.sum()))


@dataclass(frozen=True)
class EquilibriumResult:
    """Solved equilibrium with activity and consistency diagnostics."""

    s_star: np.ndarray
    active_set: tuple[int, ...]
    G: float
    pool: float
    max_foc_violation: float
    iterations: int


def _check_profile_shape(instance: LotteryInstance, design: DesignPoint, s) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    n = instance.n_players
    if s.shape != (n,):
        raise DomainError(f"investment vector must have length {n}, got shape {s.shape}")
    if design.perturbation.shape != (n,):
        raise InvariantViolationError("design point does not match the player count")
    if np.any(s < 0.0):
        raise DomainError("investments must be nonnegative")
    return s


def payoff(instance: LotteryInstance, design: DesignPoint, s, i: int) -> float:
    """Player i's payoff at investment profile s.

    Returns 0 when total investment falls short of the reward (the lottery is
    canceled and stakes are returned). With all perturbations zero this is the
    classic proportional-odds payoff. A negative reward share is kept as-is:
    the player pays that amount back to the planner.
    """
    s = _check_profile_shape(instance, design, s)
    R = design.reward
    total = float(s.sum())
    if total < R:
        return 0.0
    pool = total - design.perturbation_total
    if pool == 0.0:
        raise SingularPoolError(
            "total investment equals total perturbation: reward shares are undefined"
        )
    share = (s[i] - design.perturbation[i]) / pool
    return float(share * R + instance.profile.functions[i].value(total - R) - s[i])


def foc_residual(instance: LotteryInstance, design: DesignPoint, s, i: int) -> float:
    """Marginal payoff dU_i/ds_i at profile s (the first-order-condition residual).

    Zero for active equilibrium players, nonpositive for inactive ones.
    """
    s = _check_profile_shape(instance, design, s)
    R = design.reward
    total = float(s.sum())
    if total < R:
        raise DomainError("first-order condition undefined while the lottery is canceled")
    pool = total - design.perturbation_total
    if pool <= 0.0:
        raise SingularPoolError("first-order condition requires a positive pool")
    own = s[i] - design.perturbation[i]
    slope = instance.profile.functions[i].slope(total - R)
    return float(R * (pool - own) / pool**2 + slope - 1.0)


def _aggregate_foc(profile: BenefitProfile, active: list[int], R: float,
                   deficit: float, inactive_c: float, G: float) -> float:
    # Sum of active players' marginal payoffs as a function of the good G;
    # `deficit` is c_bar - R, so the pool is S = G - deficit.
    S = G - deficit
    slopes = sum(profile.functions[k].slope(G) for k in active)
    n_a = len(active)
    return R * (n_a - 1) / S - R * inactive_c / S**2 + slopes - n_a


def _aggregate_foc_slope(profile: BenefitProfile, active: list[int], R: float,
                         deficit: float, inactive_c: float, G: float) -> float:
    S = G - deficit
    curv = sum(profile.functions[k].curvature(G) for k in active)
    n_a = len(active)
    return -R * (n_a - 1) / S**2 + 2.0 * R * inactive_c / S**3 + curv


def _solve_aggregate_foc(profile, active, R, c_bar, inactive_c):
    """Root of the active players' aggregate FOC over goods G, or None.

    The domain keeps the good nonnegative and the pool S = R + G - c_bar
    positive. The good, not the pool, is the root variable: at large rewards
    the pool dwarfs the good and recovering G from S would cancel
    catastrophically. With no perturbation mass on inactive players the
    residual is strictly decreasing; otherwise it can dip negative near the
    pool floor, so the bracket hunt scans a doubling ladder for the final
    down-crossing.
    """
    deficit = c_bar - R
    g_lo = max(0.0, deficit + max(_POOL_FLOOR, 4e-16 * abs(deficit)))

    def f(G):
        return _aggregate_foc(profile, active, R, deficit, inactive_c, G)

    lo, f_lo = g_lo, f(g_lo)
    if f_lo <= 0.0:
        # Hunt for a positive stretch further up the ladder (possible only
        # when inactive players carry perturbation mass).
        found = False
        for _ in range(200):
            hi = 2.0 * lo if lo > 0.0 else 1.0
            if f(hi) > 0.0:
                lo, f_lo = hi, f(hi)
                found = True
                break
            lo = hi
            if lo > 1e30:
                break
        if not found:
            return None
    hi = 2.0 * lo if lo > 0.0 else 1.0
    for _ in range(400):
        if f(hi) < 0.0:
            break
        lo = hi
        hi *= 2.0
    else:  # pragma: no cover - residual always goes negative for large goods
        return None
    G = brentq(f, lo, hi, xtol=1e-13, rtol=8.9e-16)
    # Newton polish: the recovered investments inherit any residual error
    # scaled by S^2/R, so push it to machine level.
    for _ in range(3):
        r = f(G)
        if abs(r) <= 1e-15 * max(1.0, len(active)):
            break
        d = _aggregate_foc_slope(profile, active, R, deficit, inactive_c, G)
        if d == 0.0:  # pragma: no cover
            break
        step = r / d
        if G - step <= g_lo:
            break
        G -= step
    return G


def solve_equilibrium(instance: LotteryInstance, design: DesignPoint,
                      active_init=None) -> EquilibriumResult:
    """Compute the unique Nash equilibrium at a design point.

    Outer loop over candidate active sets: solve the aggregate FOC for the
    pool, recover individual investments from the per-player FOCs, then drop
    the most negative investment or re-add the most violating inactive player
    until every sign condition holds. `active_init` seeds the candidate set
    (defaults to all players); any seed converges to the same equilibrium.
    """
    n = instance.n_players
    R = design.reward
    c = design.perturbation
    if c.shape != (n,):
        raise InvariantViolationError("design point does not match the player count")
    c_bar = design.perturbation_total

    if active_init is None:
        active = list(range(n))
    else:
        active = sorted(set(int(k) for k in active_init))
        if not active or active[0] < 0 or active[-1] >= n:
            raise InvariantViolationError("active_init must be a nonempty subset of players")

    profile = instance.profile
    max_iter = max(2 * n, 2)
    s = np.zeros(n)
    S = G = None
    for iteration in range(1, max_iter + 1):
        inactive = [k for k in range(n) if k not in active]
        inactive_c = float(c[inactive].sum()) if inactive else 0.0
        G = _solve_aggregate_foc(profile, active, R, c_bar, inactive_c)
        if G is None:
            if len(active) < n:
                # The candidate set cannot support an equilibrium; grow it by
                # the steepest excluded benefit and retry.
                best = max(inactive, key=lambda k: profile.functions[k].slope(0.0))
                active.append(best)
                active.sort()
                continue
            raise InfeasibleRegimeError(
                "aggregate first-order condition has no root with a positive pool; "
                "total perturbation exceeds what the reward and public good can cover"
            )
        S = G - (c_bar - R)
        slopes = profile.slopes(G)
        s = np.zeros(n)
        for k in active:
            s[k] = c[k] + S - S * S * (1.0 - slopes[k]) / R

        worst = min(active, key=lambda k: s[k])
        if s[worst] <= -1e-12:
            active.remove(worst)
            continue

        if inactive:
            residuals = [R * (S + c[k]) / S**2 + slopes[k] - 1.0 for k in inactive]
            j = int(np.argmax(residuals))
            if residuals[j] > _TOL_ADD:
                active.append(inactive[j])
                active.sort()
                continue
        break
    else:
        raise NonconvergenceError(
            f"active-set loop did not settle within {max_iter} iterations"
        )

    s = np.maximum(s, 0.0)
    total = float(s.sum())
    if abs(total - (G + R)) > FOC_TOL:
        raise NonconvergenceError(
            f"aggregate consistency failed: sum s = {total!r} vs G + R = {G + R!r}"
        )

    violation = 0.0
    for k in range(n):
        res = foc_residual(instance, design, s, k)
        violation = max(violation, abs(res) if s[k] > TOL_ACTIVE else max(res, 0.0))

    if instance.wealth_caps is not None:
        over = np.nonzero(s > instance.wealth_caps + 1e-9)[0]
        if over.size:
            warnings.warn(
                f"equilibrium investment exceeds wealth cap for players {over.tolist()}",
                stacklevel=2,
            )

    s.setflags(write=False)
    return EquilibriumResult(
        s_star=s,
        active_set=tuple(k for k in range(n) if s[k] > TOL_ACTIVE),
        G=float(G),
        pool=float(S),
        max_foc_violation=float(violation),
        iterations=iteration,
    )


def _payoff_grid(instance, design, others_sum: float, c_i: float, a_i: float,
                 x: np.ndarray) -> np.ndarray:
    # Vectorized own-payoff over candidate investments x, opponents fixed.
    R = design.reward
    totals = x + others_sum
    out = np.zeros_like(x)
    on = totals >= R
    pools = totals[on] - design.perturbation_total
    with np.errstate(divide="ignore", invalid="ignore"):
        shares = np.where(pools != 0.0, (x[on] - c_i) / pools, np.nan)
    vals = shares * R + a_i * np.log1p(totals[on] - R) - x[on]
    out[on] = np.where(np.isnan(vals), -np.inf, vals)
    return out


def best_response_oracle(instance: LotteryInstance, design: DesignPoint,
                         s_minus_i, i: int, tol: float = 1e-9) -> float:
    """Brute-force best response of player i to fixed opponent investments.

    Coarse grid scan over [0, s_hi] followed by golden-section refinement to
    `tol`; s_hi is expanded until the payoff is decreasing beyond it (the
    payoff falls like -s_i for large investments). Test oracle only: makes no
    use of first-order conditions.
    """
    s_minus_i = np.asarray(s_minus_i, dtype=float)
    n = instance.n_players
    if s_minus_i.shape != (n - 1,):
        raise DomainError(f"expected {n - 1} opponent investments, got {s_minus_i.shape}")
    others_sum = float(s_minus_i.sum())
    c_i = float(design.perturbation[i])
    a_i = instance.profile.functions[i].coefficient
    if instance.profile.functions[i].family != "scaled_log":  # pragma: no cover
        raise InvariantViolationError("oracle supports the scaled_log family only")

    def u(x):
        return float(_payoff_grid(instance, design, others_sum, c_i, a_i,
                                  np.array([x]))[0])

    hi = max(1.0, 2.0 * (design.reward + design.perturbation_total + others_sum + 10.0))
    for _ in range(200):
        if u(hi) < u(hi / 2.0):
            break
        hi *= 2.0

    xs = np.linspace(0.0, hi, 4097)
    kink = max(0.0, design.reward - others_sum)
    if 0.0 < kink < hi:
        xs = np.sort(np.append(xs, [kink, np.nextafter(kink, hi)]))
    vals = _payoff_grid(instance, design, others_sum, c_i, a_i, xs)
    k = int(np.argmax(vals))
    lo = xs[max(k - 1, 0)]
    up = xs[min(k + 1, xs.size - 1)]

    # Golden-section maximization on [lo, up].
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, up
    x1 = b - invphi * (b - a)
    x2 = a + invphi * (b - a)
    f1, f2 = u(x1), u(x2)
    while b - a > tol:
        if f1 >= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - invphi * (b - a)
            f1 = u(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + invphi * (b - a)
            f2 = u(x2)
    x_star = (a + b) / 2.0
    # The canceled-lottery plateau and boundary can beat the interior point.
    candidates = [(u(0.0), 0.0), (u(x_star), x_star)]
    if 0.0 < kink < hi:
        candidates.append((u(kink), kink))
    return max(candidates)[1]


def equilibrium_sensitivities(instance: LotteryInstance, design: DesignPoint,
                              eq: EquilibriumResult) -> tuple[float, np.ndarray]:
    """Closed-form dG/dR and dG/dc_i at an all-active equilibrium.

    Implicit differentiation of the aggregate first-order condition gives
    dG/dR = -(G - c_bar)(N-1) / D and dG/dc_i = -R(N-1) / D with
    D = (R + G - c_bar)^2 * sum_i h_i''(G) - R(N-1) < 0.
    """
    n = instance.n_players
    if len(eq.active_set) != n:
        raise UnsupportedRegimeError(
            "sensitivity formulas require every player active; "
            f"only {len(eq.active_set)} of {n} are"
        )
    R = design.reward
    c_bar = design.perturbation_total
    G = eq.G
    S = R + G - c_bar
    den = S * S * instance.profile.aggregate_curvature(G) - R * (n - 1)
    dG_dR = -(G - c_bar) * (n - 1) / den
    dG_dc = np.full(n, -R * (n - 1) / den)
    return float(dG_dR), dG_dc
