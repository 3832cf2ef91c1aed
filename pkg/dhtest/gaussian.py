"""
Closed forms for scalar Gaussian distributed hypothesis testing.

Two families live here: the inner and outer bounds for a pair of
correlations (rho0 under H0, rho1 under H1) of (X1, Y), and the rate-exponent
region of the many-help-one problem (X_l = X + N_l at the helpers, Y = X + N
at the detector), with the CEO and one-helper specializations.
"""

import csv
import itertools
import logging
import math
from typing import IO, List, Optional, Sequence, Tuple, Union

import numpy as np

from dhtest._config import resolve_threads
from dhtest._helpers import LOG2E, _log2_plus, _thread_map
from dhtest.data_model import (
    Covariance2x2,
    CurvePoint,
    GaussianBinaryHypothesis,
    LatentDecomposition,
    MembershipResult,
    MembershipStatus,
    MHOParams,
    RateExponentPoint,
    RegionClass,
    RegionCurve,
    RegionLabel,
)
from dhtest.exceptions import DomainError, ShapeMismatchError, UntractableRegionError

logger = logging.getLogger(__name__)

MEMBERSHIP_TOL = 1e-6
GRID_STEP = 0.01
GRID_MAX_POINTS = 200_000
REFINE_STEP = 1e-7
REFINE_TOP = 5

# 1 - 2^(-2r) equals 1 in double precision well before this
_RATE_CAP = 40.0


# ---------------------------------------------------------------------------
# Pairs of correlations
# ---------------------------------------------------------------------------


def centralized_exponent_g(h: GaussianBinaryHypothesis) -> float:
    """
    D(p_{X1 Y} || q_{X1 Y}) in bits for unit-variance pairs with correlations
    rho0 and rho1.
    """
    r0, r1 = h.rho0, h.rho1
    return 0.5 * math.log2((1 - r1**2) / (1 - r0**2)) - LOG2E * r1 * (r0 - r1) / (1 - r1**2)


def conditional_kl_D3(rho1: float) -> float:
    """
    2 log2(e) rho1 / (1 - rho1): the offset C of the outer bound on D3.
    """
    if not 0 <= rho1 < 1:
        raise DomainError(f"rho1 must lie in [0, 1), got {rho1}")
    return 2 * LOG2E * rho1 / (1 - rho1)


def classify(h: GaussianBinaryHypothesis) -> RegionClass:
    """
    Place (rho0, rho1) in D1, D2, D3 or Untractable, with rho and C.

    :param h: Canonical pair (rho1 >= 0).
    """
    r0, r1 = h.rho0, h.rho1
    centralized = centralized_exponent_g(h)
    if 0 <= r1 < r0 < 1:
        return RegionClass(label=RegionLabel.D1, rho=(r0 - r1) / (1 - r1), C=0.0, centralized=centralized)
    if 2 * r1 - 1 <= r0 < r1:
        return RegionClass(label=RegionLabel.D2, rho=(r0 - r1) / (1 - r1), C=0.0, centralized=centralized)
    if -1 < r0 <= 2 * r1 - 1:
        C = conditional_kl_D3(r1)
        if C <= centralized:
            return RegionClass(
                label=RegionLabel.D3, rho=(r0 + r1) / (1 - r1), C=C, centralized=centralized
            )
    return RegionClass(label=RegionLabel.UNTRACTABLE, centralized=centralized)


def _tractable(h: GaussianBinaryHypothesis) -> RegionClass:
    region = classify(h)
    if not region.tractable:
        raise UntractableRegionError(
            f"(rho0, rho1) = ({h.rho0}, {h.rho1}) lies outside D1, D2 and D3"
        )
    return region


def _check_rate(R1: float) -> None:
    if not R1 >= 0:
        raise DomainError(f"rate must be nonnegative, got {R1}")


def outer_E_raw(h: GaussianBinaryHypothesis, R1: float) -> float:
    """
    1/2 log2(1 / (1 - rho^2 + rho^2 2^(-2 R1))) + C, before intersecting with
    the centralized exponent.
    """
    _check_rate(R1)
    region = _tractable(h)
    rho2 = region.rho**2
    denom = 1 - rho2 + rho2 * 2 ** (-2 * R1)
    if denom <= 0:
        return math.inf
    return 0.5 * math.log2(1 / denom) + region.C


def outer_E(h: GaussianBinaryHypothesis, R1: float) -> float:
    """
    Outer bound on the exponent at rate R1, intersected with the centralized
    exponent.

    :param h: Pair in D1, D2 or D3.
    :param R1: Encoder rate in bits.
    """
    return min(outer_E_raw(h, R1), centralized_exponent_g(h))


def inner_E(h: GaussianBinaryHypothesis, R1: float) -> float:
    """
    Exponent achieved by quantizing X1 with a Gaussian test channel at rate R1.
    """
    _check_rate(R1)
    r0, r1 = h.rho0, h.rho1
    a = 1 - 2 ** (-2 * R1)
    return 0.5 * math.log2((1 - r1**2 * a) / (1 - r0**2 * a)) - LOG2E * r1 * (r0 - r1) * a / (
        1 - r1**2 * a
    )


def ac_covariances(h: GaussianBinaryHypothesis, R1: float) -> Tuple[Covariance2x2, Covariance2x2]:
    """
    Covariances of (U, Y) under H0 and H1 for U = X1 + P with
    Var(P) = 1 / (2^(2 R1) - 1).
    """
    if not R1 > 0:
        raise DomainError(f"test channel needs a positive rate, got {R1}")
    s = 1 / (2 ** (2 * R1) - 1)
    return (
        Covariance2x2(xx=1 + s, xy=h.rho0, yy=1.0),
        Covariance2x2(xx=1 + s, xy=h.rho1, yy=1.0),
    )


def gaussian_kl(K0: Covariance2x2, K1: Covariance2x2) -> float:
    """
    D(N(0, K0) || N(0, K1)) in bits.
    """
    trace = float(np.trace(np.linalg.solve(K1.matrix, K0.matrix)))
    return 0.5 * math.log2(K1.det / K0.det) - LOG2E + 0.5 * LOG2E * trace


def decomposition(h: GaussianBinaryHypothesis) -> LatentDecomposition:
    """
    Coefficients of (X1, Y) over independent standard normals (Z, Z', W, V)
    under both hypotheses.
    """
    region = _tractable(h)
    r0, r1 = h.rho0, h.rho1

    def root(v: float) -> float:
        if v < -1e-12:
            raise DomainError(f"negative radicand {v} for ({r0}, {r1})")
        return math.sqrt(max(v, 0.0))

    a, b = root(r1), root(1 - r1)
    h1 = [[a, 0.0, b, 0.0], [a, 0.0, 0.0, b]]
    if region.label == RegionLabel.D1:
        c, d = root(r0 - r1), root(1 - r0)
        h0 = [[a, c, d, 0.0], [a, c, 0.0, d]]
    elif region.label == RegionLabel.D2:
        c, d = root(r1 - r0), root(1 - 2 * r1 + r0)
        h0 = [[a, c, d, 0.0], [a, -c, 0.0, d]]
    else:
        c, d = root(-r0 - r1), root(1 + r0)
        h0 = [[a, c, d, 0.0], [-a, -c, 0.0, d]]
    return LatentDecomposition(label=region.label, h0=h0, h1=h1)


def sweep_curves(
    h: GaussianBinaryHypothesis, R1_grid: Sequence[float], threads: Optional[int] = None
) -> RegionCurve:
    """
    Inner, outer and centralized bounds on a grid of rates.

    :param h: Pair in D1, D2 or D3.
    :param R1_grid: Nonnegative rates, in output order.
    :param threads: Worker threads (env DHTEST_THREADS, default 1).
    """
    region = _tractable(h)
    grid = [float(R) for R in R1_grid]
    if not grid:
        raise DomainError("rate grid is empty")
    for R in grid:
        _check_rate(R)

    def point(R: float) -> CurvePoint:
        return CurvePoint(
            R1=R,
            inner=inner_E(h, R),
            outer=outer_E(h, R),
            outer_raw=outer_E_raw(h, R),
            centralized=region.centralized,
        )

    points = _thread_map(point, grid, resolve_threads(threads))
    logger.info(f"swept {len(points)} rates for region {region.label.value}")
    return RegionCurve(hypothesis=h, region=region, points=points)


def write_curve_csv(curve: RegionCurve, path_or_stream: Union[str, IO[str]]) -> None:
    """
    CSV with header R1,E_inner,E_outer,E_centralized and 12 significant digits.
    """
    if isinstance(path_or_stream, str):
        with open(path_or_stream, "w", newline="") as f:
            write_curve_csv(curve, f)
        return
    writer = csv.writer(path_or_stream, lineterminator="\n")
    writer.writerow(["R1", "E_inner", "E_outer", "E_centralized"])
    for pt in curve.points:
        writer.writerow([f"{v:.12g}" for v in (pt.R1, pt.inner, pt.outer, pt.centralized)])


# ---------------------------------------------------------------------------
# Many-help-one
# ---------------------------------------------------------------------------


def mho_D(E: float, p: MHOParams) -> float:
    """
    D = (sigma2_x + sigma2_n) 2^(-2E) - sigma2_n; the region is empty when D <= 0.
    """
    if not E >= 0:
        raise DomainError(f"exponent must be nonnegative, got {E}")
    return (p.sigma2_x + p.sigma2_n) * 2 ** (-2 * E) - p.sigma2_n


def mho_E_of_D(D: float, p: MHOParams) -> float:
    """
    Inverse of mho_D for 0 < D <= sigma2_x.
    """
    if not 0 < D <= p.sigma2_x:
        raise DomainError(f"D must lie in (0, {p.sigma2_x}], got {D}")
    return 0.5 * math.log2((p.sigma2_x + p.sigma2_n) / (D + p.sigma2_n))


def _subsets(L: int) -> List[Tuple[int, ...]]:
    return [s for k in range(L + 1) for s in itertools.combinations(range(L), k)]


def _worst_slack(r: np.ndarray, pt: RateExponentPoint, p: MHOParams, D: float) -> np.ndarray:
    """
    Minimum over subsets S of
        R + sum_S R_l - 1/2 log+[(1/D)(1/sigma2_x + sum_{S^c} (1 - 2^(-2 r_l)) / sigma2_l)^(-1)] - sum_S r_l
    for each row of r.
    """
    r = np.atleast_2d(r)
    rates = np.asarray(pt.helper_rates, dtype=float)
    gains = (1 - 2 ** (-2 * r)) / np.asarray(p.helper_noise, dtype=float)
    worst = np.full(r.shape[0], np.inf)
    for s in _subsets(p.L):
        inside = np.zeros(p.L, dtype=bool)
        inside[list(s)] = True
        precision = 1 / p.sigma2_x + gains[:, ~inside].sum(axis=1)
        need = np.maximum(0.5 * np.log2(1 / (D * precision)), 0.0) + r[:, inside].sum(axis=1)
        have = pt.main_rate + rates[inside].sum()
        worst = np.minimum(worst, have - need)
    return worst


def _axis(upper: float, step: float) -> np.ndarray:
    return np.unique(np.append(np.arange(0.0, upper, step), upper))


def _pattern_search(
    r: np.ndarray, upper: np.ndarray, step: float, slack_fn
) -> Tuple[np.ndarray, float]:
    best = slack_fn(r)
    while step >= REFINE_STEP:
        improved = False
        for l in range(r.size):
            for sign in (1.0, -1.0):
                candidate = r.copy()
                candidate[l] = min(max(r[l] + sign * step, 0.0), upper[l])
                value = slack_fn(candidate)
                if value > best:
                    r, best, improved = candidate, value, True
        if not improved:
            step /= 2
    return r, best


def mho_membership(pt: RateExponentPoint, p: MHOParams) -> MembershipResult:
    """
    Whether (R, R_1..R_L, E) lies in the many-help-one rate-exponent region,
    by a grid search over the witness r in [0, R_l] followed by pattern-search
    refinement of the best grid points.

    :param pt: Rates, exponent and (ignored) witness.
    :param p: Source and noise variances, L <= 3.
    """
    if len(pt.helper_rates) != p.L:
        raise ShapeMismatchError(f"{len(pt.helper_rates)} helper rates for {p.L} helpers")
    if p.L > 3:
        raise DomainError(f"membership search supports at most 3 helpers, got {p.L}")
    D = mho_D(pt.exponent, p)
    if D <= 0:
        return MembershipResult(
            member=False,
            status=MembershipStatus.EXCEEDS_CENTRALIZED,
            slack=-math.inf,
            distortion=D,
        )

    upper = np.minimum(np.asarray(pt.helper_rates, dtype=float), _RATE_CAP)
    step = GRID_STEP
    while math.prod(math.ceil(u / step) + 1 for u in upper) > GRID_MAX_POINTS:
        step *= 1.5
    axes = [_axis(u, step) for u in upper]
    grid = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
    slacks = _worst_slack(grid, pt, p, D)
    top = np.argsort(-slacks, kind="stable")[:REFINE_TOP]

    def slack_fn(r: np.ndarray) -> float:
        return float(_worst_slack(r, pt, p, D)[0])

    best_r, best = grid[top[0]], float(slacks[top[0]])
    for i in top:
        r, value = _pattern_search(grid[i].copy(), upper, step, slack_fn)
        if value > best:
            best_r, best = r, value

    member = best >= -MEMBERSHIP_TOL
    logger.debug(f"membership grid of {len(grid)} points, best worst-slack {best:.3g}")
    return MembershipResult(
        member=member,
        status=MembershipStatus.MEMBER if member else MembershipStatus.OUTSIDE,
        witness=[float(v) for v in best_r] if member else None,
        slack=best,
        distortion=D,
    )


def ceo_membership(helper_rates: Sequence[float], E: float, p: MHOParams) -> MembershipResult:
    """
    CEO region: many-help-one membership with no rate at the main encoder.
    """
    return mho_membership(
        RateExponentPoint(main_rate=0.0, helper_rates=list(helper_rates), exponent=E), p
    )


def _one_helper_rho2(p: MHOParams) -> float:
    if p.L != 1:
        raise DomainError(f"one-helper formulas need exactly one helper, got {p.L}")
    return p.sigma2_x / (p.sigma2_x + p.helper_noise[0])


def oh_min_R(R1: float, E: float, p: MHOParams) -> float:
    """
    Minimum main-encoder rate for helper rate R1 and exponent E; +inf when
    E is above the centralized exponent.
    """
    _check_rate(R1)
    rho2 = _one_helper_rho2(p)
    D = mho_D(E, p)
    if D <= 0:
        return math.inf
    return 0.5 * _log2_plus((p.sigma2_x / D) * (1 - rho2 + rho2 * 2 ** (-2 * R1)))


def oh_witness(R1: float, p: MHOParams) -> float:
    """
    The helper quantization rate r1 = R1 + 1/2 log2(1 - rho^2 + rho^2 2^(-2 R1))
    that minimizes oh_tilde_objective.
    """
    _check_rate(R1)
    rho2 = _one_helper_rho2(p)
    return R1 + 0.5 * math.log2(1 - rho2 + rho2 * 2 ** (-2 * R1))


def oh_tilde_objective(r1: float, R1: float, E: float, p: MHOParams) -> float:
    """
    max{1/2 log+[(1/D)(1/sigma2_x + (1 - 2^(-2 r1)) / sigma2_1)^(-1)],
        1/2 log+[sigma2_x / D] + r1 - R1}
    """
    _one_helper_rho2(p)
    D = mho_D(E, p)
    if D <= 0:
        return math.inf
    precision = 1 / p.sigma2_x + (1 - 2 ** (-2 * r1)) / p.helper_noise[0]
    return max(
        0.5 * _log2_plus(1 / (D * precision)),
        0.5 * _log2_plus(p.sigma2_x / D) + r1 - R1,
    )
