"""
Exponents and bounds for finite-alphabet distributed hypothesis testing:
the quantize-bin-test inner bound, the decode-then-test (SHA) exponents,
the centralized exponent, the coupling checks behind the one-encoder outer
bound, and the sufficient-statistic checks.
"""

import itertools
import logging
import math
from typing import Dict, List, Mapping, Optional, Sequence, Union

import numpy as np

from dhtest._helpers import PRECISION
from dhtest.data_model import (
    ExponentResult,
    HypothesisPair,
    JointPMF,
    OuterBoundResult,
    QBTRegionPoint,
    RateBound,
    SufficientStatisticCheck,
    TestChannel,
    TestChannelSet,
    Variable,
)
from dhtest.exceptions import (
    CardinalityError,
    ChannelConstraintError,
    DomainError,
    InvalidCouplingError,
    NotConditionallyIndependentError,
    ShapeMismatchError,
)
from dhtest.info import (
    _marginal_tensor,
    compose_channel,
    conditional_kl,
    conditional_product,
    entropy,
    kl_divergence,
    marginalize,
    mutual_information,
)
from dhtest.optimizer import ChannelProblem, Functional, information_with_u, search

logger = logging.getLogger(__name__)

# tolerance on rate-constraint membership and the coupling conditions
CONSTRAINT_SLACK = 1e-9
COUPLING_TOL = 1e-9


def _require_ci(h: HypothesisPair) -> None:
    if not h.ci:
        raise NotConditionallyIndependentError(
            "operation needs a pair marked CI (Q = P_(X,side|Z) P_(Y|Z) P_Z)"
        )


def _require_one_encoder(h: HypothesisPair, R1: float) -> None:
    if h.L != 1:
        raise DomainError(f"one-encoder operation needs L = 1, got L = {h.L}")
    if R1 < 0:
        raise DomainError(f"rate must be nonnegative, got {R1}")


def _u_name(p: JointPMF, base: str) -> str:
    name = base
    while name in p.names:
        name += "_"
    return name


# ---------------------------------------------------------------------------
# Quantize-bin-test region
# ---------------------------------------------------------------------------


def qbt_region_point(h: HypothesisPair, lam: TestChannelSet) -> QBTRegionPoint:
    """
    Sum-rate lower bounds for every nonempty encoder subset and the exponent
    upper bound achieved by quantize-bin-test with the given channels.

    :param h: Hypothesis pair marked CI.
    :param lam: One channel per encoder for each time-sharing value.
    """
    _require_ci(h)
    if lam.L != h.L:
        raise ShapeMismatchError(f"{lam.L} channels per variant for {h.L} encoders")
    roles = h.roles
    L = h.L
    for variant in lam.variants:
        for x, ch in zip(roles.x, variant):
            size = h.P.size_of(x)
            if ch.input_size != size:
                raise ShapeMismatchError(
                    f"channel for {x!r} has input size {ch.input_size}, |{x}| = {size}"
                )
            cap = size + 2**L - 1
            if ch.output_size > cap:
                raise CardinalityError(
                    f"channel for {x!r} has {ch.output_size} outputs, cap is {cap}"
                )

    subsets = [
        list(s) for k in range(1, L + 1) for s in itertools.combinations(range(L), k)
    ]
    bounds = np.zeros(len(subsets))
    exponent = 0.0
    side = [roles.side] if roles.side else []
    for weight, variant in zip(lam.time_share, lam.variants):
        if weight <= 0:
            continue
        joint = h.P
        u_names = []
        for l, (x, ch) in enumerate(zip(roles.x, variant)):
            name = _u_name(joint, f"U{l + 1}")
            joint = compose_channel(joint, ch, x, name)
            u_names.append(name)
        for i, s in enumerate(subsets):
            rest = [u_names[l] for l in range(L) if l not in s]
            bounds[i] += weight * mutual_information(
                joint,
                [roles.x[l] for l in s],
                [u_names[l] for l in s],
                rest + side + roles.z_list,
            )
        exponent += weight * mutual_information(joint, roles.y, u_names + side, roles.z_list)

    return QBTRegionPoint(
        bounds=[
            RateBound(subset=[roles.x[l] for l in s], bound=float(b))
            for s, b in zip(subsets, bounds)
        ],
        exponent=float(exponent),
    )


class _OneEncoder:
    """Functionals of the one-encoder problem on P: U generated from x."""

    def __init__(self, h: HypothesisPair):
        roles = h.roles
        self.p = h.P
        self.x = roles.x[0]
        self.side = [roles.side] if roles.side else []
        self.y = roles.y
        self.z = roles.z_list
        self.n_in = self.p.size_of(self.x)
        self.n_out = self.n_in + 1
        self.marginal = _marginal_tensor(self.p, [self.x])
        # I(Y; X2 | Z)
        self.base = (
            mutual_information(self.p, self.y, self.side, self.z) if self.side else 0.0
        )
        # H(X1 | X2, Z): U = X1 is feasible at this rate
        self.saturation = entropy(self.p, self.x, self.side + self.z)
        self.ceiling = mutual_information(self.p, self.y, [self.x] + self.side, self.z)

    def rho1(self) -> Functional:
        # I(Y; U, X2 | Z) = I(Y; X2 | Z) + I(Y; U | X2, Z)
        return information_with_u(self.p, self.x, [self.y], self.side + self.z).shifted(
            self.base
        )

    def qbt_rate(self) -> Functional:
        return information_with_u(self.p, self.x, [self.x], self.side + self.z)

    def sha_rate(self) -> Functional:
        return information_with_u(self.p, self.x, [self.x], self.side + [self.y] + self.z)

    def full_rate(self) -> Functional:
        return information_with_u(self.p, self.x, [self.x])

    def identity(self) -> TestChannel:
        return TestChannel.identity(self.n_in, self.n_out)

    def constant(self) -> TestChannel:
        return TestChannel.constant(self.n_in, self.n_out)


def qbt_exponent_1enc(
    h: HypothesisPair,
    R1: float,
    *,
    restarts: Optional[int] = None,
    seed: int = 0,
    threads: Optional[int] = None,
) -> ExponentResult:
    """
    max I(Y; U, X2 | Z) over channels U from X1 with |U| = |X1| + 1 and
    I(X1; U | X2, Z) <= R1.

    :param h: One-encoder hypothesis pair marked CI.
    :param R1: Encoder rate in bits.
    :param restarts: Random restarts of the channel search.
    :param seed: Master seed of the search.
    :param threads: Worker threads.
    """
    _require_one_encoder(h, R1)
    _require_ci(h)
    enc = _OneEncoder(h)

    if R1 == 0:
        return ExponentResult(scheme="qbt", rate=R1, value=enc.base, channel=enc.constant())
    if R1 >= enc.saturation:
        return ExponentResult(
            scheme="qbt", rate=R1, value=enc.ceiling, channel=enc.identity()
        )

    objective = enc.rho1()
    constraint = (enc.qbt_rate(), R1)
    problem = ChannelProblem(
        enc.marginal,
        enc.n_out,
        objective.value_and_grad,
        [constraint],
        [([objective], [constraint])],
    )
    outcome = search(problem, restarts=restarts, seed=seed, threads=threads)
    value = min(max(outcome.value, 0.0), enc.ceiling)
    logger.info(f"E_QBT({R1:g}) = {value:.6g} after {outcome.restarts} starts")
    return ExponentResult(
        scheme="qbt",
        rate=R1,
        value=value,
        channel=TestChannel(rows=outcome.W),
        restarts=outcome.restarts,
        gap=outcome.gap,
    )


# ---------------------------------------------------------------------------
# Decode-then-test exponents
# ---------------------------------------------------------------------------


def sha_exponents(h: HypothesisPair, ch: TestChannel, R1: float) -> ExponentResult:
    """
    Closed-form competing exponents of the decode-then-test scheme for a
    fixed channel:

        rho1 = I(Y; U, X2 | Z)
        rho2 = +inf                                     if R1 >= I(U; X1)
             = [R1 - I(X1; U | X2, Y, Z)]+ + I(Y; X2 | Z)  otherwise

    :param h: One-encoder hypothesis pair marked CI.
    :param ch: Test channel on X1.
    :param R1: Encoder rate in bits.
    """
    _require_one_encoder(h, R1)
    _require_ci(h)
    enc = _OneEncoder(h)
    if ch.input_size != enc.n_in:
        raise ShapeMismatchError(
            f"channel input size {ch.input_size} does not match |{enc.x}| = {enc.n_in}"
        )
    u = _u_name(h.P, "U")
    joint = compose_channel(h.P, ch, enc.x, u)
    binning = mutual_information(joint, enc.x, u, enc.side + [enc.y] + enc.z)
    if binning > R1 + CONSTRAINT_SLACK:
        raise ChannelConstraintError(
            f"I({enc.x};U|side,Y,Z) = {binning:.6g} exceeds the rate {R1:g}"
        )
    rho1 = mutual_information(joint, enc.y, [u] + enc.side, enc.z)
    if R1 >= mutual_information(joint, u, enc.x):
        rho2 = math.inf
    else:
        rho2 = max(R1 - binning, 0.0) + enc.base
    return ExponentResult(
        scheme="sha", rate=R1, value=min(rho1, rho2), channel=ch, rho1=rho1, rho2=rho2
    )


def _sha_objective(enc: _OneEncoder, R1: float):
    rho1 = enc.rho1()
    binning = enc.sha_rate()
    full = enc.full_rate()
    # finite rho2 piece on A(R1): R1 - I(X1;U|X2,Y,Z) + I(Y;X2|Z)
    rho2 = binning.negated().shifted(R1 + enc.base)

    def objective(W: np.ndarray):
        v1, g1 = rho1.value_and_grad(W)
        if full.value(W) <= R1:
            return v1, g1
        v2, g2 = rho2.value_and_grad(W)
        return (v1, g1) if v1 <= v2 else (v2, g2)

    return objective, rho1, rho2, binning, full


def sha_exponent_1enc(
    h: HypothesisPair,
    R1: float,
    *,
    restarts: Optional[int] = None,
    seed: int = 0,
    threads: Optional[int] = None,
    warm_start: Optional[TestChannel] = None,
) -> ExponentResult:
    """
    max min(rho1, rho2) over channels in A(R1) = {I(X1; U | X2, Y, Z) <= R1}.

    :param h: One-encoder hypothesis pair marked CI.
    :param R1: Encoder rate in bits.
    :param restarts: Random restarts of the channel search.
    :param seed: Master seed of the search.
    :param threads: Worker threads.
    :param warm_start: Optional starting channel, e.g. the QBT optimizer.
    """
    _require_one_encoder(h, R1)
    _require_ci(h)
    enc = _OneEncoder(h)

    if R1 == 0:
        return sha_exponents(h, enc.constant(), R1)
    if R1 >= enc.saturation:
        return sha_exponents(h, enc.identity(), R1)

    objective, rho1, rho2, binning, full = _sha_objective(enc, R1)
    problem = ChannelProblem(
        enc.marginal,
        enc.n_out,
        objective,
        [(binning, R1)],
        [
            ([rho1], [(full, R1)]),
            ([rho1, rho2], [(binning, R1)]),
            ([rho1], [(enc.qbt_rate(), R1)]),
        ],
    )
    extra = []
    if warm_start is not None:
        if warm_start.rows.shape != (enc.n_in, enc.n_out):
            raise ShapeMismatchError(
                f"warm start has shape {warm_start.rows.shape}, expected {(enc.n_in, enc.n_out)}"
            )
        extra.append(np.array(warm_start.rows))
    outcome = search(
        problem, restarts=restarts, seed=seed, threads=threads, extra_starts=extra
    )
    result = sha_exponents(h, TestChannel(rows=outcome.W), R1)
    logger.info(f"E_SHA({R1:g}) = {result.value:.6g} after {outcome.restarts} starts")
    return result.model_copy(update={"restarts": outcome.restarts, "gap": outcome.gap})


def centralized_exponent(h: HypothesisPair) -> float:
    """
    D(P || Q): the exponent with every observation at the detector.
    """
    return kl_divergence(h.P, h.Q)


# ---------------------------------------------------------------------------
# Couplings and the one-encoder outer bound
# ---------------------------------------------------------------------------


def _coupling_variable(
    coupled_P: JointPMF, coupled_Q: JointPMF, original: HypothesisPair, z: Optional[str]
) -> str:
    if coupled_P.names != coupled_Q.names or coupled_P.sizes != coupled_Q.sizes:
        raise ShapeMismatchError(
            f"coupled P and Q disagree: {coupled_P.names}{coupled_P.sizes} vs "
            f"{coupled_Q.names}{coupled_Q.sizes}"
        )
    extra = [n for n in coupled_P.names if n not in original.P.names]
    missing = [n for n in original.P.names if n not in coupled_P.names]
    if missing or len(extra) != 1:
        raise ShapeMismatchError(
            f"coupling must add exactly one variable to {original.P.names}, got {coupled_P.names}"
        )
    if z is not None and z != extra[0]:
        raise ShapeMismatchError(f"coupling variable is {extra[0]!r}, not {z!r}")
    for name in original.P.names:
        if coupled_P.size_of(name) != original.P.size_of(name):
            raise ShapeMismatchError(f"alphabet of {name!r} changed in the coupling")
    return extra[0]


def _sup_distance(a: JointPMF, b: JointPMF) -> float:
    return float(np.max(np.abs(a.probs - b.probs)))


def xi_residuals(
    coupled_P: JointPMF,
    coupled_Q: JointPMF,
    original: HypothesisPair,
    z: Optional[str] = None,
) -> Dict[str, Union[float, str]]:
    """
    Sup-norm residuals of the coupling conditions, keyed C12..C15:

        C12  sum_Z P' = P
        C13  sum_Z Q' = Q
        C14  Q' = Q'_{X|Z} Q'_{Y|Z} Q'_Z
        C15  P'_{XZ} = Q'_{XZ}

    X is every original variable except Y.

    :param coupled_P: P extended with the coupling variable.
    :param coupled_Q: Q extended with the coupling variable.
    :param original: The original pair.
    :param z: Name of the coupling variable; inferred when omitted.
    """
    z = _coupling_variable(coupled_P, coupled_Q, original, z)
    names = original.P.names
    x_group = [n for n in names if n != original.roles.y]
    c12 = _sup_distance(marginalize(coupled_P, names), original.P)
    c13 = _sup_distance(marginalize(coupled_Q, names), original.Q)
    c14 = _sup_distance(
        conditional_product(coupled_Q, [x_group, [original.roles.y]], [z]), coupled_Q
    )
    c15 = _sup_distance(marginalize(coupled_P, x_group + [z]), marginalize(coupled_Q, x_group + [z]))
    return {"C12": c12, "C13": c13, "C14": c14, "C15": c15, "z": z}


def xi_membership(
    coupled_P: JointPMF,
    coupled_Q: JointPMF,
    original: HypothesisPair,
    z: Optional[str] = None,
) -> bool:
    """
    True iff every coupling condition holds within 1e-9.
    """
    residuals = xi_residuals(coupled_P, coupled_Q, original, z)
    return all(residuals[k] <= COUPLING_TOL for k in ("C12", "C13", "C14", "C15"))


def outer_bound_1enc(
    h: HypothesisPair,
    coupled_P: JointPMF,
    coupled_Q: JointPMF,
    R1: float,
    *,
    restarts: Optional[int] = None,
    seed: int = 0,
    threads: Optional[int] = None,
) -> OuterBoundResult:
    """
    One-encoder outer bound for a given coupling Z:

        E <= max_{I(X1;U|Z) <= R1} I(Y; U | Z) + D(P_{Y|Z} || Q_{Y|Z} | Z)

    intersected with the centralized exponent.

    :param h: Original pair with one encoder variable and no side or z role.
    :param coupled_P: P extended with Z.
    :param coupled_Q: Q extended with Z.
    :param R1: Encoder rate in bits.
    """
    _require_one_encoder(h, R1)
    if h.roles.side is not None or h.roles.z is not None:
        raise DomainError("outer bound is computed for pairs without side or z roles")
    residuals = xi_residuals(coupled_P, coupled_Q, h)
    if any(residuals[k] > COUPLING_TOL for k in ("C12", "C13", "C14", "C15")):
        raise InvalidCouplingError(f"coupling fails the conditions: {residuals}")
    z = residuals["z"]
    x, y = h.roles.x[0], h.roles.y
    n_in = coupled_P.size_of(x)
    n_out = n_in + 1

    offset = conditional_kl(coupled_P, coupled_Q, y, z)
    centralized = centralized_exponent(h)

    if R1 == 0:
        best, W, starts, gap = 0.0, TestChannel.constant(n_in, n_out).rows, 0, 0.0
    elif R1 >= entropy(coupled_P, x, z):
        best = mutual_information(coupled_P, y, x, z)
        W, starts, gap = TestChannel.identity(n_in, n_out).rows, 0, 0.0
    else:
        objective = information_with_u(coupled_P, x, [y], [z])
        constraint = (information_with_u(coupled_P, x, [x], [z]), R1)
        problem = ChannelProblem(
            _marginal_tensor(coupled_P, [x]),
            n_out,
            objective.value_and_grad,
            [constraint],
            [([objective], [constraint])],
        )
        outcome = search(problem, restarts=restarts, seed=seed, threads=threads)
        best, W, starts, gap = max(outcome.value, 0.0), outcome.W, outcome.restarts, outcome.gap

    raw = best + offset
    logger.info(f"outer bound at R1 = {R1:g}: raw {raw:.6g}, centralized {centralized:.6g}")
    return OuterBoundResult(
        rate=R1,
        value=min(raw, centralized),
        raw=raw,
        offset=offset,
        centralized=centralized,
        channel=TestChannel(rows=W),
        restarts=starts,
        gap=gap,
    )


# ---------------------------------------------------------------------------
# Sufficient statistics
# ---------------------------------------------------------------------------


def _map_table(x_map, x_vars: Sequence[str], sizes: Sequence[int]) -> np.ndarray:
    total = math.prod(sizes)
    if isinstance(x_map, Mapping):
        table = np.empty(total, dtype=np.int64)
        for flat, symbols in enumerate(itertools.product(*[range(s) for s in sizes])):
            key = symbols if len(symbols) > 1 else symbols[0]
            if key not in x_map and symbols not in x_map:
                raise DomainError(f"x_map has no entry for {dict(zip(x_vars, symbols))}")
            table[flat] = x_map[key] if key in x_map else x_map[symbols]
    else:
        table = np.asarray(x_map, dtype=np.int64).ravel()
        if table.size != total:
            raise DomainError(
                f"x_map has {table.size} entries, the alphabet of {list(x_vars)} has {total}"
            )
    if np.any(table < 0):
        raise DomainError("x_map symbols must be nonnegative")
    return table


def sufficient_statistic_check(
    p: JointPMF,
    x_vars: Sequence[str],
    y: str,
    x_map,
    z: Optional[str] = None,
    x_name: str = "X",
) -> SufficientStatisticCheck:
    """
    Check whether X = x_map(x_vars) can stand in for the encoder variables.

    c5 is conditional independence of (x_vars, Y) given (X, Z) within 1e-9.
    rows_distinct is pairwise sup-norm distinctness (> 1e-9) of the rows of
    P_{Y,Z|X} on symbols of positive mass; it is a necessary check only.

    :param p: Joint pmf over x_vars, y and optionally z.
    :param x_vars: Encoder variables.
    :param y: Detector variable.
    :param x_map: Table from the joint x_vars alphabet (row-major) to X
        symbols, or a mapping from symbol tuples.
    :param z: Optional conditioning variable.
    :param x_name: Name of the derived variable.
    """
    x_vars = list(x_vars)
    zs = [z] if z else []
    names = x_vars + [y] + zs
    sizes = [p.size_of(n) for n in names]
    table = _map_table(x_map, x_vars, sizes[: len(x_vars)])
    if x_name in p.names:
        x_name = _u_name(p, x_name)
    k = int(table.max()) + 1

    base = _marginal_tensor(p, names).reshape(table.size, -1)
    joint = np.zeros((table.size, base.shape[1], k))
    joint[np.arange(table.size), :, table] = base
    joint = joint.reshape(sizes + [k])
    q = JointPMF(
        variables=[Variable(name=n, size=s) for n, s in zip(names, sizes)]
        + [Variable(name=x_name, size=k)],
        probs=joint,
    )

    factored = conditional_product(q, [x_vars, [y]], [x_name] + zs)
    residual = float(np.max(np.abs(marginalize(q, factored.names).probs - factored.probs)))
    c5 = residual <= COUPLING_TOL

    pxyz = _marginal_tensor(q, [x_name, y] + zs).reshape(k, -1)
    px = pxyz.sum(axis=1)
    rows = [pxyz[i] / px[i] for i in range(k) if px[i] > PRECISION]
    rows_distinct = all(
        np.max(np.abs(a - b)) > COUPLING_TOL for a, b in itertools.combinations(rows, 2)
    )
    return SufficientStatisticCheck(c5=c5, rows_distinct=rows_distinct, residual=residual)
