"""
Search over test channels P_{U|X} for the one-encoder exponent problems.

Objectives and constraints are linear combinations of conditional entropies
H(U | C) of the channel output, where U - X - (everything else). Each term is
evaluated together with its gradient in the channel matrix, so the search
can run row-wise projected ascent and gradient-based refinement.
"""

import logging
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq, minimize

from dhtest._config import resolve_restarts, resolve_threads
from dhtest._helpers import LOG2E, _entropy_bits, _simplex_project, _spawn_seeds, _thread_map, _xlogx
from dhtest.data_model import JointPMF
from dhtest.info import _marginal_tensor

logger = logging.getLogger(__name__)

# log floor for gradients at empty cells
_LOG_FLOOR = 1e-12

# feasibility tolerance of the rate constraints
FEASIBILITY_TOL = 1e-10

GRID_STEP = 0.05


class EntropyTerm:
    """H(U | given) as a function of the channel matrix W, for U generated from `source`."""

    def __init__(self, p: JointPMF, source: str, given: Sequence[str]):
        given = list(given)
        self._through = source in given
        others = [g for g in given if g != source]
        self._t = _marginal_tensor(p, others + [source]).reshape(-1, p.size_of(source))
        self._h_given = float(_entropy_bits(_marginal_tensor(p, given))) if given else 0.0

    def _joint(self, W: np.ndarray) -> np.ndarray:
        if self._through:
            return self._t[:, :, None] * W[None, :, :]
        return self._t @ W

    def value(self, W: np.ndarray) -> float:
        return float(-_xlogx(self._joint(W)).sum()) - self._h_given

    def value_and_grad(self, W: np.ndarray) -> Tuple[float, np.ndarray]:
        joint = self._joint(W)
        h = float(-_xlogx(joint).sum()) - self._h_given
        logs = np.log2(np.maximum(joint, _LOG_FLOOR)) + LOG2E
        if self._through:
            grad = -(self._t[:, :, None] * logs).sum(axis=0)
        else:
            grad = -self._t.T @ logs
        return h, grad


class Functional:
    """constant + sum_k coef_k * H(U | C_k)."""

    def __init__(self, terms: Sequence[Tuple[float, EntropyTerm]], constant: float = 0.0):
        self.terms = list(terms)
        self.constant = constant

    def value(self, W: np.ndarray) -> float:
        return self.constant + sum(c * t.value(W) for c, t in self.terms)

    def value_and_grad(self, W: np.ndarray) -> Tuple[float, np.ndarray]:
        total = self.constant
        grad = np.zeros_like(W)
        for c, t in self.terms:
            v, g = t.value_and_grad(W)
            total += c * v
            grad += c * g
        return total, grad

    def shifted(self, constant: float) -> "Functional":
        return Functional(self.terms, self.constant + constant)

    def negated(self) -> "Functional":
        return Functional([(-c, t) for c, t in self.terms], -self.constant)


def information_with_u(
    p: JointPMF, source: str, other: Sequence[str], given: Sequence[str] = ()
) -> Functional:
    """I(U ; other | given) = H(U | given) - H(U | other, given)."""
    given = list(given)
    return Functional(
        [(1.0, EntropyTerm(p, source, given)), (-1.0, EntropyTerm(p, source, list(other) + given))]
    )


class ChannelProblem:
    """
    Maximize `objective` over channels with rows on the simplex, subject to
    `constraints` (functional <= bound). `refinements` lists epigraph forms
    (pieces maximized jointly as a min, plus their constraints) for the final
    gradient refinement; candidates are always scored by `objective`.
    """

    def __init__(
        self,
        source_marginal: np.ndarray,
        n_out: int,
        objective: Callable[[np.ndarray], Tuple[float, np.ndarray]],
        constraints: Sequence[Tuple[Functional, float]],
        refinements: Sequence[Tuple[Sequence[Functional], Sequence[Tuple[Functional, float]]]],
    ):
        self.source_marginal = np.asarray(source_marginal, dtype=float)
        self.n_in = self.source_marginal.size
        self.n_out = n_out
        self.objective = objective
        self.constraints = list(constraints)
        self.refinements = list(refinements)

    def score(self, W: np.ndarray) -> float:
        return self.objective(W)[0]

    def violation(self, W: np.ndarray) -> float:
        if not self.constraints:
            return -np.inf
        return max(f.value(W) - bound for f, bound in self.constraints)

    def retract(self, W: np.ndarray) -> np.ndarray:
        """Move W toward the constant channel with the same output marginal until feasible."""
        if self.violation(W) <= FEASIBILITY_TOL:
            return W
        anchor = np.tile(self.source_marginal @ W, (self.n_in, 1))

        def excess(t: float) -> float:
            return self.violation((1 - t) * W + t * anchor) - FEASIBILITY_TOL / 2

        if excess(1.0) > 0:
            return anchor
        t = brentq(excess, 0.0, 1.0, xtol=1e-13)
        return (1 - t) * W + t * anchor


class SearchOutcome:
    def __init__(self, W: np.ndarray, value: float, restarts: int, gap: float):
        self.W = W
        self.value = value
        self.restarts = restarts
        self.gap = gap


def grid_seeds(n_in: int, n_out: int, step: float = GRID_STEP) -> List[np.ndarray]:
    """
    Deterministic starts along identity-to-uniform and identity-to-erasure paths.
    """
    identity = np.zeros((n_in, n_out))
    identity[np.arange(n_in), np.arange(n_in) % n_out] = 1.0
    uniform = np.full((n_in, n_out), 1.0 / n_out)
    erasure = np.zeros((n_in, n_out))
    erasure[:, -1] = 1.0
    seeds = []
    for t in np.linspace(0.0, 1.0, int(round(1 / step)) + 1):
        seeds.append(t * identity + (1 - t) * uniform)
        seeds.append(t * identity + (1 - t) * erasure)
    return seeds


def _tangent(v: np.ndarray) -> np.ndarray:
    return v - v.mean()


def ascend(
    problem: ChannelProblem, W: np.ndarray, max_sweeps: int = 100, tol: float = 1e-6
) -> Tuple[np.ndarray, float]:
    """
    Row-wise projected ascent from W. A row moves along the objective gradient,
    made tangent to any active constraint, is projected back to the simplex
    and the channel is retracted into the feasible set; the step is halved
    until the objective improves.
    """
    W = problem.retract(np.array(W, dtype=float))
    value, grad = problem.objective(W)
    steps = np.full(problem.n_in, 0.25)

    for _ in range(max_sweeps):
        start = value
        for x in range(problem.n_in):
            d = _tangent(grad[x])
            for func, bound in problem.constraints:
                c_val, c_grad = func.value_and_grad(W)
                if c_val < bound - 1e-7:
                    continue
                cg = _tangent(c_grad[x])
                norm2 = float(cg @ cg)
                if norm2 > 0 and float(d @ cg) > 0:
                    d = d - (float(d @ cg) / norm2) * cg
            norm = np.linalg.norm(d)
            if norm < 1e-12:
                continue
            d = d / norm
            t = steps[x]
            while t > 1e-9:
                candidate = W.copy()
                candidate[x] = _simplex_project(W[x] + t * d)
                candidate = problem.retract(candidate)
                c_value, c_grad = problem.objective(candidate)
                if c_value > value + 1e-14:
                    W, value, grad = candidate, c_value, c_grad
                    steps[x] = min(2 * t, 1.0)
                    break
                t *= 0.5
            else:
                steps[x] = 1e-3
        if value - start <= tol * max(abs(start), 1e-9):
            break
    return W, value


def refine(
    problem: ChannelProblem,
    W0: np.ndarray,
    pieces: Sequence[Functional],
    constraints: Sequence[Tuple[Functional, float]],
) -> np.ndarray:
    """
    SLSQP on the epigraph form: maximize s subject to s <= piece(W) for every
    piece, the rate constraints, and stochastic rows.
    """
    n_in, n_out = W0.shape
    k = n_in * n_out

    def channel(z: np.ndarray) -> np.ndarray:
        return z[:k].reshape(n_in, n_out)

    cons = []
    for piece in pieces:
        cons.append(
            {
                "type": "ineq",
                "fun": lambda z, f=piece: f.value(channel(z)) - z[k],
                "jac": lambda z, f=piece: np.append(f.value_and_grad(channel(z))[1].ravel(), -1.0),
            }
        )
    for func, bound in constraints:
        cons.append(
            {
                "type": "ineq",
                "fun": lambda z, f=func, b=bound: b - f.value(channel(z)),
                "jac": lambda z, f=func: np.append(-f.value_and_grad(channel(z))[1].ravel(), 0.0),
            }
        )
    row_sums = np.zeros((n_in, k + 1))
    for x in range(n_in):
        row_sums[x, x * n_out : (x + 1) * n_out] = 1.0
    cons.append(
        {
            "type": "eq",
            "fun": lambda z: channel(z).sum(axis=1) - 1.0,
            "jac": lambda z: row_sums,
        }
    )
    s0 = min(f.value(W0) for f in pieces)
    z0 = np.append(W0.ravel(), s0)
    e_last = np.zeros(k + 1)
    e_last[k] = -1.0

    try:
        res = minimize(
            lambda z: -z[k],
            z0,
            jac=lambda z: e_last,
            method="SLSQP",
            bounds=[(0.0, 1.0)] * k + [(None, None)],
            constraints=cons,
            options={"maxiter": 300, "ftol": 1e-12},
        )
    except (ValueError, np.linalg.LinAlgError) as e:
        logger.debug(f"refinement failed: {e}")
        return W0
    W = np.clip(channel(res.x), 0.0, None)
    W = W / W.sum(axis=1, keepdims=True)
    return problem.retract(W)


def search(
    problem: ChannelProblem,
    restarts: Optional[int] = None,
    seed: int = 0,
    threads: Optional[int] = None,
    extra_starts: Sequence[np.ndarray] = (),
    max_sweeps: int = 100,
    grid_keep: int = 4,
    refine_top: int = 3,
) -> SearchOutcome:
    """
    Multi-start channel search: grid seeds and random Dirichlet channels are
    ascended independently, merged by max, and the best candidates refined.

    :param problem: The channel problem.
    :param restarts: Number of random starts (env DHTEST_RESTARTS, default 64).
    :param seed: Master seed; start i uses the i-th pre-generated child seed.
    :param threads: Worker threads (env DHTEST_THREADS, default 1).
    :param extra_starts: Additional starting channels, e.g. a warm start.
    """
    restarts = resolve_restarts(restarts)
    threads = resolve_threads(threads)
    n_in, n_out = problem.n_in, problem.n_out

    seeded = []
    for W in grid_seeds(n_in, n_out):
        W = problem.retract(W)
        seeded.append((problem.score(W), W))
    seeded.sort(key=lambda item: -item[0])
    starts = [W for _, W in seeded[:grid_keep]] + [np.asarray(W, dtype=float) for W in extra_starts]
    for child in _spawn_seeds(seed, restarts):
        rng = np.random.default_rng(child)
        starts.append(rng.dirichlet(np.ones(n_out), size=n_in))

    results = _thread_map(lambda W: ascend(problem, W, max_sweeps=max_sweeps), starts, threads)
    order = sorted(range(len(results)), key=lambda i: (-results[i][1], i))
    logger.debug(f"ascent values (best 5): {[results[i][1] for i in order[:5]]}")

    best_W, best_value = results[order[0]]
    ascended_value = best_value
    for i in order[:refine_top]:
        for pieces, constraints in problem.refinements:
            W = refine(problem, results[i][0], pieces, constraints)
            if problem.violation(W) > FEASIBILITY_TOL:
                continue
            value = problem.score(W)
            if value > best_value + 1e-12:
                best_W, best_value = W, value

    return SearchOutcome(
        W=best_W,
        value=best_value,
        restarts=len(starts),
        gap=max(best_value - ascended_value, 0.0),
    )
