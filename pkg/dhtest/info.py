"""
Information measures and distribution algebra over finite joint pmfs. All
quantities are in bits.
"""

import logging
import math
from typing import Dict, List, Optional, Sequence

import numpy as np

from dhtest._helpers import PRECISION, _entropy_bits
from dhtest.data_model import JointPMF, TestChannel, Variable, VariableSelector
from dhtest.exceptions import DomainError, ShapeMismatchError, UnknownVariableError

logger = logging.getLogger(__name__)


def _names(selector: VariableSelector) -> List[str]:
    if selector is None:
        return []
    if isinstance(selector, str):
        return [selector]
    return list(selector)


def _axes(p: JointPMF, names: Sequence[str]) -> List[int]:
    axes = []
    for name in names:
        if name not in p.names:
            raise UnknownVariableError(f"unknown variable {name!r}; have {p.names}")
        axes.append(p.names.index(name))
    return axes


def _disjoint(*selectors: Sequence[str]) -> None:
    seen: set = set()
    for names in selectors:
        overlap = seen.intersection(names)
        if overlap:
            raise DomainError(f"selectors must be disjoint, {sorted(overlap)} repeated")
        seen.update(names)


def _marginal_tensor(p: JointPMF, names: Sequence[str]) -> np.ndarray:
    """Marginal of p over `names`, axes in the given order."""
    axes = _axes(p, names)
    if len(set(axes)) != len(axes):
        raise DomainError(f"variable repeated in {list(names)}")
    drop = tuple(i for i in range(len(p.names)) if i not in axes)
    t = p.tensor.sum(axis=drop) if drop else p.tensor
    kept = sorted(axes)
    return np.transpose(t, [kept.index(a) for a in axes])


def _joint_entropy(p: JointPMF, names: Sequence[str]) -> float:
    if not names:
        return 0.0
    return float(_entropy_bits(_marginal_tensor(p, names)))


def marginalize(p: JointPMF, keep: VariableSelector) -> JointPMF:
    """
    Marginal pmf over the kept variables, in the order given.

    :param p: Joint pmf.
    :param keep: Variable name or names to keep.
    """
    names = _names(keep)
    return JointPMF.from_tensor(names, _marginal_tensor(p, names))


def entropy(p: JointPMF, vars: VariableSelector, given: VariableSelector = None) -> float:
    """
    Conditional entropy H(vars | given) in bits.

    :param p: Joint pmf.
    :param vars: Variables whose entropy is measured.
    :param given: Conditioning variables, optional.
    """
    a, g = _names(vars), _names(given)
    _disjoint(a, g)
    _axes(p, a + g)
    return _joint_entropy(p, a + g) - _joint_entropy(p, g)


def binary_entropy(p: float) -> float:
    """
    H_b(p) = -p log p - (1-p) log (1-p), with H_b(0) = H_b(1) = 0.
    """
    if not 0 <= p <= 1:
        raise DomainError(f"binary entropy needs p in [0, 1], got {p}")
    return float(_entropy_bits(np.array([p, 1.0 - p])))


def mutual_information(
    p: JointPMF, a: VariableSelector, b: VariableSelector, given: VariableSelector = None
) -> float:
    """
    Conditional mutual information I(a; b | given) in bits, clipped at zero.

    :param p: Joint pmf.
    :param a: First variable group.
    :param b: Second variable group.
    :param given: Conditioning variables, optional.
    """
    a, b, g = _names(a), _names(b), _names(given)
    _disjoint(a, b, g)
    _axes(p, a + b + g)
    value = (
        _joint_entropy(p, a + g)
        + _joint_entropy(p, b + g)
        - _joint_entropy(p, a + b + g)
        - _joint_entropy(p, g)
    )
    return max(value, 0.0)


def _check_same_variables(p: JointPMF, q: JointPMF) -> None:
    if p.names != q.names or p.sizes != q.sizes:
        raise ShapeMismatchError(
            f"variable lists differ: {list(zip(p.names, p.sizes))} vs {list(zip(q.names, q.sizes))}"
        )


def _kl_terms(p: np.ndarray, q: np.ndarray) -> float:
    support = p > PRECISION
    if np.any(q[support] <= PRECISION):
        return math.inf
    with np.errstate(divide="ignore", invalid="ignore"):
        value = np.where(support, p * (np.log2(p) - np.log2(q)), 0.0).sum()
    return max(float(value), 0.0)


def kl_divergence(p: JointPMF, q: JointPMF) -> float:
    """
    D(p || q) in bits; +inf when p has mass where q has none.

    :param p: Joint pmf.
    :param q: Joint pmf over the same variables.
    """
    _check_same_variables(p, q)
    return _kl_terms(p.probs, q.probs)


def conditional_kl(
    p: JointPMF, q: JointPMF, vars: VariableSelector, given: VariableSelector
) -> float:
    """
    D(P_{vars|given} || Q_{vars|given} | P_given) in bits.
    """
    _check_same_variables(p, q)
    a, g = _names(vars), _names(given)
    _disjoint(a, g)
    pt = _marginal_tensor(p, g + a)
    qt = _marginal_tensor(q, g + a)
    extra = tuple(range(len(g), len(g) + len(a)))
    pg = pt.sum(axis=extra, keepdims=True) if extra else np.ones_like(pt)
    qg = qt.sum(axis=extra, keepdims=True) if extra else np.ones_like(qt)
    with np.errstate(divide="ignore", invalid="ignore"):
        q_cond = np.where(qg > PRECISION, qt / qg, 0.0)
    # reference measure: Q's conditional under P's conditioning marginal
    return _kl_terms(pt.ravel(), (q_cond * pg).ravel())


def condition(p: JointPMF, given_values: Dict[str, int]) -> JointPMF:
    """
    Distribution of the remaining variables given fixed values of others.

    :param p: Joint pmf.
    :param given_values: Mapping of variable name to observed symbol.
    """
    index: list = [slice(None)] * len(p.names)
    for name, value in given_values.items():
        axis = _axes(p, [name])[0]
        if not 0 <= value < p.sizes[axis]:
            raise DomainError(f"symbol {value} out of range for {name!r}")
        index[axis] = value
    sliced = p.tensor[tuple(index)]
    total = float(sliced.sum())
    if total <= PRECISION:
        raise DomainError(f"conditioning event {given_values} has probability zero")
    rest = [n for n in p.names if n not in given_values]
    return JointPMF.from_tensor(rest, sliced / total)


def compose_channel(
    p: JointPMF, ch: TestChannel, onto: str, output_name: Optional[str] = None
) -> JointPMF:
    """
    Append U drawn through ch from variable `onto`, so U - onto - rest holds.

    :param p: Joint pmf.
    :param ch: Test channel whose input alphabet is the alphabet of `onto`.
    :param onto: Name of the channel input variable.
    :param output_name: Name of the new variable, default "U".
    """
    axis = _axes(p, [onto])[0]
    if ch.input_size != p.sizes[axis]:
        raise ShapeMismatchError(
            f"channel input size {ch.input_size} does not match |{onto}| = {p.sizes[axis]}"
        )
    output_name = output_name or "U"
    if output_name in p.names:
        raise DomainError(f"variable {output_name!r} already exists")
    moved = np.moveaxis(p.tensor, axis, -1)
    joint = moved[..., None] * ch.rows
    joint = np.moveaxis(joint, -2, axis)
    return JointPMF(
        variables=list(p.variables) + [Variable(name=output_name, size=ch.output_size)],
        probs=joint,
    )


def conditional_product(
    p: JointPMF, groups: Sequence[VariableSelector], given: VariableSelector = None
) -> JointPMF:
    """
    The pmf P_given * prod_i P_{group_i | given}, over the involved variables in p's order.

    :param p: Joint pmf.
    :param groups: Variable groups made conditionally independent.
    :param given: Conditioning variables, optional.
    """
    group_names = [_names(g) for g in groups]
    g = _names(given)
    _disjoint(g, *group_names)
    order = g + [n for grp in group_names for n in grp]
    _axes(p, order)

    c_shape = [p.size_of(n) for n in g]
    pc = _marginal_tensor(p, g) if g else np.array(1.0)
    result = np.ones([p.size_of(n) for n in order])
    offset = len(g)
    for grp in group_names:
        m = _marginal_tensor(p, g + grp)
        shape = c_shape + [1] * (len(order) - len(g))
        for k, name in enumerate(grp):
            shape[offset + k] = p.size_of(name)
        result = result * m.reshape(shape)
        offset += len(grp)
    if len(group_names) > 1:
        pc_b = pc.reshape(c_shape + [1] * (len(order) - len(g)))
        with np.errstate(divide="ignore", invalid="ignore"):
            result = np.where(
                pc_b > PRECISION, result / pc_b ** (len(group_names) - 1), 0.0
            )

    final = [n for n in p.names if n in order]
    result = np.transpose(result, [order.index(n) for n in final])
    return JointPMF.from_tensor(final, result, renormalize=True)


def _joint_counts(columns: Sequence[np.ndarray], sizes: Sequence[int]) -> np.ndarray:
    flat = np.ravel_multi_index(tuple(columns), tuple(sizes))
    return np.bincount(flat, minlength=math.prod(sizes))


def _as_columns(seqs, sizes: Sequence[int]) -> List[np.ndarray]:
    if isinstance(seqs, np.ndarray) and seqs.ndim == 2:
        columns = [seqs[:, k] for k in range(seqs.shape[1])]
    elif isinstance(seqs, np.ndarray) and seqs.ndim == 1:
        columns = [seqs]
    elif len(sizes) == 1 and len(seqs) > 0 and np.isscalar(seqs[0]):
        columns = [np.asarray(seqs)]
    else:
        columns = [np.asarray(s) for s in seqs]
    if len(columns) != len(sizes):
        raise ShapeMismatchError(f"{len(columns)} sequences for {len(sizes)} alphabets")
    lengths = {len(c) for c in columns}
    if len(lengths) != 1:
        raise ShapeMismatchError(f"sequences have different lengths {sorted(lengths)}")
    if lengths == {0}:
        raise DomainError("sequences must be nonempty")
    out = []
    for c, size in zip(columns, sizes):
        c = np.asarray(c, dtype=np.int64)
        if np.any(c < 0) or np.any(c >= size):
            raise DomainError(f"symbol out of range for alphabet size {size}")
        out.append(c)
    return out


def empirical_type(
    seq, sizes: Sequence[int], names: Optional[Sequence[str]] = None
) -> JointPMF:
    """
    Joint type (frequency pmf) of one or more aligned symbol sequences.

    :param seq: A sequence, a list of aligned sequences, or an (n, k) array.
    :param sizes: Alphabet size of each sequence.
    :param names: Variable names, default V0, V1, ...
    """
    sizes = list(sizes)
    columns = _as_columns(seq, sizes)
    counts = _joint_counts(columns, sizes)
    names = list(names) if names is not None else [f"V{k}" for k in range(len(sizes))]
    return JointPMF.from_tensor(names, (counts / len(columns[0])).reshape(sizes))


def _typical_counts(counts: np.ndarray, reference: np.ndarray, n: int, mu: float) -> bool:
    if np.any(counts[reference <= PRECISION] > 0):
        return False
    return bool(np.all(np.abs(counts / n - reference) <= mu + 1e-12))


def is_jointly_typical(seqs, reference: JointPMF, mu: float) -> bool:
    """
    Robust typicality: every joint-type cell within mu of the reference and no
    cell of reference probability zero occupied.

    :param seqs: Aligned sequences, one per reference variable (or an (n, k) array).
    :param reference: Reference joint pmf.
    :param mu: Per-cell slack, > 0.
    """
    if not mu > 0:
        raise DomainError(f"typicality slack must be positive, got {mu}")
    columns = _as_columns(seqs, reference.sizes)
    counts = _joint_counts(columns, reference.sizes)
    return _typical_counts(counts, reference.probs, len(columns[0]), mu)
