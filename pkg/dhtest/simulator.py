"""
Monte Carlo simulation of the quantize-bin / decode-then-test scheme with one
encoder at finite blocklength.

The encoder quantizes X1^n to the first codeword jointly typical with it and
sends the codeword's bin index together with the joint type of
(X1^n, U^n). The detector decodes the codeword in the bin with the smallest
empirical joint entropy with its own observation (Y, plus side variables)
and declares H0 iff the joint type and (U^n, observation) are both typical
under H0.
"""

import csv
import logging
import math
from typing import IO, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.random import Generator, Philox, SeedSequence
from scipy.stats import beta, linregress

from dhtest._helpers import PRECISION, _entropy_bits, _thread_map
from dhtest.data_model import (
    CODEBOOK_LOG2_CAP,
    Codebook,
    Decision,
    Encoding,
    ExponentEstimate,
    HypothesisPair,
    JointPMF,
    SimConfig,
    SimResult,
    SimRow,
    TestChannel,
    Variable,
)
from dhtest.exceptions import (
    DomainError,
    InsufficientDataError,
    ShapeMismatchError,
    SimulationConfigError,
)
from dhtest.info import _as_columns, _joint_counts, _marginal_tensor, _typical_counts, compose_channel

logger = logging.getLogger(__name__)

# stream tags
TAG_CODEBOOK = 0
TAG_BINS = 1
TAG_H0 = 2
TAG_H1 = 3

CHUNK = 1024


def trial_generator(seed: int, tag: int, n: int, index: int) -> Generator:
    """
    Counter-based stream for one unit of work: the key depends on
    (seed, n, tag) and the high counter word on the trial index, so a stream
    never depends on which worker draws it.
    """
    key = SeedSequence([seed, n, tag]).generate_state(2, dtype=np.uint64)
    return Generator(Philox(key=key, counter=[0, 0, 0, index]))


def _inverse_cdf(probs: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(probs)
    return np.minimum(np.searchsorted(cdf, uniforms, side="right"), probs.size - 1)


def sample_sequences(pmf: JointPMF, n: int, rng: Generator) -> Dict[str, np.ndarray]:
    """
    n i.i.d. draws from pmf, one symbol array per variable.
    """
    if n < 1:
        raise DomainError(f"blocklength must be positive, got {n}")
    flat = _inverse_cdf(pmf.probs, rng.random(n))
    columns = np.unravel_index(flat, pmf.shape)
    return {name: col.astype(np.int64) for name, col in zip(pmf.names, columns)}


def build_codebook(
    ch: TestChannel,
    source_marginal: Sequence[float],
    cfg: SimConfig,
    rng: Generator,
    n: Optional[int] = None,
    bin_rng: Optional[Generator] = None,
) -> Codebook:
    """
    2^ceil(n Rbar) codewords i.i.d. from P_U, spread round-robin over
    2^ceil(n R) bins after a random permutation.

    Codewords are drawn row by row, so a larger codebook from the same stream
    extends a smaller one.

    :param ch: Test channel P_{U|X}.
    :param source_marginal: P_X.
    :param cfg: Simulation configuration.
    :param rng: Stream for the codewords.
    :param n: Blocklength, default cfg.n.
    :param bin_rng: Stream for the bin permutation, default rng.
    """
    n = n or cfg.n
    px = np.asarray(source_marginal, dtype=float)
    if px.size != ch.input_size:
        raise ShapeMismatchError(
            f"source marginal has {px.size} symbols, channel input size is {ch.input_size}"
        )
    log2_size = math.ceil(n * cfg.codebook_rate - 1e-12)
    if log2_size > CODEBOOK_LOG2_CAP:
        raise SimulationConfigError(
            f"codebook of 2^{log2_size} words exceeds the 2^{CODEBOOK_LOG2_CAP} cap"
        )
    log2_bins = min(math.ceil(n * cfg.bin_rate - 1e-12), log2_size)
    size, n_bins = 2**log2_size, 2**log2_bins

    pu = px @ ch.rows
    codewords = _inverse_cdf(pu, rng.random((size, n)))
    bin_rng = bin_rng or rng
    bin_of = np.empty(size, dtype=np.int64)
    bin_of[bin_rng.permutation(size)] = np.arange(size) % n_bins

    reference = JointPMF(
        variables=[Variable(name="X", size=ch.input_size), Variable(name="U", size=ch.output_size)],
        probs=px[:, None] * ch.rows,
    )
    return Codebook(codewords=codewords, bin_of=bin_of, n_bins=n_bins, reference=reference)


def _chunk_counts(first: np.ndarray, k_first: int, block: np.ndarray, k_block: int) -> np.ndarray:
    """Joint counts of (first, row) for every row of block, shape (rows, k_first * k_block)."""
    cells = k_first * k_block
    flat = first[None, :] * k_block + block
    flat = flat + np.arange(block.shape[0])[:, None] * cells
    return np.bincount(flat.ravel(), minlength=block.shape[0] * cells).reshape(-1, cells)


def encode(x_seq, cb: Codebook, mu: float) -> Encoding:
    """
    Select the lowest-index codeword jointly typical with x_seq, or codeword 0
    when none is.

    :param x_seq: Source sequence of length n.
    :param cb: Codebook.
    :param mu: Typicality slack.
    """
    x = np.asarray(x_seq, dtype=np.int64)
    if x.shape != (cb.n,):
        raise ShapeMismatchError(f"sequence of shape {x.shape} for blocklength {cb.n}")
    if not mu > 0:
        raise DomainError(f"typicality slack must be positive, got {mu}")
    kx, ku = cb.reference.sizes
    ref = cb.reference.probs
    zero = ref <= PRECISION
    limit = mu + 1e-12

    chosen, found = 0, False
    for start in range(0, cb.size, CHUNK):
        counts = _chunk_counts(x, kx, cb.codewords[start : start + CHUNK].astype(np.int64), ku)
        ok = ~np.any(counts[:, zero] > 0, axis=1)
        ok &= np.all(np.abs(counts / cb.n - ref) <= limit, axis=1)
        hits = np.flatnonzero(ok)
        if hits.size:
            chosen, found = start + int(hits[0]), True
            break

    u = cb.codewords[chosen].astype(np.int64)
    counts = _joint_counts([x, u], [kx, ku])
    joint_type = JointPMF.from_tensor(["X", "U"], (counts / cb.n).reshape(kx, ku))
    return Encoding(
        bin_index=int(cb.bin_of[chosen]),
        codeword_index=chosen,
        joint_type=joint_type,
        found=found,
    )


def _flatten_observation(observation, sizes: Sequence[int]) -> Tuple[np.ndarray, int]:
    columns = _as_columns(observation, sizes)
    if len(columns) == 1:
        return columns[0], sizes[0]
    return np.ravel_multi_index(tuple(columns), tuple(sizes)), math.prod(sizes)


def decode_min_entropy(bin_codewords, observation, sizes: Sequence[int]) -> int:
    """
    Position, within the bin, of the codeword minimizing the empirical joint
    entropy H(U, observation); ties go to the lowest position.

    :param bin_codewords: (m, n) array of the bin's codewords.
    :param observation: Detector sequences, one per observed variable.
    :param sizes: Alphabet sizes, U first, then each observed variable.
    """
    words = np.atleast_2d(np.asarray(bin_codewords, dtype=np.int64))
    if words.size == 0:
        raise SimulationConfigError("cannot decode from an empty bin")
    ku = sizes[0]
    obs, k_obs = _flatten_observation(observation, list(sizes[1:]))
    if obs.shape[0] != words.shape[1]:
        raise ShapeMismatchError(
            f"observation length {obs.shape[0]} does not match codeword length {words.shape[1]}"
        )
    if words.shape[0] == 1:
        return 0
    n = words.shape[1]
    entropies = np.empty(words.shape[0])
    for start in range(0, words.shape[0], CHUNK):
        counts = _chunk_counts(obs, k_obs, words[start : start + CHUNK], ku)
        entropies[start : start + CHUNK] = _entropy_bits(counts / n, axis=1)
    return int(np.flatnonzero(entropies <= entropies.min() + 1e-12)[0])


class _Detector:
    """H0 references for one pair and channel."""

    def __init__(self, h: HypothesisPair, ch: TestChannel):
        if h.L != 1:
            raise DomainError(f"simulation supports one encoder, got L = {h.L}")
        self.x = h.roles.x[0]
        self.observed = [n for n in (h.roles.side, h.roles.y, h.roles.z) if n is not None]
        joint = compose_channel(h.P, ch, self.x, "U" if "U" not in h.P.names else "U_")
        u = joint.names[-1]
        self.xu = _marginal_tensor(joint, [self.x, u]).ravel()
        self.uo = _marginal_tensor(joint, [u] + self.observed).ravel()
        self.sizes = [ch.output_size] + [h.P.size_of(n) for n in self.observed]

    def decide(self, u_hat: np.ndarray, sent: JointPMF, obs: Dict[str, np.ndarray], mu: float) -> Decision:
        n = u_hat.shape[0]
        first = _typical_counts(sent.probs * n, self.xu, n, mu)
        if not first:
            return Decision.H1
        counts = _joint_counts([u_hat] + [obs[name] for name in self.observed], self.sizes)
        return Decision.H0 if _typical_counts(counts, self.uo, n, mu) else Decision.H1


def detect(
    u_hat,
    sent_joint_type: JointPMF,
    observations: Dict[str, Sequence[int]],
    h: HypothesisPair,
    ch: TestChannel,
    mu: float,
) -> Decision:
    """
    H0 iff the sent joint type of (X1, U) is typical for P_{X1 U} and
    (U_hat, side, Y, Z) is jointly typical for P_{U, side, Y, Z}.

    :param u_hat: Decoded codeword.
    :param sent_joint_type: Joint type of (X1^n, U^n) sent by the encoder.
    :param observations: Detector sequences keyed by variable name.
    :param h: Hypothesis pair; references are taken under H0.
    :param ch: Test channel.
    :param mu: Typicality slack.
    """
    if not mu > 0:
        raise DomainError(f"typicality slack must be positive, got {mu}")
    detector = _Detector(h, ch)
    if sent_joint_type.probs.size != detector.xu.size:
        raise ShapeMismatchError("joint type does not match |X1| x |U|")
    u = np.asarray(u_hat, dtype=np.int64)
    obs = {}
    for name in detector.observed:
        if name not in observations:
            raise ShapeMismatchError(f"missing observation {name!r}")
        obs[name] = np.asarray(observations[name], dtype=np.int64)
        if obs[name].shape != u.shape:
            raise ShapeMismatchError(f"observation {name!r} has length {obs[name].size}, not {u.size}")
    return detector.decide(u, sent_joint_type, obs, mu)


def clopper_pearson(k: int, n: int, alpha: float = 0.05) -> Tuple[float, float]:
    """
    Exact binomial confidence interval for k successes in n trials.
    """
    lower, upper = beta.ppf([alpha / 2, 1 - alpha / 2], [k, k + 1], [n - k + 1, n - k])
    if np.isnan(lower):
        lower = 0.0
    if np.isnan(upper):
        upper = 1.0
    return float(lower), float(upper)


def estimate_exponent(blocklengths: Sequence[int], type2_rates: Sequence[float]) -> ExponentEstimate:
    """
    Least-squares slope of -log2(type-2 rate) against n over the blocklengths
    with nonzero rates.

    :param blocklengths: Blocklengths.
    :param type2_rates: Type-2 error rate at each blocklength.
    """
    if len(blocklengths) != len(type2_rates):
        raise ShapeMismatchError(
            f"{len(blocklengths)} blocklengths for {len(type2_rates)} rates"
        )
    usable = [(int(n), float(r)) for n, r in zip(blocklengths, type2_rates) if r > 0]
    if len({n for n, _ in usable}) < 3:
        raise InsufficientDataError(
            f"need 3 blocklengths with nonzero type-2 errors, have {len(usable)}"
        )
    ns = np.array([n for n, _ in usable], dtype=float)
    ys = -np.log2([r for _, r in usable])
    fit = linregress(ns, ys)
    return ExponentEstimate(
        slope=float(fit.slope),
        stderr=float(fit.stderr),
        intercept=float(fit.intercept),
        blocklengths=[n for n, _ in usable],
    )


class _TrialOutcome:
    __slots__ = ("decision", "found", "decode_error")

    def __init__(self, decision: Decision, found: bool, decode_error: bool):
        self.decision = decision
        self.found = found
        self.decode_error = decode_error


def _run_trial(
    cfg: SimConfig,
    h: HypothesisPair,
    ch: TestChannel,
    detector: _Detector,
    shared: Optional[Codebook],
    n: int,
    tag: int,
    index: int,
) -> _TrialOutcome:
    if shared is None:
        cb = build_codebook(
            ch,
            _marginal_tensor(h.P, [detector.x]),
            cfg,
            trial_generator(cfg.seed, TAG_CODEBOOK, n, index + 1),
            n,
            bin_rng=trial_generator(cfg.seed, TAG_BINS, n, index + 1),
        )
    else:
        cb = shared
    pmf = h.P if tag == TAG_H0 else h.Q
    seqs = sample_sequences(pmf, n, trial_generator(cfg.seed, tag, n, index))
    enc = encode(seqs[detector.x], cb, cfg.mu)
    members = cb.members(enc.bin_index)
    position = decode_min_entropy(
        cb.codewords[members], [seqs[name] for name in detector.observed], detector.sizes
    )
    decoded = int(members[position])
    decision = detector.decide(
        cb.codewords[decoded].astype(np.int64), enc.joint_type, seqs, cfg.mu
    )
    return _TrialOutcome(decision, enc.found, decoded != enc.codeword_index)


def _run_blocklength(cfg: SimConfig, h: HypothesisPair, ch: TestChannel, detector: _Detector, n: int) -> SimRow:
    shared = None
    if cfg.shared_codebook:
        shared = build_codebook(
            ch,
            _marginal_tensor(h.P, [detector.x]),
            cfg,
            trial_generator(cfg.seed, TAG_CODEBOOK, n, 0),
            n,
            bin_rng=trial_generator(cfg.seed, TAG_BINS, n, 0),
        )
    outcomes = {}
    for tag in (TAG_H0, TAG_H1):
        outcomes[tag] = _thread_map(
            lambda i, tag=tag: _run_trial(cfg, h, ch, detector, shared, n, tag, i),
            range(cfg.trials),
            cfg.threads,
        )
    type1 = sum(o.decision == Decision.H1 for o in outcomes[TAG_H0])
    type2 = sum(o.decision == Decision.H0 for o in outcomes[TAG_H1])
    failures = sum(not o.found for o in outcomes[TAG_H0])
    errors = sum(o.decode_error for o in outcomes[TAG_H0])
    type2_rate = type2 / cfg.trials
    logger.info(f"n = {n}: type-1 {type1}/{cfg.trials}, type-2 {type2}/{cfg.trials}")
    return SimRow(
        n=n,
        trials=cfg.trials,
        type1_count=type1,
        type2_count=type2,
        type1_rate=type1 / cfg.trials,
        type2_rate=type2_rate,
        type2_ci=clopper_pearson(type2, cfg.trials),
        encode_failure_rate=failures / cfg.trials,
        decode_error_rate=errors / cfg.trials,
        type1_within_epsilon=type1 / cfg.trials <= cfg.epsilon,
        neg_log2_type2_per_n=-math.log2(type2_rate) / n if type2 > 0 else None,
    )


def run_trials(cfg: SimConfig, h: HypothesisPair, ch: TestChannel) -> SimResult:
    """
    Estimate type-1 and type-2 error rates at every configured blocklength.

    Trials under H0 sample from P and trials under H1 from Q; encoding
    failures and decoding errors are counted over the H0 trials. Results
    depend only on (cfg, h, ch), not on the thread count.

    :param cfg: Simulation configuration.
    :param h: One-encoder hypothesis pair.
    :param ch: Test channel on the encoder variable.
    """
    detector = _Detector(h, ch)
    if ch.input_size != h.P.size_of(detector.x):
        raise ShapeMismatchError(
            f"channel input size {ch.input_size} does not match |{detector.x}|"
        )
    rows: List[SimRow] = []
    for n in cfg.blocklengths:
        logger.info(f"simulating n = {n}, {cfg.trials} trials per hypothesis")
        rows.append(_run_blocklength(cfg, h, ch, detector, n))

    estimate = None
    try:
        estimate = estimate_exponent([r.n for r in rows], [r.type2_rate for r in rows])
    except InsufficientDataError as e:
        logger.info(f"no exponent estimate: {e}")

    main = next(r for r in rows if r.n == cfg.n)
    return SimResult(
        config=cfg,
        type1_rate=main.type1_rate,
        type1_within_epsilon=main.type1_within_epsilon,
        type2_rate=main.type2_rate,
        type2_ci=main.type2_ci,
        rows=rows,
        exponent_estimate=estimate,
        metadata={
            "joint_type_message": "sent out of band, rate not charged",
            "codebook": "shared" if cfg.shared_codebook else "per-trial",
            "failure_counts": "over H0 trials",
        },
    )


def write_sim_csv(result: SimResult, path_or_stream: Union[str, IO[str]]) -> None:
    """
    CSV of n,type1,type2,neg_log2_type2_per_n rows; the last column is empty
    when no type-2 error was observed.
    """
    if isinstance(path_or_stream, str):
        with open(path_or_stream, "w", newline="") as f:
            write_sim_csv(result, f)
        return
    writer = csv.writer(path_or_stream, lineterminator="\n")
    writer.writerow(["n", "type1", "type2", "neg_log2_type2_per_n"])
    for row in result.rows:
        exponent = "" if row.neg_log2_type2_per_n is None else f"{row.neg_log2_type2_per_n:.12g}"
        writer.writerow([row.n, f"{row.type1_rate:.12g}", f"{row.type2_rate:.12g}", exponent])
