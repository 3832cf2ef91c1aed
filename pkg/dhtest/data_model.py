import math
from enum import Enum
from typing import Annotated, ClassVar, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    PlainSerializer,
    PlainValidator,
    field_validator,
    model_validator,
)

from dhtest._config import get_settings


def _as_float_array(value) -> np.ndarray:
    arr = np.array(value, dtype=float)
    arr.setflags(write=False)
    return arr


def _as_int_array(value) -> np.ndarray:
    arr = np.array(value, dtype=np.int64)
    arr.setflags(write=False)
    return arr


def _as_symbol_array(value) -> np.ndarray:
    arr = np.array(value, dtype=np.uint8)
    arr.setflags(write=False)
    return arr


FloatArray = Annotated[
    np.ndarray,
    PlainValidator(_as_float_array),
    PlainSerializer(lambda a: a.tolist(), return_type=list),
]

IntArray = Annotated[
    np.ndarray,
    PlainValidator(_as_int_array),
    PlainSerializer(lambda a: a.tolist(), return_type=list),
]

SymbolArray = Annotated[
    np.ndarray,
    PlainValidator(_as_symbol_array),
    PlainSerializer(lambda a: a.tolist(), return_type=list),
]

VariableSelector = Union[str, Sequence[str], None]


def _finite_or_none(value: Optional[float]) -> Optional[float]:
    """JSON has no infinity; +inf exponents are written as null, as pydantic does."""
    if value is None or not math.isfinite(value):
        return None
    return value


class _Model(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)


class _CaseInsensitiveEnum(str, Enum):
    # Make values case insensitive when converting string data.
    @classmethod
    def _missing_(cls, value):
        value = str(value).lower()
        for member in cls:
            if member.value.lower() == value:
                return member
        return None


# ---------------------------------------------------------------------------
# Distributions and channels
# ---------------------------------------------------------------------------


class Variable(_Model):
    name: str
    size: int

    @field_validator("size")
    @classmethod
    def _positive_size(cls, v: int) -> int:
        if v < 1:
            raise ValueError(f"alphabet size must be >= 1, got {v}")
        return v


class JointPMF(_Model):
    """Probability mass function over named finite-alphabet variables, row-major."""

    variables: List[Variable]
    probs: FloatArray

    @field_validator("probs")
    @classmethod
    def _flatten(cls, v: np.ndarray) -> np.ndarray:
        return _as_float_array(v.ravel())

    @model_validator(mode="after")
    def _check_pmf(self) -> "JointPMF":
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate variable names in {names}")
        expected = math.prod(v.size for v in self.variables)
        if self.probs.size != expected:
            raise ValueError(
                f"probs has {self.probs.size} entries, variables {names} need {expected}"
            )
        if np.any(self.probs < 0):
            raise ValueError("probabilities must be nonnegative")
        total = float(self.probs.sum())
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"probabilities sum to {total!r}, not 1")
        return self

    @property
    def names(self) -> List[str]:
        return [v.name for v in self.variables]

    @property
    def sizes(self) -> List[int]:
        return [v.size for v in self.variables]

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.sizes)

    @property
    def tensor(self) -> np.ndarray:
        return self.probs.reshape(self.shape)

    def size_of(self, name: str) -> int:
        return self.sizes[self.names.index(name)]

    @classmethod
    def from_tensor(
        cls, names: Sequence[str], tensor: np.ndarray, renormalize: bool = False
    ) -> "JointPMF":
        tensor = np.asarray(tensor, dtype=float)
        if tensor.ndim != len(names):
            raise ValueError(f"tensor has {tensor.ndim} axes for variables {list(names)}")
        if renormalize:
            tensor = tensor / tensor.sum()
        return cls(
            variables=[Variable(name=n, size=s) for n, s in zip(names, tensor.shape)],
            probs=tensor,
        )


class TestChannel(_Model):
    """Conditional pmf P_{U|X}; row x is the output distribution for input x."""

    __test__: ClassVar[bool] = False

    rows: FloatArray
    cap: Optional[int] = Field(default=None)

    @field_validator("rows")
    @classmethod
    def _check_rows(cls, v: np.ndarray) -> np.ndarray:
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError(f"channel rows must be a nonempty matrix, got shape {v.shape}")
        if np.any(v < 0):
            raise ValueError("channel entries must be nonnegative")
        sums = v.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > 1e-12):
            raise ValueError(f"channel rows must sum to 1, got {sums.tolist()}")
        return v

    @model_validator(mode="after")
    def _check_cap(self) -> "TestChannel":
        if self.cap is not None and self.output_size > self.cap:
            raise ValueError(f"output size {self.output_size} exceeds cap {self.cap}")
        return self

    @property
    def input_size(self) -> int:
        return self.rows.shape[0]

    @property
    def output_size(self) -> int:
        return self.rows.shape[1]

    @classmethod
    def identity(cls, size: int, output_size: Optional[int] = None) -> "TestChannel":
        """U = X, padded with unused output symbols up to output_size."""
        output_size = output_size or size
        rows = np.zeros((size, output_size))
        rows[np.arange(size), np.arange(size)] = 1.0
        return cls(rows=rows)

    @classmethod
    def constant(
        cls, input_size: int, output_size: int = 1, dist: Optional[Sequence[float]] = None
    ) -> "TestChannel":
        if dist is None:
            dist = np.zeros(output_size)
            dist[0] = 1.0
        return cls(rows=np.tile(np.asarray(dist, dtype=float), (input_size, 1)))

    @classmethod
    def symmetric(
        cls, crossover: float, size: int = 2, output_size: Optional[int] = None
    ) -> "TestChannel":
        """q-ary symmetric channel; size 2 is the binary symmetric channel."""
        output_size = output_size or size
        rows = np.full((size, size), crossover / max(size - 1, 1))
        np.fill_diagonal(rows, 1.0 - crossover)
        if output_size > size:
            rows = np.hstack([rows, np.zeros((size, output_size - size))])
        return cls(rows=rows)


# ---------------------------------------------------------------------------
# Discrete regions
# ---------------------------------------------------------------------------


class RoleMap(_Model):
    x: List[str]
    side: Optional[str] = Field(default=None)
    y: str
    z: Optional[str] = Field(default=None)

    @property
    def all_names(self) -> List[str]:
        names = list(self.x)
        for name in (self.side, self.y, self.z):
            if name is not None:
                names.append(name)
        return names

    @property
    def x_side(self) -> List[str]:
        return list(self.x) + ([self.side] if self.side else [])

    @property
    def z_list(self) -> List[str]:
        return [self.z] if self.z else []


class HypothesisPair(_Model):
    """P under H0, Q under H1, with the role each variable plays."""

    P: JointPMF
    Q: JointPMF
    roles: RoleMap
    ci: bool = Field(default=False)

    @model_validator(mode="after")
    def _check_pair(self) -> "HypothesisPair":
        if self.P.names != self.Q.names or self.P.sizes != self.Q.sizes:
            raise ValueError(
                f"P and Q must share variables, got {self.P.names}{self.P.sizes} "
                f"and {self.Q.names}{self.Q.sizes}"
            )
        if not self.roles.x:
            raise ValueError("at least one encoder variable is required")
        assigned = self.roles.all_names
        if len(set(assigned)) != len(assigned):
            raise ValueError(f"a variable is assigned two roles: {assigned}")
        if sorted(assigned) != sorted(self.P.names):
            raise ValueError(
                f"roles {assigned} must cover the variables {self.P.names} exactly"
            )
        if self.ci:
            residual = self.ci_residual()
            if residual > 1e-9:
                raise ValueError(
                    f"pair marked CI but Q deviates from P_(X,side|Z) P_(Y|Z) P_Z by {residual:.3g}"
                )
        return self

    def ci_residual(self) -> float:
        """Sup-norm distance between Q and the H1 factorization built from P."""
        from dhtest.info import conditional_product

        target = conditional_product(
            self.P, [self.roles.x_side, [self.roles.y]], self.roles.z_list
        )
        return float(np.max(np.abs(target.probs - self.Q.probs)))

    @property
    def L(self) -> int:
        return len(self.roles.x)


class TestChannelSet(_Model):
    """One channel per encoder for each value t of the time-sharing variable."""

    __test__: ClassVar[bool] = False

    variants: List[List[TestChannel]]
    time_share: FloatArray

    @model_validator(mode="before")
    @classmethod
    def _default_time_share(cls, data):
        if isinstance(data, dict) and data.get("time_share") is None:
            count = len(data.get("variants") or [])
            data = {**data, "time_share": np.full(max(count, 1), 1.0 / max(count, 1))}
        return data

    @model_validator(mode="after")
    def _check_set(self) -> "TestChannelSet":
        if not self.variants or not self.variants[0]:
            raise ValueError("at least one channel variant is required")
        L = len(self.variants[0])
        if any(len(v) != L for v in self.variants):
            raise ValueError("every time-sharing variant needs one channel per encoder")
        if self.time_share.ndim != 1 or self.time_share.size != len(self.variants):
            raise ValueError("time_share needs one weight per variant")
        if np.any(self.time_share < 0) or abs(self.time_share.sum() - 1.0) > 1e-12:
            raise ValueError("time_share must be a pmf")
        if len(self.variants) > 2**L:
            raise ValueError(f"|T| = {len(self.variants)} exceeds 2^L = {2**L}")
        return self

    @classmethod
    def single(cls, channels: Sequence[TestChannel]) -> "TestChannelSet":
        return cls(variants=[list(channels)], time_share=[1.0])

    @property
    def L(self) -> int:
        return len(self.variants[0])


class RateBound(_Model):
    subset: List[str]
    bound: float


class QBTRegionPoint(_Model):
    bounds: List[RateBound]
    exponent: float

    def bound_for(self, subset: Sequence[str]) -> float:
        key = sorted(subset)
        for b in self.bounds:
            if sorted(b.subset) == key:
                return b.bound
        raise KeyError(f"no rate bound for subset {list(subset)}")


class ExponentResult(_Model):
    scheme: str
    rate: float
    value: float
    channel: TestChannel
    rho1: Optional[float] = Field(default=None)
    rho2: Optional[float] = Field(default=None)
    restarts: int = Field(default=0)
    gap: float = Field(default=0.0)

    @model_validator(mode="after")
    def _check_value(self) -> "ExponentResult":
        if self.value < -1e-12:
            raise ValueError(f"exponent must be nonnegative, got {self.value}")
        if self.rho1 is not None and self.rho2 is not None:
            expected = min(self.rho1, self.rho2)
            if abs(self.value - expected) > 1e-12:
                raise ValueError(f"value {self.value} is not min(rho1, rho2) = {expected}")
        return self

    def to_record(self) -> dict:
        return {
            "scheme": self.scheme,
            "rate": self.rate,
            "exponent": _finite_or_none(self.value),
            "rho1": _finite_or_none(self.rho1),
            "rho2": _finite_or_none(self.rho2),
            "channel": self.channel.rows.tolist(),
            "restarts": self.restarts,
            "gap": self.gap,
        }


class OuterBoundResult(_Model):
    rate: float
    value: float
    raw: float
    offset: float
    centralized: float
    channel: TestChannel
    restarts: int = Field(default=0)
    gap: float = Field(default=0.0)


class SufficientStatisticCheck(_Model):
    c5: bool
    rows_distinct: bool
    label: str = Field(default="necessary-check")
    residual: float = Field(default=0.0)


# ---------------------------------------------------------------------------
# Gaussian regions
# ---------------------------------------------------------------------------


class GaussianBinaryHypothesis(_Model):
    """Correlations of (X1, Y) under H0 and H1; rho1 is made nonnegative on construction."""

    rho0: float
    rho1: float
    flipped: bool = Field(default=False)

    @model_validator(mode="before")
    @classmethod
    def _canonicalize(cls, data):
        if isinstance(data, dict) and float(data.get("rho1", 0.0)) < 0:
            data = {
                "rho0": -float(data["rho0"]),
                "rho1": -float(data["rho1"]),
                "flipped": not data.get("flipped", False),
            }
        return data

    @model_validator(mode="after")
    def _check_rhos(self) -> "GaussianBinaryHypothesis":
        if not -1 < self.rho0 < 1 or not -1 < self.rho1 < 1:
            raise ValueError(f"correlations must lie in (-1, 1), got {self.rho0}, {self.rho1}")
        if self.rho0 == self.rho1:
            raise ValueError("rho0 and rho1 must differ")
        return self


class RegionLabel(_CaseInsensitiveEnum):
    D1 = "D1"
    D2 = "D2"
    D3 = "D3"
    UNTRACTABLE = "Untractable"


class RegionClass(_Model):
    label: RegionLabel
    rho: Optional[float] = Field(default=None)
    C: Optional[float] = Field(default=None)
    centralized: float

    @property
    def tractable(self) -> bool:
        return self.label != RegionLabel.UNTRACTABLE


class MHOParams(_Model):
    sigma2_x: float
    sigma2_n: float
    helper_noise: List[float]

    @model_validator(mode="after")
    def _check_variances(self) -> "MHOParams":
        if not self.helper_noise:
            raise ValueError("at least one helper is required")
        for name, value in [("sigma2_x", self.sigma2_x), ("sigma2_n", self.sigma2_n)] + [
            (f"helper_noise[{i}]", v) for i, v in enumerate(self.helper_noise)
        ]:
            if not value > 0:
                raise ValueError(f"{name} must be positive, got {value}")
        return self

    @property
    def L(self) -> int:
        return len(self.helper_noise)


class RateExponentPoint(_Model):
    main_rate: float = Field(default=0.0)
    helper_rates: List[float]
    exponent: float
    witness: Optional[List[float]] = Field(default=None)

    @model_validator(mode="after")
    def _check_nonnegative(self) -> "RateExponentPoint":
        values = [self.main_rate, self.exponent] + list(self.helper_rates)
        if self.witness is not None:
            values += list(self.witness)
        if any(not v >= 0 for v in values):
            raise ValueError("rates, exponent and witness must be nonnegative")
        return self


class MembershipStatus(_CaseInsensitiveEnum):
    MEMBER = "member"
    OUTSIDE = "outside"
    EXCEEDS_CENTRALIZED = "exceeds centralized exponent"


class MembershipResult(_Model):
    member: bool
    status: MembershipStatus
    witness: Optional[List[float]] = Field(default=None)
    slack: float
    distortion: float


class Covariance2x2(_Model):
    xx: float
    xy: float
    yy: float

    @model_validator(mode="after")
    def _check_pd(self) -> "Covariance2x2":
        if not (self.xx > 0 and self.xx * self.yy - self.xy**2 > 0):
            raise ValueError(
                f"covariance [[{self.xx}, {self.xy}], [{self.xy}, {self.yy}]] is not positive definite"
            )
        return self

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.xx, self.xy], [self.xy, self.yy]])

    @property
    def det(self) -> float:
        return self.xx * self.yy - self.xy**2

    @classmethod
    def from_matrix(cls, m) -> "Covariance2x2":
        m = np.asarray(m, dtype=float)
        if m.shape != (2, 2) or abs(m[0, 1] - m[1, 0]) > 1e-12:
            raise ValueError(f"expected a symmetric 2x2 matrix, got {m.tolist()}")
        return cls(xx=m[0, 0], xy=m[0, 1], yy=m[1, 1])


class LatentDecomposition(_Model):
    """Coefficients of (X1, Y) over independent standard normals (Z, Z', W, V)."""

    LATENTS: ClassVar[Tuple[str, ...]] = ("Z", "Z'", "W", "V")

    label: RegionLabel
    h0: FloatArray
    h1: FloatArray

    def covariance(self, hypothesis: int) -> np.ndarray:
        a = self.h0 if hypothesis == 0 else self.h1
        return a @ a.T


class CurvePoint(_Model):
    R1: float
    inner: float
    outer: float
    outer_raw: float
    centralized: float


class RegionCurve(_Model):
    hypothesis: GaussianBinaryHypothesis
    region: RegionClass
    points: List[CurvePoint]


# ---------------------------------------------------------------------------
# Simulator
# ---------------------------------------------------------------------------

CODEBOOK_LOG2_CAP = 24


class SimConfig(_Model):
    n: int
    codebook_rate: float
    bin_rate: float
    mu: float = Field(default_factory=lambda: get_settings().typicality_mu)
    epsilon: float = Field(default_factory=lambda: get_settings().epsilon)
    trials: int
    seed: int
    n_list: Optional[List[int]] = Field(default=None)
    shared_codebook: bool = Field(default=True)
    threads: int = Field(default_factory=lambda: get_settings().threads)

    @model_validator(mode="after")
    def _check_config(self) -> "SimConfig":
        if self.trials < 1:
            raise ValueError(f"trials must be positive, got {self.trials}")
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        if not 0 < self.epsilon <= 1:
            raise ValueError(f"epsilon must lie in (0, 1], got {self.epsilon}")
        if not 0 <= self.bin_rate <= self.codebook_rate:
            raise ValueError(
                f"need 0 <= bin_rate <= codebook_rate, got {self.bin_rate} and {self.codebook_rate}"
            )
        if not 0 <= self.seed < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if self.threads < 1:
            raise ValueError(f"threads must be positive, got {self.threads}")
        for n in self.blocklengths:
            if n < 1:
                raise ValueError(f"blocklength must be positive, got {n}")
            if math.ceil(n * self.codebook_rate) > CODEBOOK_LOG2_CAP:
                raise ValueError(
                    f"n * codebook_rate = {n * self.codebook_rate:g} exceeds the "
                    f"2^{CODEBOOK_LOG2_CAP} codeword cap"
                )
        return self

    @property
    def blocklengths(self) -> List[int]:
        return sorted(set([self.n] + list(self.n_list or [])))


class Codebook(_Model):
    codewords: SymbolArray
    bin_of: IntArray
    n_bins: int
    reference: JointPMF

    @property
    def size(self) -> int:
        return self.codewords.shape[0]

    @property
    def n(self) -> int:
        return self.codewords.shape[1]

    def members(self, bin_index: int) -> np.ndarray:
        """Codeword indices in a bin, ascending."""
        return np.flatnonzero(self.bin_of == bin_index)


class Encoding(_Model):
    bin_index: int
    codeword_index: int
    joint_type: JointPMF
    found: bool


class Decision(_CaseInsensitiveEnum):
    H0 = "H0"
    H1 = "H1"


class SimRow(_Model):
    n: int
    trials: int
    type1_count: int
    type2_count: int
    type1_rate: float
    type2_rate: float
    type2_ci: Tuple[float, float]
    encode_failure_rate: float
    decode_error_rate: float
    type1_within_epsilon: bool
    neg_log2_type2_per_n: Optional[float] = Field(default=None)

    @model_validator(mode="after")
    def _check_rates(self) -> "SimRow":
        for name in ("type1_rate", "type2_rate", "encode_failure_rate", "decode_error_rate"):
            value = getattr(self, name)
            if not 0 <= value <= 1:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")
        return self


class ExponentEstimate(_Model):
    slope: float
    stderr: float
    intercept: float
    blocklengths: List[int]

    def upper(self, z: float = 2.0) -> float:
        return self.slope + z * self.stderr


class SimResult(_Model):
    config: SimConfig
    type1_rate: float
    type1_within_epsilon: bool
    type2_rate: float
    type2_ci: Tuple[float, float]
    rows: List[SimRow]
    exponent_estimate: Optional[ExponentEstimate] = Field(default=None)
    metadata: Dict[str, str] = Field(default_factory=dict)

    def row_for(self, n: int) -> SimRow:
        for row in self.rows:
            if row.n == n:
                return row
        raise KeyError(f"no results for blocklength {n}")
