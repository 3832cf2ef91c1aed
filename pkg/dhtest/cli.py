"""
Command-line front end. Results go to --out or stdout; the region banner,
generated seeds and log messages go to stderr.

Exit codes: 0 success, 2 domain error, 64 usage error, 66 missing input.
"""

import argparse
import json
import logging
import os
import sys
from typing import List, Optional, Sequence, Type, TypeVar

import numpy as np
from pydantic import BaseModel, Field, ValidationError, field_validator

from dhtest._config import get_settings, resolve_threads
from dhtest.data_model import (
    GaussianBinaryHypothesis,
    HypothesisPair,
    JointPMF,
    MembershipResult,
    MembershipStatus,
    MHOParams,
    RateExponentPoint,
    SimConfig,
    TestChannel,
)
from dhtest.discrete import (
    COUPLING_TOL,
    outer_bound_1enc,
    qbt_exponent_1enc,
    sha_exponent_1enc,
    sufficient_statistic_check,
    xi_residuals,
)
from dhtest.exceptions import DHTestError, DomainError
from dhtest.gaussian import (
    ceo_membership,
    classify,
    mho_D,
    mho_membership,
    oh_min_R,
    oh_witness,
    sweep_curves,
    write_curve_csv,
)
from dhtest.simulator import run_trials, write_sim_csv

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_DOMAIN = 2
EXIT_USAGE = 64
EXIT_NO_INPUT = 66

LOG_LEVELS = ["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]

M = TypeVar("M", bound=BaseModel)


class CommandSpec(BaseModel):
    """Validated flags shared by every subcommand."""

    name: str
    inputs: List[str] = Field(default_factory=list)
    out: Optional[str] = Field(default=None)
    seed: Optional[int] = Field(default=None)
    threads: Optional[int] = Field(default=None)
    restarts: Optional[int] = Field(default=None)

    @field_validator("seed")
    @classmethod
    def _check_seed(cls, v: Optional[int]) -> Optional[int]:
        if v is not None and not 0 <= v < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {v}")
        return v

    @field_validator("threads", "restarts")
    @classmethod
    def _check_positive(cls, v: Optional[int]) -> Optional[int]:
        if v is not None and v < 1:
            raise ValueError(f"must be a positive integer, got {v}")
        return v


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return value


def _nonnegative_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}")
    if not value >= 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative number, got {text!r}")
    return value


def _float_list(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _name_list(text: str) -> List[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def _command_spec(args: argparse.Namespace, inputs: Sequence[Optional[str]] = ()) -> CommandSpec:
    spec = CommandSpec(
        name=args.command,
        inputs=[i for i in inputs if i is not None],
        out=args.out,
        seed=getattr(args, "seed", None),
        threads=args.threads,
        restarts=getattr(args, "restarts", None),
    )
    for path in spec.inputs:
        if not os.path.isfile(path):
            raise FileNotFoundError(f"input file not found: {path}")
    return spec


def _read(path: str, model: Type[M]) -> M:
    with open(path) as f:
        return model.model_validate_json(f.read())


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        with open(out, "w", newline="") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


def _seed(spec: CommandSpec) -> int:
    if spec.seed is not None:
        return spec.seed
    seed = int(np.random.SeedSequence().entropy % 2**64)
    print(f"seed: {seed}", file=sys.stderr)
    return seed


def _membership_exit(result: MembershipResult) -> int:
    if result.status == MembershipStatus.EXCEEDS_CENTRALIZED:
        print("empty region: exponent exceeds the centralized exponent", file=sys.stderr)
        return EXIT_DOMAIN
    return EXIT_OK


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_gaussian_sweep(args: argparse.Namespace) -> int:
    spec = _command_spec(args)
    h = GaussianBinaryHypothesis(rho0=args.rho0, rho1=args.rho1)
    region = classify(h)
    print(
        f"region {region.label.value}: rho={region.rho} C={region.C} "
        f"E_C={region.centralized:.12g} flipped={h.flipped}",
        file=sys.stderr,
    )
    curve = sweep_curves(h, np.linspace(0.0, args.r_max, args.samples), threads=spec.threads)
    if spec.out:
        write_curve_csv(curve, spec.out)
    else:
        write_curve_csv(curve, sys.stdout)
    return EXIT_OK


def cmd_exponent(args: argparse.Namespace) -> int:
    spec = _command_spec(args, [args.pair])
    h = _read(args.pair, HypothesisPair)
    seed = _seed(spec)
    kwargs = dict(restarts=spec.restarts, seed=seed, threads=spec.threads)
    if args.scheme == "qbt":
        payload = qbt_exponent_1enc(h, args.rate, **kwargs).to_record()
    elif args.scheme == "sha":
        payload = sha_exponent_1enc(h, args.rate, **kwargs).to_record()
    else:
        qbt = qbt_exponent_1enc(h, args.rate, **kwargs)
        sha = sha_exponent_1enc(h, args.rate, warm_start=qbt.channel, **kwargs)
        gap = abs(sha.value - qbt.value)
        print(f"|E_SHA - E_QBT| = {gap:.3g}", file=sys.stderr)
        payload = {"qbt": qbt.to_record(), "sha": sha.to_record(), "gap": gap}
    _emit(json.dumps(payload, indent=2, allow_nan=False) + "\n", spec.out)
    return EXIT_OK


def cmd_outer_bound(args: argparse.Namespace) -> int:
    spec = _command_spec(args, [args.pair, args.coupled_p, args.coupled_q])
    h = _read(args.pair, HypothesisPair)
    coupled_P = _read(args.coupled_p, JointPMF)
    coupled_Q = _read(args.coupled_q, JointPMF)
    result = outer_bound_1enc(
        h,
        coupled_P,
        coupled_Q,
        args.rate,
        restarts=spec.restarts,
        seed=_seed(spec),
        threads=spec.threads,
    )
    _emit(result.model_dump_json(indent=2) + "\n", spec.out)
    return EXIT_OK


def cmd_mho(args: argparse.Namespace) -> int:
    spec = _command_spec(args, [args.params, args.point])
    p = _read(args.params, MHOParams)
    if args.point:
        result = mho_membership(_read(args.point, RateExponentPoint), p)
        _emit(result.model_dump_json(indent=2) + "\n", spec.out)
        return _membership_exit(result)
    if not args.r1_grid or not args.e_grid:
        raise DomainError("--min-main-rate needs --r1-grid and --e-grid")
    lines = ["R1,E,R_min"]
    empty = 0
    for R1 in args.r1_grid:
        for E in args.e_grid:
            if mho_D(E, p) <= 0:
                empty += 1
                lines.append(f"{R1:.12g},{E:.12g},empty")
            else:
                lines.append(f"{R1:.12g},{E:.12g},{oh_min_R(R1, E, p):.12g}")
    _emit("\n".join(lines) + "\n", spec.out)
    if empty:
        print(f"empty region: {empty} exponents exceed the centralized exponent", file=sys.stderr)
        return EXIT_DOMAIN
    return EXIT_OK


def cmd_ceo(args: argparse.Namespace) -> int:
    spec = _command_spec(args, [args.params])
    p = _read(args.params, MHOParams)
    result = ceo_membership(args.rates, args.exponent, p)
    _emit(result.model_dump_json(indent=2) + "\n", spec.out)
    return _membership_exit(result)


def cmd_one_helper(args: argparse.Namespace) -> int:
    spec = _command_spec(args, [args.params])
    p = _read(args.params, MHOParams)
    if mho_D(args.exponent, p) <= 0:
        print("empty region: exponent exceeds the centralized exponent", file=sys.stderr)
        return EXIT_DOMAIN
    payload = {
        "R1": args.r1,
        "E": args.exponent,
        "min_main_rate": oh_min_R(args.r1, args.exponent, p),
        "witness_r1": oh_witness(args.r1, p),
    }
    _emit(json.dumps(payload, indent=2, allow_nan=False) + "\n", spec.out)
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    spec = _command_spec(args, [args.config, args.pair, args.channel])
    with open(args.config) as f:
        raw = json.load(f)
    if spec.seed is not None or "seed" not in raw:
        raw["seed"] = _seed(spec)
    raw["threads"] = resolve_threads(spec.threads)
    cfg = SimConfig.model_validate(raw)
    h = _read(args.pair, HypothesisPair)
    ch = _read(args.channel, TestChannel)
    # progress goes to stderr unless a log level was chosen
    progress = logging.getLogger("dhtest.simulator")
    previous = progress.level
    if args.log_level is None and "DHTEST_LOG_LEVEL" not in os.environ:
        progress.setLevel(min(progress.getEffectiveLevel(), logging.INFO))
    try:
        result = run_trials(cfg, h, ch)
    finally:
        progress.setLevel(previous)
    if args.csv:
        write_sim_csv(result, args.csv)
    _emit(result.model_dump_json(indent=2) + "\n", spec.out)
    return EXIT_OK


def cmd_check_xi(args: argparse.Namespace) -> int:
    spec = _command_spec(args, [args.pair, args.coupled_p, args.coupled_q])
    h = _read(args.pair, HypothesisPair)
    residuals = xi_residuals(_read(args.coupled_p, JointPMF), _read(args.coupled_q, JointPMF), h)
    member = all(residuals[k] <= COUPLING_TOL for k in ("C12", "C13", "C14", "C15"))
    _emit(json.dumps({"member": member, **residuals}, indent=2, allow_nan=False) + "\n", spec.out)
    return EXIT_OK


def cmd_check_suffstat(args: argparse.Namespace) -> int:
    spec = _command_spec(args, [args.pmf])
    p = _read(args.pmf, JointPMF)
    result = sufficient_statistic_check(p, args.x_vars, args.y, [int(v) for v in args.map], args.z)
    _emit(result.model_dump_json(indent=2) + "\n", spec.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default=None, help="output file, default stdout")
    common.add_argument("--threads", type=_positive_int, default=None, help="worker threads")
    common.add_argument("--log-level", type=str.upper, choices=LOG_LEVELS, default=None)

    seeded = argparse.ArgumentParser(add_help=False)
    seeded.add_argument("--seed", type=int, default=None, help="master seed, generated if omitted")

    search = argparse.ArgumentParser(add_help=False)
    search.add_argument("--restarts", type=_positive_int, default=None, help="random restarts")

    parser = _Parser(prog="dhtest", description="Distributed hypothesis testing exponents")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gaussian-sweep", parents=[common], help="Gaussian inner/outer bounds over R1")
    p.add_argument("--rho0", type=float, required=True)
    p.add_argument("--rho1", type=float, required=True)
    p.add_argument("--r-max", type=_nonnegative_float, default=4.0)
    p.add_argument("--samples", type=_positive_int, default=101)
    p.set_defaults(handler=cmd_gaussian_sweep)

    p = sub.add_parser("exponent", parents=[common, seeded, search], help="one-encoder exponent")
    p.add_argument("--pair", required=True)
    p.add_argument("--rate", type=_nonnegative_float, required=True)
    p.add_argument("--scheme", choices=["qbt", "sha", "both"], default="qbt")
    p.set_defaults(handler=cmd_exponent)

    p = sub.add_parser("outer-bound", parents=[common, seeded, search], help="one-encoder outer bound")
    p.add_argument("--pair", required=True)
    p.add_argument("--coupled-p", required=True)
    p.add_argument("--coupled-q", required=True)
    p.add_argument("--rate", type=_nonnegative_float, required=True)
    p.set_defaults(handler=cmd_outer_bound)

    p = sub.add_parser("mho", parents=[common], help="many-help-one membership")
    p.add_argument("--params", required=True)
    mode = p.add_mutually_exclusive_group(required=True)
    mode.add_argument("--point", default=None)
    mode.add_argument("--min-main-rate", action="store_true")
    p.add_argument("--r1-grid", type=_float_list, default=None)
    p.add_argument("--e-grid", type=_float_list, default=None)
    p.set_defaults(handler=cmd_mho)

    p = sub.add_parser("ceo", parents=[common], help="CEO membership (no main rate)")
    p.add_argument("--params", required=True)
    p.add_argument("--rates", type=_float_list, required=True)
    p.add_argument("--exponent", type=_nonnegative_float, required=True)
    p.set_defaults(handler=cmd_ceo)

    p = sub.add_parser("one-helper", parents=[common], help="one-helper minimum main rate")
    p.add_argument("--params", required=True)
    p.add_argument("--r1", type=_nonnegative_float, required=True)
    p.add_argument("--exponent", type=_nonnegative_float, required=True)
    p.set_defaults(handler=cmd_one_helper)

    p = sub.add_parser("simulate", parents=[common, seeded], help="Monte Carlo simulation")
    p.add_argument("--config", required=True)
    p.add_argument("--pair", required=True)
    p.add_argument("--channel", required=True)
    p.add_argument("--csv", default=None, help="also write the per-n table as CSV")
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("check-xi", parents=[common], help="coupling conditions")
    p.add_argument("--pair", required=True)
    p.add_argument("--coupled-p", required=True)
    p.add_argument("--coupled-q", required=True)
    p.set_defaults(handler=cmd_check_xi)

    p = sub.add_parser("check-suffstat", parents=[common], help="sufficient-statistic check")
    p.add_argument("--pmf", required=True)
    p.add_argument("--x-vars", type=_name_list, required=True)
    p.add_argument("--y", required=True)
    p.add_argument("--z", default=None)
    p.add_argument("--map", type=_name_list, required=True, help="X symbol per x-vars symbol")
    p.set_defaults(handler=cmd_check_suffstat)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_OK

    try:
        level = args.log_level or get_settings().log_level
        logging.basicConfig(
            level=getattr(logging, level, logging.WARNING),
            stream=sys.stderr,
            format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        )
        return args.handler(args)
    except FileNotFoundError as e:
        print(f"dhtest: {e}", file=sys.stderr)
        return EXIT_NO_INPUT
    except ValidationError as e:
        print(f"dhtest: invalid input: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (json.JSONDecodeError, ValueError) as e:
        if isinstance(e, DHTestError):
            print(f"dhtest: {e}", file=sys.stderr)
            return EXIT_DOMAIN
        print(f"dhtest: invalid input: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DHTestError as e:
        print(f"dhtest: {e}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
