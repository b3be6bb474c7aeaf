# This file is part of PPSOLab, a numerical laboratory for participating
# policies with surrender options, MIT license.
#
# See: README.md

"""
This module is the command line front end. It resolves the configuration,
dispatches the command and writes the artifacts into the output directory.

Usage: ppsolab <command> [--config FILE] [--out DIR] [--steps N] [--paths M]
       [--seed S] [--fees p,q] [--workers W] [--set key=value ...]
       [--sweep key=v1,v2,... ...] [--log-level LEVEL] [--log-file FILE]

The exit status is 0 if every check that ran passed, 1 if a check failed or
the run could not be completed and 2 for a bad command line.
"""

# Python std modules:
from typing import Any, Optional
import argparse
import datetime
import json
import logging
import math
import pathlib
import sys

# External modules:
import pandas as pd

# Local modules:
from ppsolab.pl_artifact import read_csv_artifact, read_json_artifact, write_csv_artifact, write_json_artifact
from ppsolab.pl_boundary import PLBoundaryCurves, PLShapeReport, curves_to_frame, extract_c, \
    extract_time_boundaries, validate_shape
from ppsolab.pl_config import PLCommand, PLConfiguration, parse_config
from ppsolab.pl_engine import default_lattice_spec, price_cone, solve_grid
from ppsolab.pl_model import PLPolicyParams, classify_fee_case, derive_thresholds
from ppsolab.pl_montecarlo import coupled_flow_check, mc_check
from ppsolab.pl_worker import PLJobRunner, run_jobs

logger = logging.getLogger(__name__)

LOG_FORMAT: str = "%(asctime)s - %(levelname)s - %(name)s - %(message)s"

# Reference prices from the published Table 1 (a0 = 1000, alpha = 0.1, T = 10,
# sigma = 18%, gamma = 0.4, r_g = 1%, r = r_g + spread).
# Columns: spread, scenario, delta, beta, V0, V0E, Vopt.
# The lattice and the full simulation of the two dimensional model agree with
# each other but not with these numbers, so table1 reports the deviations as
# failures.
TABLE1_REFERENCE: list[tuple[float, str, float, float, float, float, float]] = [
    (0.005, "low", 0.1, 3.4, 100.7, 99.44, 1.26),
    (0.005, "medium", 0.25, 2.7, 104.16, 103.43, 0.73),
    (0.005, "high", 0.6, 2.0, 160.93, 160.41, 0.52),
    (0.008, "low", 0.1, 3.4, 100.27, 94.92, 5.35),
    (0.008, "medium", 0.25, 2.7, 102.17, 99.29, 2.88),
    (0.008, "high", 0.6, 2.0, 158.14, 156.47, 1.67),
    (0.015, "low", 0.1, 3.4, 100.14, 88.98, 11.16),
    (0.015, "medium", 0.25, 2.7, 100.64, 93.93, 6.71),
    (0.015, "high", 0.6, 2.0, 154.81, 151.38, 3.43),
]

TABLE1_COLUMNS: list[str] = ["spread", "scenario", "V0", "V0E", "Vopt", "V0_paper", "V0E_paper", "Vopt_paper",
                             "abs_err_V0", "abs_err_V0E", "abs_err_Vopt"]

DEFAULT_SWEEPS: dict[str, list[float]] = {
    "alpha": [math.exp(-0.2), math.exp(-1.5), math.exp(-2.3026), math.exp(-3.3)],
    "gamma": [0.15, 0.4, 0.7],
    "r_g": [0.005, 0.01, 0.014],
}


def table1_params(spread: float, delta: float, beta: float) -> PLPolicyParams:
    return PLPolicyParams(maturity_T=10.0, risk_free_r=0.01 + spread, volatility_sigma=0.18,
                          guaranteed_rg=0.01, participation_delta=delta, buffer_beta=beta,
                          bonus_gamma=0.4, share_alpha=0.1, portfolio_a0=1000.0)


def table1_tolerance(reference: float) -> float:
    return max(0.5, 0.01 * abs(reference))


def boundary_run(params: PLPolicyParams, n_steps: int,
        x_max: Optional[float] = None) -> tuple[PLBoundaryCurves, PLShapeReport]:
    """
    Solves the grid for the parameters and extracts and validates the
    boundaries. The grid itself is dropped afterwards.
    """

    thresholds = derive_thresholds(params)
    solution = solve_grid(params, default_lattice_spec(params, n_steps, x_max))
    curves = extract_time_boundaries(extract_c(solution), solution, thresholds)
    report = validate_shape(curves, thresholds, thresholds.fee_case, solution=solution)

    return curves, report


def _cmd_price(config: PLConfiguration, out_dir: pathlib.Path, runner: PLJobRunner) -> tuple[int, list[pathlib.Path]]:
    params = config.policy_params()
    valuation = price_cone(params, config.n_steps)

    body = {
        "valuation": valuation.to_dict(),
        "thresholds": derive_thresholds(params).to_dict(),
        "fee_case": classify_fee_case(params).to_dict(),
    }

    logger.info(f"V0={valuation.price_V0}, V0E={valuation.price_V0E}, Vopt={valuation.price_Vopt}")

    return 0, [write_json_artifact(out_dir / "price.json", body, config.to_dict())]


def _cmd_boundary(config: PLConfiguration, out_dir: pathlib.Path,
        runner: PLJobRunner) -> tuple[int, list[pathlib.Path]]:
    params = config.policy_params()
    curves, report = boundary_run(params, config.n_steps, config.x_max)
    cfg = config.to_dict()

    landmarks = curves.landmarks()
    landmarks["thresholds"] = derive_thresholds(params).to_dict()

    written = [
        write_csv_artifact(out_dir / "boundary.csv", curves_to_frame(curves), cfg),
        write_json_artifact(out_dir / "landmarks.json", landmarks, cfg),
        write_json_artifact(out_dir / "shape_report.json", report.to_dict(), cfg),
    ]

    return (0 if report.summary else 1), written


def _cmd_table1(config: PLConfiguration, out_dir: pathlib.Path,
        runner: PLJobRunner) -> tuple[int, list[pathlib.Path]]:
    n_steps = config.n_steps
    jobs = [lambda s=s, d=d, b=b: price_cone(table1_params(s, d, b), n_steps)
            for s, _, d, b, _, _, _ in TABLE1_REFERENCE]
    valuations = run_jobs(jobs, runner)

    rows = []
    failures = []
    for (spread, scenario, _, _, v0_ref, v0e_ref, vopt_ref), valuation in zip(TABLE1_REFERENCE, valuations):
        measured = (valuation.price_V0, valuation.price_V0E, valuation.price_Vopt)
        reference = (v0_ref, v0e_ref, vopt_ref)
        errors = [abs(m - p) for m, p in zip(measured, reference)]

        for name, err, ref in zip(("V0", "V0E", "Vopt"), errors, reference):
            if err > table1_tolerance(ref):
                failures.append(f"{scenario}/{spread}:{name}")
                logger.error(f"Table 1 {scenario}/{spread} {name}: error {err} above {table1_tolerance(ref)}")

        rows.append((spread, scenario, *measured, *reference, *errors))

    frame = pd.DataFrame(rows, columns=TABLE1_COLUMNS)
    cfg = config.to_dict()
    body = {"rows": frame.to_dict(orient="records"), "failures": failures}

    written = [
        write_csv_artifact(out_dir / "table1.csv", frame, cfg),
        write_json_artifact(out_dir / "table1.json", body, cfg),
    ]

    return (0 if not failures else 1), written


def _cmd_sensitivity(config: PLConfiguration, out_dir: pathlib.Path,
        runner: PLJobRunner) -> tuple[int, list[pathlib.Path]]:
    sweeps = config.sweep if config.sweep else DEFAULT_SWEEPS
    points = [(key, i, value) for key, values in sweeps.items() for i, value in enumerate(values)]

    jobs = [lambda key=key, value=value: boundary_run(config.policy_params(**{key: value}), config.n_steps)
            for key, _, value in points]
    results = run_jobs(jobs, runner)

    cfg = config.to_dict()
    written = []
    entries = []
    for (key, i, value), (curves, report) in zip(points, results):
        path = write_csv_artifact(out_dir / f"sweep_{key}_{i}.csv", curves_to_frame(curves), cfg)
        written.append(path)
        entries.append({
            "key": key,
            "index": i,
            "value": value,
            "file": path.name,
            "landmarks": curves.landmarks(),
            "shape_summary": report.summary,
        })

    written.append(write_json_artifact(out_dir / "sensitivity.json", {"points": entries}, cfg))

    return 0, written


def _cmd_mc_check(config: PLConfiguration, out_dir: pathlib.Path,
        runner: PLJobRunner) -> tuple[int, list[pathlib.Path]]:
    params = config.policy_params()
    valuation = price_cone(params, config.n_steps)
    curves, _ = boundary_run(params, config.n_steps, config.x_max)
    verdicts = mc_check(params, valuation, curves, config.mc_spec(), runner)
    failures = [verdict["name"] for verdict in verdicts if not verdict["passed"]]

    body = {"valuation": valuation.to_dict(), "verdicts": verdicts, "failures": failures}

    return (0 if not failures else 1), [write_json_artifact(out_dir / "mc_check.json", body, config.to_dict())]


def _cmd_flow_check(config: PLConfiguration, out_dir: pathlib.Path,
        runner: PLJobRunner) -> tuple[int, list[pathlib.Path]]:
    params = config.policy_params()
    report = coupled_flow_check(params, config.flow_x, config.flow_y, config.mc_spec(), runner)
    body: dict[str, Any] = report.to_dict()
    body["failures"] = [] if report.passed else ["flow_inequalities"]

    return (0 if report.passed else 1), [write_json_artifact(out_dir / "flow_check.json", body, config.to_dict())]


def run_command(config: PLConfiguration, runner: Optional[PLJobRunner] = None) -> tuple[int, list[pathlib.Path]]:
    """
    Runs the configured command and writes its artifacts.

    :param config: A validated configuration.
    :param runner: Job runner for independent jobs, defaults to one with
        config.n_workers workers.
    :return: The exit status and the files written.
    :rtype: tuple[int, list[pathlib.Path]]
    """

    if runner is None:
        runner = PLJobRunner(config.n_workers)

    out_dir = pathlib.Path(config.output_dir)
    logger.info(f"Run command {config.command.value}, output into {out_dir}")

    match config.command:
        case PLCommand.Price:
            command = _cmd_price
        case PLCommand.Boundary:
            command = _cmd_boundary
        case PLCommand.Table1:
            command = _cmd_table1
        case PLCommand.Sensitivity:
            command = _cmd_sensitivity
        case PLCommand.McCheck:
            command = _cmd_mc_check
        case PLCommand.FlowCheck:
            command = _cmd_flow_check

    status, written = command(config, out_dir, runner)
    logger.info(f"Jobs done: {runner.jobs_done}")

    return status, written


def load_config_text(file_name: Optional[str]) -> str:
    """
    Reads the configuration file. A JSON or CSV artifact of an earlier run
    can be given instead, then its embedded configuration (without the
    command) is used and the run is repeated.

    :param file_name: The configuration file or artifact, may be None.
    :return: The configuration as JSON text, empty if there is no file.
    :rtype: str
    """

    if not file_name:
        return ""

    path = pathlib.Path(file_name)

    if path.suffix == ".csv":
        embedded, _ = read_csv_artifact(path)
    else:
        contents = path.read_text()
        if "schema_version" not in contents:
            return contents
        embedded = read_json_artifact(path)["config"]

    logger.info(f"Reuse the configuration of artifact {path}")
    embedded.pop("command", None)

    return json.dumps(embedded)


def _split_pair(text: str, flag: str) -> tuple[str, str]:
    key, sep, value = text.partition("=")
    assert sep == "=" and key != "", f"{flag} expects key=value: {text}"

    return key.strip(), value.strip()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ppsolab",
                                     description="Lattice and Monte Carlo valuation of participating policies "
                                                 "with a surrender option.")
    parser.add_argument("command", choices=[c.value for c in PLCommand])
    parser.add_argument("--config", help="JSON configuration file")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--steps", help="number of time steps of the lattice")
    parser.add_argument("--paths", help="number of simulated paths")
    parser.add_argument("--seed", help="random seed")
    parser.add_argument("--fees", help="management fees as p,q")
    parser.add_argument("--workers", help="number of worker threads")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one configuration value, may be repeated")
    parser.add_argument("--sweep", action="append", default=[], metavar="KEY=V1,V2,...",
                        help="sweep one policy parameter, may be repeated")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    parser.add_argument("--log-file", help="write the log into this file")

    return parser


def collect_overrides(args: argparse.Namespace) -> list[tuple[str, str]]:
    """
    Turns the command line flags into (key, text) overrides. --set comes
    first, the dedicated flags after it.
    """

    overrides = [_split_pair(text, "--set") for text in args.set]

    for text in args.sweep:
        key, values = _split_pair(text, "--sweep")
        points = []
        for value in values.split(","):
            try:
                points.append(float(value))
            except ValueError:
                raise AssertionError(f"Sweep value for {key} is not a number: {value}") from None
        overrides.append(("sweep", json.dumps({key: points})))

    for flag, key in (("steps", "n_steps"), ("paths", "n_paths"), ("seed", "seed"),
                      ("workers", "n_workers"), ("out", "output_dir")):
        value = getattr(args, flag)
        if value is not None:
            overrides.append((key, value))

    if args.fees is not None:
        parts = args.fees.split(",")
        assert len(parts) == 2, f"--fees expects p,q: {args.fees}"
        overrides.extend([("fee_p", parts[0].strip()), ("fee_q", parts[1].strip())])

    return overrides


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    logging.basicConfig(filename=args.log_file, level=getattr(logging, args.log_level), format=LOG_FORMAT,
                        force=True)

    start_time = datetime.datetime.now()
    logger.info(f"Starting now: {start_time}")

    try:
        contents = load_config_text(args.config)
        config = parse_config(contents, collect_overrides(args), PLCommand(args.command))
        status, written = run_command(config)
        logger.info(f"{len(written)} artifacts written, exit status {status}")
    except (AssertionError, ArithmeticError, OSError, ValueError) as err:
        logger.error(f"{type(err).__name__}: {err}")
        status = 1

    end_time = datetime.datetime.now()
    logger.info(f"Finished on: {end_time}")

    time_taken = end_time - start_time
    in_seconds = time_taken.total_seconds()
    logger.info(f"Time taken: in seconds: {in_seconds}")
    logger.info(f"Time taken: in minutes: {in_seconds / 60.0}")

    return status


if __name__ == "__main__":
    sys.exit(main())
