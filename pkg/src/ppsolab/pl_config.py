# This file is part of PPSOLab, a numerical laboratory for participating
# policies with surrender options, MIT license.
#
# See: README.md

"""
This module defines the run configuration: policy parameters, lattice and
simulation settings, output directory and sweeps.

Values are resolved as defaults < JSON file < command line overrides.
"""

# Python std modules:
from enum import Enum
from typing import Any, Optional
import json
import logging
import math
import os

# Local modules:
from ppsolab.pl_model import PLPolicyParams
from ppsolab.pl_montecarlo import PLMcSpec

logger = logging.getLogger(__name__)

# Configuration key -> field of PLPolicyParams.
POLICY_KEYS: dict[str, str] = {
    "T": "maturity_T",
    "r": "risk_free_r",
    "sigma": "volatility_sigma",
    "r_g": "guaranteed_rg",
    "delta": "participation_delta",
    "beta": "buffer_beta",
    "gamma": "bonus_gamma",
    "alpha": "share_alpha",
    "a0": "portfolio_a0",
    "fee_p": "fee_p",
    "fee_q": "fee_q",
}

FLOAT_KEYS: set[str] = set(POLICY_KEYS) | {"x_max", "flow_x", "flow_y"}
INT_KEYS: set[str] = {"n_steps", "n_paths", "steps_per_year", "seed", "n_workers"}
ALL_KEYS: set[str] = FLOAT_KEYS | INT_KEYS | {"bridge_correction", "output_dir", "sweep"}

OUT_DIR_ENV: str = "PPSOLAB_OUT_DIR"


class PLCommand(Enum):
    """
    The commands of the command line tool:
        - Price: headline prices from the cone tree.
        - Boundary: grid solution, boundaries and shape report.
        - Table1: the nine Table 1 scenarios against their reference values.
        - Sensitivity: boundaries over parameter sweeps.
        - McCheck: simulation against lattice agreement tests.
        - FlowCheck: pathwise flow inequalities.
    """

    Price = "price"
    Boundary = "boundary"
    Table1 = "table1"
    Sensitivity = "sensitivity"
    McCheck = "mc-check"
    FlowCheck = "flow-check"


def _check_number(key: str, value: Any) -> float:
    assert isinstance(value, (int, float)) and not isinstance(value, bool), \
        f"Value for key {key} must be a number: {value}"
    assert math.isfinite(value), f"Value for key {key} must be finite: {value}"

    return value


class PLConfiguration:
    def __init__(self, command: PLCommand = PLCommand.Price):
        defaults = PLPolicyParams()

        self.command: PLCommand = command
        self.policy: dict[str, float] = {key: getattr(defaults, name) for key, name in POLICY_KEYS.items()}
        self.n_steps: int = 2000
        self.x_max: Optional[float] = None
        self.n_paths: int = 100_000
        self.steps_per_year: int = 250
        self.seed: int = 42
        self.bridge_correction: bool = True
        self.output_dir: str = os.environ.get(OUT_DIR_ENV, "./ppsolab_out")
        self.n_workers: int = 4
        self.flow_x: float = 2.0
        self.flow_y: float = 2.5
        self.sweep: dict[str, list[float]] = {}

    def pl_set(self, key: str, value: Any) -> None:
        """
        Sets one configuration value after checking its type and range.
        Policy parameters are only checked together, see pl_validate().

        :param key: The configuration key.
        :param value: The new value, as it comes out of a JSON document.
        """

        assert key in ALL_KEYS, f"Unknown configuration key: {key}"

        if key in POLICY_KEYS:
            self.policy[key] = float(_check_number(key, value))

        if key in INT_KEYS:
            assert isinstance(value, int) and not isinstance(value, bool), \
                f"Value for key {key} must be an integer: {value}"

        match key:
            case "n_steps":
                assert value >= 1, f"Number of time steps must be at least 1: {value}"
                self.n_steps = value
            case "x_max":
                if value is not None:
                    value = float(_check_number(key, value))
                    assert value > 0.0, f"Upper level x_max must be positive: {value}"
                self.x_max = value
            case "n_paths":
                assert value >= 1, f"Number of paths must be at least 1: {value}"
                self.n_paths = value
            case "steps_per_year":
                assert value >= 1, f"Steps per year must be at least 1: {value}"
                self.steps_per_year = value
            case "seed":
                self.seed = value
            case "n_workers":
                assert value >= 1, f"Number of workers must be at least 1: {value}"
                self.n_workers = value
            case "bridge_correction":
                assert isinstance(value, bool), f"Value for key {key} must be true or false: {value}"
                self.bridge_correction = value
            case "output_dir":
                assert isinstance(value, str) and value != "", f"Output directory must be a path: {value}"
                self.output_dir = value
            case "flow_x":
                self.flow_x = float(_check_number(key, value))
            case "flow_y":
                self.flow_y = float(_check_number(key, value))
            case "sweep":
                assert isinstance(value, dict), f"Sweep must map parameter keys to lists of values: {value}"
                for sweep_key, points in value.items():
                    self.pl_set_sweep(sweep_key, points)

    def pl_set_text(self, key: str, text: str) -> None:
        """
        Sets one value given as text on the command line.
        """

        assert key in ALL_KEYS, f"Unknown configuration key: {key}"

        value: Any = text
        if key in FLOAT_KEYS:
            if key == "x_max" and text.lower() in ("none", "null"):
                value = None
            else:
                value = _parse_text(key, text, float)
        elif key in INT_KEYS:
            value = _parse_text(key, text, int)
        elif key == "bridge_correction":
            assert text.lower() in ("true", "false", "1", "0"), f"Value for key {key} must be true or false: {text}"
            value = text.lower() in ("true", "1")
        elif key == "sweep":
            try:
                value = json.loads(text)
            except json.JSONDecodeError as err:
                raise AssertionError(f"Value for key {key} is not valid JSON: {err}") from None

        self.pl_set(key, value)

    def pl_set_sweep(self, key: str, points: Any) -> None:
        assert key in POLICY_KEYS, f"Sweep key must be a policy parameter: {key}"
        assert isinstance(points, list) and len(points) > 0, f"Sweep for {key} needs a list of values: {points}"

        self.sweep[key] = [float(_check_number(key, p)) for p in points]

    def policy_params(self, **changes: float) -> PLPolicyParams:
        """
        Builds the policy parameters, optionally with some configuration keys
        changed (used by sweeps).
        """

        values = dict(self.policy)
        values.update(changes)

        return PLPolicyParams(**{POLICY_KEYS[key]: value for key, value in values.items()})

    def mc_spec(self) -> PLMcSpec:
        return PLMcSpec(self.n_paths, self.steps_per_year, self.seed, self.bridge_correction)

    def pl_validate(self) -> None:
        """
        Checks everything that involves several keys. Must be called before
        any computation starts.
        """

        self.policy_params()
        self.mc_spec()

        assert 0.0 <= self.flow_x <= self.flow_y, \
            f"Flow check levels must satisfy 0 <= flow_x <= flow_y: {self.flow_x}, {self.flow_y}"

        for key, points in self.sweep.items():
            for point in points:
                self.policy_params(**{key: point})

    def to_dict(self) -> dict[str, Any]:
        result: dict[str, Any] = {"command": self.command.value}
        result.update(self.policy)
        result.update({
            "n_steps": self.n_steps,
            "x_max": self.x_max,
            "n_paths": self.n_paths,
            "steps_per_year": self.steps_per_year,
            "seed": self.seed,
            "bridge_correction": self.bridge_correction,
            "output_dir": self.output_dir,
            "n_workers": self.n_workers,
            "flow_x": self.flow_x,
            "flow_y": self.flow_y,
            "sweep": self.sweep,
        })

        return result

    @staticmethod
    def from_dict(data: dict[str, Any], command: PLCommand = PLCommand.Price) -> "PLConfiguration":
        assert isinstance(data, dict), f"Configuration must be a JSON object: {data}"

        config = PLConfiguration(command)

        for key in data:
            assert key in ALL_KEYS, f"Unknown configuration key: {key}"

        for key, value in data.items():
            config.pl_set(key, value)

        return config

    @staticmethod
    def from_json(file_name: str, command: PLCommand = PLCommand.Price) -> "PLConfiguration":
        """
        Load the configuration (JSON format) from the given file name.

        :param file_name: File name of the configuration.
        :param command: The command to run.
        :return: A configuration with the values of the JSON file.
        """

        logger.debug(f"Load configuration from file: {file_name}.")

        with open(file_name, "r") as f:
            data = json.load(f)

        return PLConfiguration.from_dict(data, command)


def _parse_text(key: str, text: str, kind: type) -> Any:
    try:
        return kind(text)
    except ValueError:
        raise AssertionError(f"Value for key {key} is not a valid {kind.__name__}: {text}") from None


def parse_config(contents: str, overrides: Optional[list[tuple[str, str]]] = None,
        command: PLCommand = PLCommand.Price) -> PLConfiguration:
    """
    Builds a validated configuration from the text of a JSON file and the
    command line overrides, applied in order.

    :param contents: Text of the JSON file, may be empty.
    :param overrides: (key, text value) pairs from the command line.
    :param command: The command to run.
    :return: A fully validated configuration.
    :rtype: PLConfiguration
    """

    data: dict[str, Any] = {}
    if contents.strip() != "":
        try:
            data = json.loads(contents)
        except json.JSONDecodeError as err:
            raise AssertionError(f"Configuration is not valid JSON: {err}") from None

    config = PLConfiguration.from_dict(data, command)

    for key, text in overrides or []:
        logger.debug(f"Override {key} = {text}")
        config.pl_set_text(key, text)

    config.pl_validate()

    return config
