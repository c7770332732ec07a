"""Run configuration: flat INI sections with typed, validated keys.

Every key has a default; files only need to override what differs. The
only environment override is ``RPOM_SEED``.
"""
import configparser
import os
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .errors import ConfigError
from .fom import SCENARIOS, SolverParams, make_scenario
from .neural import TrainConfig
from .rom import APPROXIMATORS

PRESETS = ("ex1_heated_side", "ex2_elder", "ex3_modified_elder")

# section -> key -> (type, default)
SCHEMA = {
    "run": {"seed": (int, 0), "workers": (int, 1)},
    "scenario": {"name": (str, "heated_side"), "nx": (int, 32), "ny": (int, 32)},
    "solver": {
        "cfl": (float, 0.5), "dt0": (float, 1e-4), "dt_max": (float, 5e-4), "bdf_order": (int, 4),
        "t_end": (float, 0.02), "poisson_tol": (float, 1e-10), "temperature_tol": (float, 1e-12),
    },
    "dataset": {
        "m_train": (int, 6), "m_validation": (int, 2), "m_test": (int, 2),
        "mu_ranges": (str, "40:80"), "mu_log": (str, "false"),
    },
    "model": {
        "path": (str, "linear"), "n_int": (int, 8), "n": (int, 0), "approximator": (str, "mlp"),
        "rbf_lambda": (float, 0.0), "mlp_hidden": (int, 5), "mlp_width": (int, 7),
    },
    "autoencoder": {
        "kind": (str, "conv_ae"), "side": (int, 32), "hidden": (int, 4), "latent": (int, 4),
        "dropout": (float, 0.5), "mlp_width": (int, 64), "mlp_layers": (int, 7),
    },
    "train": {
        "epochs": (int, 500), "batch_size": (int, 32), "lr": (float, 1e-3),
        "schedule": (str, "constant"), "eta_min": (float, 1e-6),
    },
    "train_ae": {
        "epochs": (int, 30), "batch_size": (int, 32), "lr": (float, 1e-3),
        "schedule": (str, "cosine"), "eta_min": (float, 1e-6),
    },
    "diagnostics": {"perplexity": (float, 0.0), "iterations": (int, 1000), "split": (str, "test")},
    "paths": {"data_dir": (str, "data"), "model_dir": (str, "models"), "report_dir": (str, "reports")},
}

_BOOL = {"true": True, "yes": True, "1": True, "on": True, "false": False, "no": False, "0": False, "off": False}


def _parse_bool(text):
    try:
        return _BOOL[text.strip().lower()]
    except KeyError:
        raise ConfigError(f"not a boolean: {text!r}") from None


@dataclass
class RunConfig:
    values: dict
    base_dir: str = "."
    source: str = "<defaults>"
    log_flags: np.ndarray = field(init=False)
    ranges: np.ndarray = field(init=False)

    def __post_init__(self):
        self.ranges, self.log_flags = self._parse_mu()
        self.validate()

    def __getitem__(self, key):
        section, name = key.split(".")
        return self.values[section][name]

    def _parse_mu(self):
        parts = [p.strip() for p in self["dataset.mu_ranges"].split(",") if p.strip()]
        try:
            ranges = np.array([[float(x) for x in p.split(":")] for p in parts])
        except ValueError:
            raise ConfigError(f"bad mu_ranges {self['dataset.mu_ranges']!r}; use lo:hi[,lo:hi]") from None
        if ranges.ndim != 2 or ranges.shape[1] != 2:
            raise ConfigError("each mu range needs exactly lo:hi")
        flags = [_parse_bool(x) for x in self["dataset.mu_log"].split(",")]
        if len(flags) == 1:
            flags = flags * len(ranges)
        if len(flags) != len(ranges):
            raise ConfigError("mu_log needs one flag or one per range")
        return ranges, np.array(flags, dtype=bool)

    def validate(self):
        v = self.values
        if v["scenario"]["name"] not in SCENARIOS:
            raise ConfigError(f"scenario.name must be one of {SCENARIOS}")
        if np.any(self.ranges[:, 1] < self.ranges[:, 0]):
            raise ConfigError("mu range has hi < lo")
        if np.any(self.log_flags & (self.ranges[:, 0] <= 0)):
            raise ConfigError("log-flagged mu ranges must be positive")
        if len(self.ranges) != self.scenario().n_params:
            raise ConfigError(f"scenario {v['scenario']['name']} takes {self.scenario().n_params} parameters, "
                              f"mu_ranges gives {len(self.ranges)}")
        if v["model"]["path"] not in ("linear", "nonlinear"):
            raise ConfigError("model.path must be linear or nonlinear")
        if v["model"]["approximator"] not in APPROXIMATORS:
            raise ConfigError(f"model.approximator must be one of {APPROXIMATORS}")
        if v["model"]["path"] == "linear" and v["model"]["approximator"] != "mlp":
            raise ConfigError("the linear path regresses coefficients with the mlp approximator only")
        if v["autoencoder"]["kind"] not in ("conv_ae", "mlp_ae"):
            raise ConfigError("autoencoder.kind must be conv_ae or mlp_ae")
        if min(v["dataset"]["m_train"], v["dataset"]["m_validation"]) < 1 or v["dataset"]["m_test"] < 0:
            raise ConfigError("need m_train >= 1, m_validation >= 1, m_test >= 0")
        for sec in ("train", "train_ae"):
            try:
                self.train_config(sec)
            except ValueError as err:
                raise ConfigError(f"[{sec}] {err}") from None
        try:
            self.solver_params()
        except Exception as err:
            raise ConfigError(f"[solver] {err}") from None

    # -- typed views ---------------------------------------------------------

    @property
    def seed(self):
        return self["run.seed"]

    def scenario(self):
        s = self.values["scenario"]
        return make_scenario(s["name"], s["nx"], s["ny"])

    def solver_params(self):
        return SolverParams(**self.values["solver"])

    def train_config(self, section="train"):
        return TrainConfig(seed=self.seed, **self.values[section])

    def ae_config(self):
        a = self.values["autoencoder"]
        if a["kind"] == "conv_ae":
            return {"kind": "conv_ae", "side": a["side"], "hidden": a["hidden"], "latent": a["latent"],
                    "dropout": a["dropout"], "seed": self.seed}
        return {"kind": "mlp_ae", "side": a["side"], "latent": a["latent"], "layers": a["mlp_layers"],
                "width": a["mlp_width"], "seed": self.seed}

    def path(self, key):
        p = self.values["paths"][key]
        return p if os.path.isabs(p) else os.path.join(self.base_dir, p)

    def counts(self):
        d = self.values["dataset"]
        return d["m_train"], d["m_validation"], d["m_test"]


def _coerce(section, key, text):
    typ, _ = SCHEMA[section][key]
    try:
        return typ(text.strip()) if typ is not str else text.strip()
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot read {text!r} as {typ.__name__}") from None


def parse_config(text, base_dir=".", source="<string>", overrides=()):
    """Parse INI text into a validated :class:`RunConfig`.

    ``overrides`` are ``"section.key=value"`` strings applied after the file.
    ``RPOM_SEED`` in the environment replaces ``run.seed``.
    """
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as err:
        raise ConfigError(f"{source}: {err}") from None
    values = {sec: {k: d for k, (_, d) in keys.items()} for sec, keys in SCHEMA.items()}
    for sec in parser.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"{source}: unknown section [{sec}]")
        for key, raw in parser.items(sec):
            if key not in SCHEMA[sec]:
                raise ConfigError(f"{source}: unknown key {sec}.{key}")
            values[sec][key] = _coerce(sec, key, raw)
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        lhs, raw = item.split("=", 1)
        sec, key = lhs.strip().split(".", 1)
        if sec not in SCHEMA or key not in SCHEMA[sec]:
            raise ConfigError(f"unknown override key {lhs!r}")
        values[sec][key] = _coerce(sec, key, raw)
    env_seed = os.environ.get("RPOM_SEED")
    if env_seed is not None:
        values["run"]["seed"] = _coerce("run", "seed", env_seed)
    return RunConfig(values, base_dir, source)


def preset_text(name):
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {PRESETS}")
    return resources.files("rpom").joinpath("presets", f"{name}.ini").read_text()


def load_config(path=None, preset=None, base_dir=None, overrides=()):
    if (path is None) == (preset is None):
        raise ConfigError("give exactly one of a config file or a preset name")
    if preset is not None:
        return parse_config(preset_text(preset), base_dir or ".", f"preset:{preset}", overrides)
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from None
    return parse_config(text, base_dir or os.path.dirname(os.path.abspath(path)), path, overrides)
