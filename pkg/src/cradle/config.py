"""Declarative experiment configuration.

Layered key-value text with sections, parsed by configparser:

    [system]
    cavities = 2
    omega = 1.0
    lambda = 0.0
    alpha = 2.0

    [environment]
    kind = ou
    gamma_big = 1.0
    tau = 10.0
    delta = 10.0

    [numerics]
    cutoff = 20
    dt = 0.01

    [sweep]
    parameter = tau
    values = 0.5, 1, 2, 5, 10

    [output]
    directory = out

Unknown sections or keys are fatal and come with a nearest-match suggestion;
command-line flags override file values.  tau and gamma are mutually
exclusive ways of writing the memory time (tau = 1/gamma).
"""

from __future__ import annotations

import configparser
import difflib
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

from .fock import SystemSpec, recommended_cutoff, weights_from_eta


class ConfigError(ValueError):
    pass


_KNOWN = {
    "system": {"cavities", "omega", "lambda", "weights", "eta", "alpha",
               "initial_cavity"},
    "environment": {"kind", "gamma_big", "gamma", "tau", "delta", "beta",
                    "kernel_csv"},
    "numerics": {"cutoff", "dt", "t_max", "trajectories", "seed", "solver",
                 "batch_size", "theta_grid", "convergence_check",
                 "coeff_solver"},
    "sweep": {"parameter", "values"},
    "output": {"directory", "probe_every", "probe_times", "wigner_times",
               "wigner_resolution", "wigner_window", "dump_rho_times"},
}

SWEEPABLE = {"tau", "gamma", "delta", "gamma_big", "eta", "lambda1", "alpha"}


@dataclass
class SystemBlock:
    cavities: int = 2
    omega: tuple = (1.0,)
    lam: tuple = (0.0,)
    weights: tuple | None = None
    eta: float | None = None
    alpha: float = 2.0
    initial_cavity: int = 1


@dataclass
class EnvironmentBlock:
    kind: str = "ou"              # ou | markov | tabulated
    gamma_big: float = 1.0
    gamma: float | None = None
    tau: float | None = None
    delta: float = 0.0
    beta: float | None = None
    kernel_csv: str | None = None


@dataclass
class NumericsBlock:
    cutoff: int | None = None
    dt: float = 0.01
    t_max: float | None = None
    trajectories: int = 2000
    seed: int = 0
    solver: str = "auto"          # auto | master | ensemble
    batch_size: int = 256
    theta_grid: int = 256
    convergence_check: bool = False
    coeff_solver: str = "auto"    # auto | fast | history


@dataclass
class SweepBlock:
    parameter: str
    values: tuple


@dataclass
class OutputBlock:
    directory: str = "out"
    probe_every: float | None = None
    probe_times: tuple | None = None
    wigner_times: tuple = ()
    wigner_resolution: int = 121
    wigner_window: float | None = None
    dump_rho_times: tuple = ()


@dataclass
class ExperimentConfig:
    system: SystemBlock = field(default_factory=SystemBlock)
    environment: EnvironmentBlock = field(default_factory=EnvironmentBlock)
    numerics: NumericsBlock = field(default_factory=NumericsBlock)
    sweep: SweepBlock | None = None
    output: OutputBlock = field(default_factory=OutputBlock)

    def to_dict(self) -> dict:
        doc = {
            "system": asdict(self.system),
            "environment": asdict(self.environment),
            "numerics": asdict(self.numerics),
            "output": asdict(self.output),
        }
        if self.sweep is not None:
            doc["sweep"] = asdict(self.sweep)
        return doc

    @staticmethod
    def from_dict(doc: dict) -> "ExperimentConfig":
        cfg = ExperimentConfig(
            system=SystemBlock(**doc["system"]),
            environment=EnvironmentBlock(**doc["environment"]),
            numerics=NumericsBlock(**doc["numerics"]),
            output=OutputBlock(**doc["output"]),
        )
        if "sweep" in doc:
            sweep = dict(doc["sweep"])
            sweep["values"] = tuple(sweep["values"])
            cfg.sweep = SweepBlock(**sweep)
        for name in ("omega", "lam", "weights"):
            val = getattr(cfg.system, name)
            if val is not None:
                setattr(cfg.system, name, tuple(val))
        for name in ("probe_times", "wigner_times", "dump_rho_times"):
            val = getattr(cfg.output, name)
            if val is not None:
                setattr(cfg.output, name, tuple(val))
        _normalise(cfg)
        return cfg

    def system_spec(self) -> SystemSpec:
        n = self.system.cavities
        return SystemSpec(self.system.omega, self.system.lam,
                          self.system.weights)


def _suggest(key: str, candidates) -> str:
    close = difflib.get_close_matches(key, sorted(candidates), n=1)
    return f" (did you mean '{close[0]}'?)" if close else ""


def _floats(text: str) -> tuple:
    items = [x for x in text.replace(",", " ").split() if x]
    try:
        return tuple(float(x) for x in items)
    except ValueError as exc:
        raise ConfigError(f"cannot parse number list '{text}': {exc}") from None


def _parse_values(text: str) -> tuple:
    """Comma/space list or 'start:stop:step' inclusive range."""
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ConfigError(f"range must be start:stop:step, got '{text}'")
        a, b, h = (float(p) for p in parts)
        if h <= 0:
            raise ConfigError(f"range step must be positive in '{text}'")
        count = int(math.floor((b - a) / h + 1e-9)) + 1
        return tuple(a + k * h for k in range(count))
    return _floats(text)


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"cannot parse boolean '{text}'")


def parse_config_text(text: str, source: str = "<config>") -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None

    for section in parser.sections():
        if section not in _KNOWN:
            raise ConfigError(
                f"unknown section [{section}]{_suggest(section, _KNOWN)}"
            )
        for key in parser[section]:
            if key not in _KNOWN[section]:
                raise ConfigError(
                    f"unknown key '{key}' in [{section}]"
                    f"{_suggest(key, _KNOWN[section])}"
                )

    cfg = ExperimentConfig()
    sec = parser["system"] if parser.has_section("system") else {}
    if "cavities" in sec:
        cfg.system.cavities = int(sec["cavities"])
    if "omega" in sec:
        cfg.system.omega = _floats(sec["omega"])
    if "lambda" in sec:
        cfg.system.lam = _floats(sec["lambda"])
    if "weights" in sec:
        cfg.system.weights = _floats(sec["weights"])
    if "eta" in sec:
        cfg.system.eta = float(sec["eta"])
    if "alpha" in sec:
        cfg.system.alpha = float(sec["alpha"])
    if "initial_cavity" in sec:
        cfg.system.initial_cavity = int(sec["initial_cavity"])

    sec = parser["environment"] if parser.has_section("environment") else {}
    for key in ("kind", "kernel_csv"):
        if key in sec:
            setattr(cfg.environment, key, sec[key].strip())
    for key in ("gamma_big", "gamma", "tau", "delta", "beta"):
        if key in sec:
            setattr(cfg.environment, key, float(sec[key]))

    sec = parser["numerics"] if parser.has_section("numerics") else {}
    for key, conv in (("cutoff", int), ("trajectories", int), ("seed", int),
                      ("batch_size", int), ("theta_grid", int)):
        if key in sec:
            setattr(cfg.numerics, key, conv(sec[key]))
    for key in ("dt", "t_max"):
        if key in sec:
            setattr(cfg.numerics, key, float(sec[key]))
    for key in ("solver", "coeff_solver"):
        if key in sec:
            setattr(cfg.numerics, key, sec[key].strip())
    if "convergence_check" in sec:
        cfg.numerics.convergence_check = _bool(sec["convergence_check"])

    if parser.has_section("sweep"):
        sec = parser["sweep"]
        if "parameter" not in sec or "values" not in sec:
            raise ConfigError("[sweep] needs both 'parameter' and 'values'")
        cfg.sweep = SweepBlock(parameter=sec["parameter"].strip(),
                               values=_parse_values(sec["values"]))

    sec = parser["output"] if parser.has_section("output") else {}
    if "directory" in sec:
        cfg.output.directory = sec["directory"].strip()
    if "probe_every" in sec:
        cfg.output.probe_every = float(sec["probe_every"])
    for key in ("probe_times", "wigner_times", "dump_rho_times"):
        if key in sec:
            setattr(cfg.output, key, _floats(sec[key]))
    if "wigner_resolution" in sec:
        cfg.output.wigner_resolution = int(sec["wigner_resolution"])
    if "wigner_window" in sec:
        cfg.output.wigner_window = float(sec["wigner_window"])

    _normalise(cfg)
    return cfg


def parse_config_file(path) -> ExperimentConfig:
    text = Path(path).read_text(encoding="utf-8")
    return parse_config_text(text, source=str(path))


def _normalise(cfg: ExperimentConfig) -> None:
    """Expand scalars, resolve tau/gamma and eta/weights, validate."""
    n = cfg.system.cavities
    if n < 1:
        raise ConfigError(f"cavities must be positive, got {n}")

    if len(cfg.system.omega) == 1:
        cfg.system.omega = cfg.system.omega * n
    if len(cfg.system.omega) != n:
        raise ConfigError(
            f"omega needs 1 or {n} entries, got {len(cfg.system.omega)}"
        )

    lam = cfg.system.lam
    if len(lam) == 1:
        lam = lam * (n - 1) if n > 1 else ()
    if len(lam) == n - 1:
        lam = tuple(lam) + (0.0,)
    if len(lam) != n:
        raise ConfigError(
            f"lambda needs 1, {max(n - 1, 1)} or {n} entries, got {len(cfg.system.lam)}"
        )
    if lam[-1] != 0.0:
        raise ConfigError("last coupling must be 0 (open boundary)")
    cfg.system.lam = tuple(lam)

    if cfg.system.eta is not None and cfg.system.weights is not None:
        raise ConfigError("give either weights or eta, not both")
    if cfg.system.eta is not None:
        if n != 3:
            raise ConfigError("eta shorthand requires three cavities")
        cfg.system.weights = weights_from_eta(cfg.system.eta)
    if cfg.system.weights is None:
        cfg.system.weights = (1.0,) * n
    if len(cfg.system.weights) != n:
        raise ConfigError(
            f"weights needs {n} entries, got {len(cfg.system.weights)}"
        )
    if not 1 <= cfg.system.initial_cavity <= n:
        raise ConfigError(
            f"initial_cavity {cfg.system.initial_cavity} outside 1..{n}"
        )

    env = cfg.environment
    if env.kind not in ("ou", "markov", "tabulated"):
        raise ConfigError(
            f"unknown environment kind '{env.kind}'"
            f"{_suggest(env.kind, ('ou', 'markov', 'tabulated'))}"
        )
    if env.tau is not None and env.gamma is not None:
        raise ConfigError("tau and gamma are mutually exclusive (tau = 1/gamma)")
    if env.tau is not None:
        if env.tau <= 0:
            raise ConfigError(f"tau must be positive, got {env.tau}")
        env.gamma = 1.0 / env.tau
        env.tau = None
    if env.kind == "ou" and env.gamma is None:
        raise ConfigError("ou environment needs gamma or tau")
    if env.kind == "tabulated" and not env.kernel_csv:
        raise ConfigError("tabulated environment needs kernel_csv")

    num = cfg.numerics
    if num.solver not in ("auto", "master", "ensemble"):
        raise ConfigError(
            f"unknown solver '{num.solver}'"
            f"{_suggest(num.solver, ('auto', 'master', 'ensemble'))}"
        )
    if num.coeff_solver not in ("auto", "fast", "history"):
        raise ConfigError(f"unknown coeff_solver '{num.coeff_solver}'")
    if num.cutoff is None:
        num.cutoff = max(recommended_cutoff(cfg.system.alpha), 8)
    if num.dt <= 0:
        raise ConfigError(f"dt must be positive, got {num.dt}")

    if cfg.sweep is not None:
        if cfg.sweep.parameter not in SWEEPABLE:
            raise ConfigError(
                f"cannot sweep '{cfg.sweep.parameter}'"
                f"{_suggest(cfg.sweep.parameter, SWEEPABLE)}; "
                f"one of {sorted(SWEEPABLE)}"
            )
        if len(cfg.sweep.values) < 1:
            raise ConfigError("sweep needs at least one value")
