"""
Experiment configuration: YAML files with explicit units (Hz, dB) parsed
into frozen dataclasses. Units are converted once here; everything
downstream works with linear SNR and the channel-module types.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, replace
from typing import Any, Dict, Mapping, Optional, Tuple

import yaml

from models.channel import ArrayGeometry, ArrayKind, ChannelError, build_dictionary, Dictionary
from models.txrx import SymbolDistribution
from services.thresholding import SolverConfig, SolverError
from tools.utils import stable_hash


ESTIMATORS = (
    "sparse_blind",
    "subspace",
    "onebit_sparse_blind",
    "onebit_subspace",
    "pilot_ls",
    "semiblind",
)
ONEBIT_ESTIMATORS = frozenset({"onebit_sparse_blind", "onebit_subspace"})
PILOT_ESTIMATORS = frozenset({"pilot_ls", "semiblind"})

# ℓ1 weights per estimator when the file does not set one
DEFAULT_LAMBDA = {
    "sparse_blind": 4.0,
    "subspace": 0.0,
    "onebit_sparse_blind": 8.0,
    "onebit_subspace": 0.0,
    "pilot_ls": 1.0,
    "semiblind": 0.0,
}

LAG_WINDOWS = ("rectangular", "triangular")


class ConfigError(Exception):
    """Raised on missing keys or invalid values in an experiment file."""
    pass


def _require(section: Mapping[str, Any], key: str, path: str) -> Any:
    if not isinstance(section, Mapping) or key not in section:
        raise ConfigError(f"missing required key '{path}.{key}'" if path else f"missing required key '{key}'")
    return section[key]


_TRUE_WORDS = {"true", "yes", "on", "1"}
_FALSE_WORDS = {"false", "no", "off", "0"}


def _as_bool(value: Any, path: str) -> bool:
    if isinstance(value, bool):
        return bool(value)
    if isinstance(value, int) and value in (0, 1):
        return bool(value)
    if isinstance(value, str):
        word = value.strip().lower()
        if word in _TRUE_WORDS:
            return True
        if word in _FALSE_WORDS:
            return False
    raise ConfigError(f"invalid boolean for '{path}': {value!r}")


def _as(kind, value: Any, path: str) -> Any:
    if kind is bool:
        return _as_bool(value, path)
    try:
        return kind(value)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid value for '{path}': {value!r}") from e


@dataclass(frozen=True)
class ScenarioConfig:
    """
    Attributes:
        N (int): Antennas (n1·n2 for a UPA).
        K (int): Users.
        L (int): Paths per user.
        T (int): Block length.
        T_D (int): Maximum delay spread in symbols.
        B_hz (float): Bandwidth.
        fc_hz (float): Carrier frequency.
        rho_db (Tuple[float, ...]): SNR points in dB.
        geometry (str): 'ula' or 'upa'.
        n2 (int): Second UPA dimension (1 for a ULA).
        spacing_d (float): Element spacing in wavelengths.
        on_grid (bool): Draw channels on the dictionary grid.
        frequency_dependent (bool, optional): Force the dictionary type.
    """
    N: int
    K: int
    L: int
    T: int
    T_D: int
    B_hz: float
    fc_hz: float
    rho_db: Tuple[float, ...]
    geometry: str = "ula"
    n2: int = 1
    spacing_d: float = 0.5
    on_grid: bool = False
    frequency_dependent: Optional[bool] = None

    @property
    def rho_linear(self) -> Tuple[float, ...]:
        return tuple(10.0 ** (r / 10.0) for r in self.rho_db)

    def array_geometry(self) -> ArrayGeometry:
        return ArrayGeometry(kind=ArrayKind(self.geometry), n1=self.N // self.n2, n2=self.n2,
                             spacing_d=self.spacing_d, carrier_fc=self.fc_hz, bandwidth_B=self.B_hz)

    def build_dictionary(self) -> Dictionary:
        return build_dictionary(self.array_geometry(), self.T, self.T_D, self.frequency_dependent)


@dataclass(frozen=True)
class PilotConfig:
    T_T: int = 10
    type: str = "dft"


@dataclass(frozen=True)
class MonteCarloConfig:
    n_realizations: int = 50
    master_seed: int = 0
    threads: int = 1


@dataclass(frozen=True)
class OutputConfig:
    path: str = "results"
    eta_grid_points: int = 101
    eta_crb: bool = True


@dataclass(frozen=True)
class SymbolConfig:
    distribution: str = "gaussian"


@dataclass(frozen=True)
class OneBitConfig:
    window: str = "rectangular"


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: ScenarioConfig
    estimators: Tuple[str, ...]
    solver: Dict[str, SolverConfig]
    pilots: PilotConfig = field(default_factory=PilotConfig)
    monte_carlo: MonteCarloConfig = field(default_factory=MonteCarloConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    symbols: SymbolConfig = field(default_factory=SymbolConfig)
    onebit: OneBitConfig = field(default_factory=OneBitConfig)

    @property
    def uses_onebit(self) -> bool:
        return any(name in ONEBIT_ESTIMATORS for name in self.estimators)

    @property
    def uses_pilots(self) -> bool:
        return any(name in PILOT_ESTIMATORS for name in self.estimators)

    @classmethod
    def load(cls, path: str) -> "ExperimentConfig":
        """
        Parse a YAML experiment file.

        Raises:
            ConfigError: If the file is missing, unreadable or invalid.
        """
        if not os.path.exists(path):
            raise ConfigError(f"config file not found at path: {path}")
        try:
            with open(path, "r", encoding="utf-8") as f:
                payload = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigError(f"invalid YAML in {path}: {e}") from e
        return cls.from_dict(payload or {})

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> "ExperimentConfig":
        """
        Build and validate a config from a parsed mapping.

        Raises:
            ConfigError: Naming the first missing key or invalid value.
        """
        if not isinstance(payload, Mapping):
            raise ConfigError("config root must be a mapping")
        scenario = _parse_scenario(_require(payload, "scenario", ""))
        estimators = _parse_estimators(_require(payload, "estimators", ""))
        monte_carlo = _parse_section(MonteCarloConfig, _require(payload, "monte_carlo", ""), "monte_carlo",
                                     required=("n_realizations",))
        config = cls(
            scenario=scenario,
            estimators=estimators,
            solver=_parse_solver(payload.get("solver") or {}),
            pilots=_parse_section(PilotConfig, payload.get("pilots") or {}, "pilots"),
            monte_carlo=monte_carlo,
            output=_parse_section(OutputConfig, payload.get("output") or {}, "output"),
            symbols=_parse_section(SymbolConfig, payload.get("symbols") or {}, "symbols"),
            onebit=_parse_section(OneBitConfig, payload.get("onebit") or {}, "onebit"),
        )
        config.validate()
        return config

    def to_dict(self) -> Dict[str, Any]:
        """Plain mapping that from_dict turns back into an equal config."""
        scenario = {f.name: getattr(self.scenario, f.name) for f in fields(ScenarioConfig)}
        scenario["rho_db"] = list(self.scenario.rho_db)
        return {
            "scenario": scenario,
            "estimators": list(self.estimators),
            "solver": {name: {f.name: getattr(cfg, f.name) for f in fields(SolverConfig)}
                       for name, cfg in sorted(self.solver.items())},
            "pilots": _section_dict(self.pilots),
            "monte_carlo": _section_dict(self.monte_carlo),
            "output": _section_dict(self.output),
            "symbols": _section_dict(self.symbols),
            "onebit": _section_dict(self.onebit),
        }

    def config_hash(self) -> str:
        return stable_hash(self.to_dict())

    def with_overrides(self, seed: Optional[int] = None, threads: Optional[int] = None,
                       out: Optional[str] = None) -> "ExperimentConfig":
        """Copy with command-line overrides applied (None keeps the file value)."""
        monte_carlo = self.monte_carlo
        if seed is not None:
            monte_carlo = replace(monte_carlo, master_seed=int(seed))
        if threads is not None:
            monte_carlo = replace(monte_carlo, threads=int(threads))
        output = self.output if out is None else replace(self.output, path=out)
        config = replace(self, monte_carlo=monte_carlo, output=output)
        config.validate()
        return config

    def solver_for(self, estimator: str) -> SolverConfig:
        return self.solver.get(estimator) or SolverConfig(lam=DEFAULT_LAMBDA.get(estimator, 0.0))

    def validate(self) -> None:
        """
        Raises:
            ConfigError: On a violated cross-field constraint.
        """
        s = self.scenario
        if min(s.N, s.K, s.L, s.T) < 1:
            raise ConfigError("scenario.N, scenario.K, scenario.L and scenario.T must be >= 1")
        if s.T_D < 0 or s.T <= 2 * s.T_D:
            raise ConfigError(f"scenario.T={s.T} must exceed 2*scenario.T_D={2 * s.T_D}")
        if not s.rho_db:
            raise ConfigError("scenario.rho_db must list at least one SNR")
        if s.geometry not in (ArrayKind.ULA.value, ArrayKind.UPA.value):
            raise ConfigError(f"scenario.geometry must be 'ula' or 'upa', got {s.geometry!r}")
        if s.n2 < 1 or s.N % s.n2 != 0:
            raise ConfigError(f"scenario.n2={s.n2} must divide scenario.N={s.N}")
        try:
            geometry = s.array_geometry()
        except ChannelError as e:
            raise ConfigError(f"invalid array geometry: {e}") from e
        if self.monte_carlo.n_realizations < 1:
            raise ConfigError("monte_carlo.n_realizations must be >= 1")
        if self.monte_carlo.threads < 1:
            raise ConfigError("monte_carlo.threads must be >= 1")
        if self.output.eta_grid_points < 2:
            raise ConfigError("output.eta_grid_points must be >= 2")
        if self.symbols.distribution not in tuple(d.value for d in SymbolDistribution):
            raise ConfigError(f"symbols.distribution must be 'gaussian' or 'qpsk', got {self.symbols.distribution!r}")
        if self.onebit.window not in LAG_WINDOWS:
            raise ConfigError(f"onebit.window must be one of {LAG_WINDOWS}, got {self.onebit.window!r}")
        if self.uses_pilots:
            if not 0 < self.pilots.T_T < s.T:
                raise ConfigError(f"pilots.T_T={self.pilots.T_T} must lie in [1, scenario.T)")
            if self.pilots.T_T < s.K:
                raise ConfigError(f"pilots.T_T={self.pilots.T_T} must be at least scenario.K={s.K}")
            flat = s.T_D == 0 and not (s.frequency_dependent
                                       if s.frequency_dependent is not None
                                       else not geometry.is_frequency_flat())
            if not flat:
                raise ConfigError("pilot estimators need a frequency-flat scenario (T_D = 0, no beam squint)")


def _section_dict(section: Any) -> Dict[str, Any]:
    return {f.name: getattr(section, f.name) for f in fields(section)}


def _parse_section(cls, section: Mapping[str, Any], path: str, required: Tuple[str, ...] = ()):
    if not isinstance(section, Mapping):
        raise ConfigError(f"'{path}' must be a mapping")
    for key in required:
        _require(section, key, path)
    known = {f.name: f for f in fields(cls)}
    unknown = set(section) - set(known)
    if unknown:
        raise ConfigError(f"unknown key(s) in '{path}': {sorted(unknown)}")
    defaults = cls()
    values = {name: _as(type(getattr(defaults, name)), value, f"{path}.{name}")
              for name, value in section.items()}
    return cls(**values)


def _parse_scenario(section: Mapping[str, Any]) -> ScenarioConfig:
    path = "scenario"
    if not isinstance(section, Mapping):
        raise ConfigError("'scenario' must be a mapping")
    ints = ("N", "K", "L", "T", "T_D")
    floats = ("B_hz", "fc_hz")
    values: Dict[str, Any] = {}
    for key in ints:
        values[key] = _as(int, _require(section, key, path), f"{path}.{key}")
    for key in floats:
        values[key] = _as(float, _require(section, key, path), f"{path}.{key}")
    rho = _require(section, "rho_db", path)
    rho_list = rho if isinstance(rho, (list, tuple)) else [rho]
    values["rho_db"] = tuple(_as(float, r, f"{path}.rho_db") for r in rho_list)

    optional = {"geometry": str, "n2": int, "spacing_d": float, "on_grid": bool}
    for key, kind in optional.items():
        if key in section:
            values[key] = _as(kind, section[key], f"{path}.{key}")
    if "geometry" in values:
        values["geometry"] = values["geometry"].lower()
    if section.get("frequency_dependent") is not None:
        values["frequency_dependent"] = _as(bool, section["frequency_dependent"], f"{path}.frequency_dependent")

    unknown = set(section) - set(ints) - set(floats) - set(optional) - {"rho_db", "frequency_dependent"}
    if unknown:
        raise ConfigError(f"unknown key(s) in 'scenario': {sorted(unknown)}")
    return ScenarioConfig(**values)


def _parse_estimators(section: Any) -> Tuple[str, ...]:
    names = [section] if isinstance(section, str) else list(section or [])
    if not names:
        raise ConfigError("'estimators' must list at least one estimator")
    for name in names:
        if name not in ESTIMATORS:
            raise ConfigError(f"unknown estimator '{name}', expected one of {ESTIMATORS}")
    return tuple(dict.fromkeys(names))


def _parse_solver(section: Mapping[str, Any]) -> Dict[str, SolverConfig]:
    """
    'solver.default' holds shared loop settings; 'solver.<estimator>'
    overrides them, lam included.
    """
    if not isinstance(section, Mapping):
        raise ConfigError("'solver' must be a mapping")
    allowed = {f.name for f in fields(SolverConfig)}
    default = dict(section.get("default") or {})
    result: Dict[str, SolverConfig] = {}
    for name in ESTIMATORS:
        merged = {"lam": DEFAULT_LAMBDA[name], **default, **dict(section.get(name) or {})}
        unknown = set(merged) - allowed
        if unknown:
            raise ConfigError(f"unknown key(s) in 'solver.{name}': {sorted(unknown)}")
        try:
            result[name] = SolverConfig(
                lam=_as(float, merged["lam"], f"solver.{name}.lam"),
                mu0=_as(float, merged.get("mu0", 1.0), f"solver.{name}.mu0"),
                beta=_as(float, merged.get("beta", 0.5), f"solver.{name}.beta"),
                max_iters=_as(int, merged.get("max_iters", 500), f"solver.{name}.max_iters"),
                tol_rel_obj=_as(float, merged.get("tol_rel_obj", 1e-6), f"solver.{name}.tol_rel_obj"),
                min_step=_as(float, merged.get("min_step", 1e-12), f"solver.{name}.min_step"),
            )
        except SolverError as e:
            raise ConfigError(f"invalid solver settings for '{name}': {e}") from e
    unknown = set(section) - set(ESTIMATORS) - {"default"}
    if unknown:
        raise ConfigError(f"unknown key(s) in 'solver': {sorted(unknown)}")
    return result
