"""
Configuration management for dephydro
Process settings from the environment plus declarative experiment configs
"""

import re
from pathlib import Path
from typing import Any, Dict, Iterable, List, Literal, Optional, Tuple, get_args, get_origin

from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from .errors import ConfigError


class Settings(BaseSettings):
    """Process settings from environment variables (prefix DEPHYDRO_)"""

    # ============================================
    # Run
    # ============================================
    seed: Optional[int] = None
    jobs: int = 1
    output_dir: str = "results"

    # ============================================
    # Logging
    # ============================================
    log_level: str = "INFO"
    log_file: Optional[str] = "logs/dephydro.log"

    # ============================================
    # Clock field
    # ============================================
    tile_sites: int = 64
    tile_time: float = 16.0
    gillespie_chunk: int = 1 << 16

    model_config = SettingsConfigDict(
        env_prefix="DEPHYDRO_",
        env_file=".env",
        case_sensitive=False,
        extra="ignore",
    )


# Global settings instance
settings = Settings()


# ============================================
# Experiment config sections
# ============================================

ExperimentKind = Literal[
    "stationarity",
    "coupling",
    "riemann",
    "godunov",
    "hydro-riemann",
    "hydro-cauchy",
    "strong-hydro",
    "finite-prop",
    "halfline",
    "fluctuations",
    "flux-check",
]


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class ExperimentSection(_Section):
    kind: ExperimentKind = "hydro-riemann"
    seed: int = 20240601
    replicas: int = Field(1, ge=1)
    jobs: int = Field(1, ge=1)


class WindowSection(_Section):
    half_width: float = Field(3.0, gt=0)
    speed: float = Field(5.0, gt=0)
    block_size: Optional[int] = Field(None, ge=1)
    max_sites: int = Field(50_000_000, ge=5)
    audit: bool = False


class ScalesSection(_Section):
    n: List[int] = [200, 800, 3200]

    @field_validator("n")
    @classmethod
    def _positive(cls, v: List[int]) -> List[int]:
        if not v or any(x < 1 for x in v):
            raise ValueError("scales must be a non-empty list of positive integers")
        return v


class TimeSection(_Section):
    horizon: float = Field(1.0, ge=0)
    snapshots: int = Field(10, ge=1)


class ProfileSection(_Section):
    kind: Literal["constant", "step", "table"] = "step"
    value: float = Field(0.5, ge=0, le=1)
    lam: float = Field(0.5, alias="lambda", ge=0, le=1)
    rho: float = Field(0.0, ge=0, le=1)
    breakpoints: List[float] = []
    values: List[float] = []


class DynamicsSection(_Section):
    mode: Optional[Literal["keyed-field", "gillespie"]] = None


class ObservablesSection(_Section):
    test_functions: List[str] = ["hat", "gaussian", "indicator"]
    pair_frequency: bool = True


class AcceptanceSection(_Section):
    l1_threshold: float = 0.05
    cauchy_l1_threshold: float = 0.07
    jump_tolerance: float = 0.05
    window_audit_tolerance: float = 1e-3
    z_sigma: float = 3.0
    confidence: float = 0.99
    paired_fraction: float = 0.8
    strong_fraction: float = 0.8


class StationaritySection(_Section):
    n_min: int = Field(3, ge=3)
    n_max: int = Field(12, le=14)
    ring: int = Field(512, ge=5)
    rho: float = Field(0.3, ge=0, le=1)
    horizon: float = Field(100.0, ge=0)
    replicas: int = Field(100, ge=2)
    current_ring: int = Field(1024, ge=5)
    current_rhos: List[float] = [0.25, 0.5, 0.75]
    current_horizon: float = Field(2000.0, gt=0)
    current_replicas: int = Field(50, ge=2)
    law_replicas: int = Field(200, ge=2)


class CouplingSection(_Section):
    ring: int = Field(256, ge=5)
    rho: float = Field(0.5, ge=0, le=1)
    trials: int = Field(1000, ge=1)
    horizon: float = Field(20.0, gt=0)
    monotone_trials: int = Field(1000, ge=1)
    monotone_horizon: float = Field(1000.0, gt=0)
    copies: int = Field(4, ge=2)
    copy_trials: int = Field(100, ge=1)
    gs_patterns: int = Field(100_000, ge=1)
    annihilation_trials: int = Field(10_000, ge=1)
    stationary_replicas: int = Field(20, ge=1)
    stationary_horizon: float = Field(200.0, gt=0)


class FinitePropSection(_Section):
    agree_length: int = Field(200, ge=1)
    pad: int = Field(100, ge=3)
    horizon: float = Field(20.0, gt=0)
    speed: float = Field(5.0, gt=0)
    trials: int = Field(1000, ge=1)
    threshold: float = 0.99


class HalflineSection(_Section):
    length: Optional[int] = Field(None, ge=5)
    ells: List[int] = [64, 256, 1024]
    rho0: float = Field(0.5, ge=0, le=1)
    t_burn: float = Field(1000.0, ge=0)
    t_sample: float = Field(1000.0, ge=0)
    samples: int = Field(100, ge=1)
    batches: int = Field(10, ge=2)
    wall_block: int = Field(64, ge=1)


class FluctuationsSection(_Section):
    eps: List[float] = [0.01, 0.005]
    times: List[float] = [0.0, 0.5, 1.0]
    functions: List[str] = ["hat", "gaussian"]
    replicas: int = Field(200, ge=2)
    ring_factor: float = Field(4.0, ge=1.0)


class RiemannSection(_Section):
    grid: int = Field(2001, ge=2)
    half_width: float = Field(3.0, gt=0)
    sweep_states: int = Field(21, ge=2)
    sweep_speeds: int = Field(201, ge=2)


class GodunovSection(_Section):
    dx: float = Field(1e-3, gt=0)
    cfl: float = Field(0.4, gt=0, le=0.5)
    half_width: Optional[float] = Field(None, gt=0)


class OutputSection(_Section):
    dir: Optional[str] = None


class ExperimentConfig(_Section):
    """Declarative experiment inputs"""

    experiment: ExperimentSection = Field(default_factory=ExperimentSection)
    window: WindowSection = Field(default_factory=WindowSection)
    scales: ScalesSection = Field(default_factory=ScalesSection)
    time: TimeSection = Field(default_factory=TimeSection)
    profile: ProfileSection = Field(default_factory=ProfileSection)
    dynamics: DynamicsSection = Field(default_factory=DynamicsSection)
    observables: ObservablesSection = Field(default_factory=ObservablesSection)
    acceptance: AcceptanceSection = Field(default_factory=AcceptanceSection)
    stationarity: StationaritySection = Field(default_factory=StationaritySection)
    coupling: CouplingSection = Field(default_factory=CouplingSection)
    finite_prop: FinitePropSection = Field(default_factory=FinitePropSection)
    halfline: HalflineSection = Field(default_factory=HalflineSection)
    fluctuations: FluctuationsSection = Field(default_factory=FluctuationsSection)
    riemann: RiemannSection = Field(default_factory=RiemannSection)
    godunov: GodunovSection = Field(default_factory=GodunovSection)
    output: OutputSection = Field(default_factory=OutputSection)


# ============================================
# Text grammar: section.key = value
# ============================================

_LINE = re.compile(r"^([A-Za-z_]\w*)\.([A-Za-z_]\w*)\s*=\s*(.*)$")
_INT = re.compile(r"^[+-]?\d+$")
_BARE = re.compile(r"^[A-Za-z_][\w\-]*$")


def _split_list(text: str) -> List[str]:
    items, buf, quoted = [], [], False
    for ch in text:
        if ch == '"':
            quoted = not quoted
        if ch == "," and not quoted:
            items.append("".join(buf).strip())
            buf = []
            continue
        buf.append(ch)
    if quoted:
        raise ConfigError(f"unterminated string in {text!r}")
    items.append("".join(buf).strip())
    return items


def _parse_scalar(token: str) -> Any:
    if not token:
        raise ConfigError("empty list element")
    if len(token) >= 2 and token[0] == token[-1] == '"':
        return token[1:-1]
    if token == "true":
        return True
    if token == "false":
        return False
    if _INT.match(token):
        return int(token)
    try:
        return float(token)
    except ValueError:
        pass
    if _BARE.match(token):
        return token
    raise ConfigError(f"cannot parse value {token!r}")


def parse_value(text: str) -> Any:
    """Parse the right-hand side of one `section.key = value` line"""
    text = text.strip()
    if not text:
        return []
    items = _split_list(text)
    if len(items) > 1:
        return [_parse_scalar(item) for item in items]
    return _parse_scalar(items[0])


def parse_config_text(text: str) -> Dict[str, Dict[str, Any]]:
    """Parse config text into a nested {section: {key: value}} dict"""
    tree: Dict[str, Dict[str, Any]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        match = _LINE.match(line)
        if not match:
            raise ConfigError(f"line {lineno}: expected 'section.key = value', got {raw!r}")
        section, key, value = match.groups()
        try:
            tree.setdefault(section, {})[key] = parse_value(value)
        except ConfigError as e:
            raise ConfigError(f"line {lineno}: {e}") from e
    return tree


def _field_key(model: type, key: str) -> Optional[str]:
    for name, info in model.model_fields.items():
        if key == name or key == info.alias:
            return name
    return None


def _coerce(tree: Dict[str, Dict[str, Any]]) -> Dict[str, Dict[str, Any]]:
    """Wrap scalars given for list-typed fields; reject unknown sections and keys"""
    out: Dict[str, Dict[str, Any]] = {}
    for section, entries in tree.items():
        if section not in ExperimentConfig.model_fields:
            raise ConfigError(f"unknown section '{section}'")
        model = ExperimentConfig.model_fields[section].annotation
        coerced = {}
        for key, value in entries.items():
            name = _field_key(model, key)
            if name is None:
                raise ConfigError(f"unknown key '{section}.{key}'")
            annotation = model.model_fields[name].annotation
            is_list = get_origin(annotation) is list
            if is_list and not isinstance(value, list):
                value = [value]
            elif not is_list and isinstance(value, list):
                if value == [] and type(None) in get_args(annotation):
                    value = None
                else:
                    raise ConfigError(f"'{section}.{key}' does not take a list")
            coerced[key] = value
        out[section] = coerced
    return out


def build_config(tree: Dict[str, Dict[str, Any]]) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(_coerce(tree))
    except ValidationError as e:
        raise ConfigError(str(e)) from e


def parse_override(item: str) -> Tuple[str, str, Any]:
    """Split a `section.key=value` flag override"""
    match = _LINE.match(item.strip())
    if not match:
        raise ConfigError(f"override must look like 'section.key=value', got {item!r}")
    section, key, value = match.groups()
    return section, key, parse_value(value)


def apply_overrides(
    tree: Dict[str, Dict[str, Any]], overrides: Iterable[str]
) -> Dict[str, Dict[str, Any]]:
    merged = {section: dict(entries) for section, entries in tree.items()}
    for item in overrides:
        section, key, value = parse_override(item)
        merged.setdefault(section, {})[key] = value
    return merged


def load_config(
    path: Optional[str] = None,
    overrides: Iterable[str] = (),
    env: Optional[Settings] = None,
) -> ExperimentConfig:
    """Load a config file, apply DEPHYDRO_SEED and then explicit overrides"""
    tree: Dict[str, Dict[str, Any]] = {}
    if path is not None:
        file = Path(path)
        if not file.is_file():
            raise ConfigError(f"config file not found: {path}")
        tree = parse_config_text(file.read_text())

    env = env or Settings()
    if env.seed is not None:
        tree.setdefault("experiment", {})["seed"] = env.seed
        logger.info(f"Master seed overridden from environment: {env.seed}")

    return build_config(apply_overrides(tree, overrides))


def _format_scalar(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    return f'"{value}"'


def dump_config(config: ExperimentConfig) -> str:
    """Render the config echo in the same grammar it is parsed from"""
    lines = []
    data = config.model_dump(by_alias=True)
    for section, entries in data.items():
        for key, value in entries.items():
            if value is None:
                continue
            if isinstance(value, list):
                text = ", ".join(_format_scalar(v) for v in value)
            else:
                text = _format_scalar(value)
            lines.append(f"{section}.{key} = {text}".rstrip())
    return "\n".join(lines) + "\n"
