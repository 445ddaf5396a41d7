from functools import lru_cache
from pathlib import Path
from typing import Any, Literal, Optional

from dotenv import dotenv_values
from pydantic import Field, ValidationError, model_validator
from pydantic_settings import BaseSettings

from imrestore.core.errors import ConfigError
from imrestore.optim.penalty import PenaltyKind
from imrestore.optim.prox import TVKind

_LEVELS = {"CRITICAL", "ERROR", "WARNING", "INFO", "DEBUG"}


class Settings(BaseSettings):
    log_level: str = Field(default="INFO")
    log_format: Literal["plain", "keyvalue"] = Field(default="keyvalue")
    workers: int = Field(default=1, ge=1)
    psnr_cap: float = Field(default=100.0, gt=0)

    @model_validator(mode="after")
    def validate_logging(self) -> "Settings":
        self.log_level = self.log_level.upper()
        if self.log_level not in _LEVELS:
            raise ValueError(f"IMRESTORE_LOG_LEVEL must be one of {sorted(_LEVELS)}.")
        return self

    class Config:
        env_prefix = "IMRESTORE_"
        env_file = ".env"
        env_file_encoding = "utf-8"
        extra = "ignore"


@lru_cache()
def get_settings() -> Settings:
    return Settings()


Task = Literal["degrade", "deblur", "inpaint", "metrics", "verify-trace"]


class RunConfig(BaseSettings):
    task: Task
    input: Optional[Path] = None
    ref: Optional[Path] = None
    out: Optional[Path] = None
    penalty: Optional[PenaltyKind] = None
    eps: Optional[float] = Field(default=None, gt=0)
    q: Optional[float] = Field(default=None, gt=0, lt=1)
    nu: Optional[float] = Field(default=None, ge=0)
    lam: Optional[float] = Field(default=None, ge=0)
    noise: float = Field(default=0.0, ge=0, lt=1)
    blur: Optional[Literal["average", "gaussian"]] = None
    kernel_size: int = 7
    sigma: Optional[float] = None
    mask: Optional[str] = None
    mask_missing: float = Field(default=0.1, ge=0, lt=1)
    rank: Optional[int] = Field(default=None, ge=1)
    seed: int = Field(default=0, ge=0)
    seeds: Optional[str] = None
    trace: Optional[Path] = None
    tv: Optional[TVKind] = None
    box: bool = True
    fft: bool = False
    overrides: dict[str, str] = Field(default_factory=dict)

    @model_validator(mode="after")
    def validate_task_inputs(self) -> "RunConfig":
        if self.task != "metrics" and self.input is None:
            raise ValueError("--in is required for this task.")
        if self.task == "metrics" and (self.input is None or self.ref is None):
            raise ValueError("metrics needs both --in and --ref.")
        if self.blur == "gaussian" and self.sigma is None:
            self.sigma = 2.0
        if self.seeds is not None:
            self.seed_range()
        return self

    def seed_range(self) -> range:
        """Inclusive ``a..b`` seed range."""
        try:
            first, last = (int(part) for part in self.seeds.split(".."))
        except (AttributeError, ValueError) as exc:
            raise ValueError("seeds must look like a..b") from exc
        if first < 0 or last < first:
            raise ValueError("seeds need 0 <= a <= b.")
        return range(first, last + 1)

    class Config:
        env_prefix = "IMRESTORE_"
        extra = "ignore"


_ALIASES = {"lambda": "lam", "in": "input"}


def _normalize_key(key: str) -> str:
    key = key.strip().lower()
    key = _ALIASES.get(key, key)
    return key.replace("-", "_")


def read_config_file(path: Path) -> dict[str, str]:
    """Read ``key = value`` lines; unknown keys are treated as engine overrides."""
    if not Path(path).is_file():
        raise ConfigError("config", f"config file {path} does not exist.")
    values = {}
    for key, value in dotenv_values(path).items():
        if value is None:
            raise ConfigError(key, "missing value.")
        values[_normalize_key(key)] = value.strip().strip('"').strip("'")
    return values


def load_run_config(cli_values: dict[str, Any], config_file: Optional[Path] = None) -> RunConfig:
    """Merge environment < config file < command line and validate the result."""
    merged: dict[str, Any] = {}
    overrides: dict[str, str] = {}
    if config_file is not None:
        for key, value in read_config_file(config_file).items():
            if key in RunConfig.model_fields:
                merged[key] = value
            else:
                overrides[key] = value
    overrides.update(cli_values.pop("overrides", {}) or {})
    merged.update({key: value for key, value in cli_values.items() if value is not None})
    merged["overrides"] = overrides
    try:
        return RunConfig(**merged)
    except ValidationError as exc:
        raise ConfigError(_first_field(exc), exc.errors()[0]["msg"]) from exc


def _first_field(exc: ValidationError) -> str:
    location = exc.errors()[0].get("loc") or ("config",)
    return ".".join(str(part) for part in location)


def parse_overrides(pairs: list[str]) -> dict[str, str]:
    overrides = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep or not key.strip():
            raise ConfigError("set", f"expected key=value, got {pair!r}.")
        overrides[_normalize_key(key)] = value.strip()
    return overrides


def default_deblur_nu(noise: float) -> float:
    """Regularization weight used for the published deblurring grids."""
    return 0.4 if 0.3 < noise <= 0.7 else 0.15


def rho_nu(noise: float, blur: Optional[str]) -> float:
    if noise <= 0.3:
        return 5.0
    if noise <= 0.5:
        return 2.5
    if noise <= 0.7:
        return 2.0 / 3.0
    return 0.5 if blur == "gaussian" else 0.1


def deblur_defaults(noise: float, blur: Optional[str], nu: float, theta0: float) -> dict[str, float]:
    """Engine parameters for deblurring, keyed by engine field name."""
    alpha0 = min(rho_nu(noise, blur) / nu, 50.0) if nu > 0 else 50.0
    large = theta0 > 1e5
    return {
        "alpha0": alpha0,
        "gamma_lo": alpha0,
        "tau0": min(alpha0, 10.0),
        "rho_tau": 1.2 if large else 1.15,
        "eps_star": min(1e-6, 1e-6 / alpha0) if large else min(1e-8, 1e-6 / alpha0),
    }


def inpaint_defaults() -> dict[str, float]:
    gamma_lo = 100.0
    return {
        "alpha0": 0.1 * gamma_lo,
        "gamma_lo": gamma_lo,
        "tau0": 1.0,
        "rho_tau": 1.2,
        "eps_star": 1e-6 / gamma_lo,
    }
