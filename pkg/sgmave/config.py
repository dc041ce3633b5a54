"""Configuration helpers for SgMAVE."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional
import os

from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError


@dataclass(frozen=True)
class FitOptions:
    """Numerical knobs shared by the gMAVE stage and the shrinkage path."""

    tol: float = 1e-6
    max_iter: int = 50
    ridge: float = 1e-8
    bandwidth: Optional[float] = None
    initial_inflation: float = 2.0
    max_index_dim: int = 3
    n_lambda: int = 50
    lambda_min_ratio: float = 1e-3
    scad_a: float = 3.7
    mcp_gamma: float = 3.0
    max_sweeps: int = 1000
    cd_tol: float = 1e-10
    multi_start: bool = True

    def to_record(self) -> dict:
        return {
            "tol": self.tol,
            "max_iter": self.max_iter,
            "ridge": self.ridge,
            "bandwidth": self.bandwidth,
            "initial_inflation": self.initial_inflation,
            "max_index_dim": self.max_index_dim,
            "n_lambda": self.n_lambda,
            "lambda_min_ratio": self.lambda_min_ratio,
            "scad_a": self.scad_a,
            "mcp_gamma": self.mcp_gamma,
            "max_sweeps": self.max_sweeps,
            "cd_tol": self.cd_tol,
            "multi_start": self.multi_start,
        }


@dataclass
class Settings:
    """Application wide settings."""

    fit: FitOptions = field(default_factory=FitOptions)
    threads: int = 1
    database_url: Optional[str] = None

    def with_overrides(
        self,
        *,
        threads: Optional[int] = None,
        database_url: Optional[str] = None,
        **fit_overrides,
    ) -> "Settings":
        """Return a copy of the settings with runtime overrides applied."""

        fit_changes = {key: value for key, value in fit_overrides.items() if value is not None}
        return Settings(
            fit=replace(self.fit, **fit_changes),
            threads=threads if threads is not None else self.threads,
            database_url=database_url or self.database_url,
        )


class _SettingsModel(BaseModel):
    sgmave_threads: int = Field(1, ge=1)
    sgmave_database_url: Optional[str] = None
    sgmave_tol: Optional[float] = Field(None, gt=0)
    sgmave_max_iter: Optional[int] = Field(None, ge=1)
    sgmave_max_index_dim: Optional[int] = Field(None, ge=1)
    sgmave_n_lambda: Optional[int] = Field(None, ge=1)
    sgmave_lambda_min_ratio: Optional[float] = Field(None, gt=0, lt=1)
    sgmave_max_sweeps: Optional[int] = Field(None, ge=1)


def load_settings(**overrides) -> Settings:
    """Load configuration from environment variables and optional overrides."""

    load_dotenv()
    env = {key.lower(): value for key, value in os.environ.items() if key.upper().startswith("SGMAVE_")}

    try:
        model = _SettingsModel(**env)
    except ValidationError as exc:
        errors = "; ".join(f"{'.'.join(map(str, err.get('loc', ())))}: {err.get('msg', '')}" for err in exc.errors())
        raise RuntimeError(f"Invalid configuration: {errors}") from exc

    defaults = FitOptions()
    fit = FitOptions(
        tol=model.sgmave_tol or defaults.tol,
        max_iter=model.sgmave_max_iter or defaults.max_iter,
        max_index_dim=model.sgmave_max_index_dim or defaults.max_index_dim,
        n_lambda=model.sgmave_n_lambda or defaults.n_lambda,
        lambda_min_ratio=model.sgmave_lambda_min_ratio or defaults.lambda_min_ratio,
        max_sweeps=model.sgmave_max_sweeps or defaults.max_sweeps,
    )
    settings = Settings(fit=fit, threads=model.sgmave_threads, database_url=model.sgmave_database_url)
    return settings.with_overrides(**overrides)


__all__ = ["FitOptions", "Settings", "load_settings"]
