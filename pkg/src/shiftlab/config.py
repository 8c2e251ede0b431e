"""Declarative run and grid configuration.

Configs are strict pydantic models: unknown keys are rejected and every
violation is reported with the offending field's path, so a typo cannot
silently corrupt an ablation grid. Files may be YAML or JSON.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .dann import ModelSpec, Phase, TrainingSchedule, TrainScheme
from .data import ShiftSpec
from .errors import ConfigError
from .sampling import Strategy


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DatasetConfig(StrictModel):
    kind: Literal["synthetic", "idx"] = "synthetic"
    # synthetic options
    generator: Literal["two_moons", "gaussian_mixture"] = "two_moons"
    n_source: int = Field(default=2000, gt=0)
    n_target: int = Field(default=2000, gt=0)
    rotation_deg: float = 30.0
    translation: tuple[float, float] = (0.5, 0.0)
    noise: float = Field(default=0.15, gt=0)
    num_classes: int = Field(default=2, ge=2)
    seed: Optional[int] = None  # None: follow the run seed
    # idx options (paths checked when the data is actually loaded)
    source_images: Optional[str] = None
    source_labels: Optional[str] = None
    target_images: Optional[str] = None
    target_labels: Optional[str] = None
    max_rows: Optional[int] = Field(default=None, gt=0)

    def to_shift_spec(self, run_seed: int) -> ShiftSpec:
        return ShiftSpec(
            generator=self.generator,
            n_source=self.n_source,
            n_target=self.n_target,
            rotation_deg=self.rotation_deg,
            translation=self.translation,
            noise=self.noise,
            num_classes=self.num_classes,
            seed=self.seed if self.seed is not None else run_seed,
        )


class ModelConfig(StrictModel):
    feature_dims: list[int] = [32, 32]
    predictor_dims: list[int] = []
    discriminator_dims: list[int] = [16]

    @field_validator("feature_dims")
    @classmethod
    def _nonempty(cls, v):
        if not v:
            raise ValueError("feature_dims must name at least one layer width")
        return v


class PhaseConfig(StrictModel):
    epochs: int = Field(gt=0)
    learning_rate: float = Field(gt=0)


class ScheduleConfig(StrictModel):
    phases: list[PhaseConfig]
    batch_size: int = Field(default=64, gt=0)

    @field_validator("phases")
    @classmethod
    def _has_phase(cls, v):
        if not v:
            raise ValueError("schedule needs at least one phase")
        return v

    def to_schedule(self) -> TrainingSchedule:
        return TrainingSchedule(
            [Phase(p.epochs, p.learning_rate) for p in self.phases], self.batch_size
        )


class RunConfig(StrictModel):
    dataset: DatasetConfig = DatasetConfig()
    model: ModelConfig = ModelConfig()
    scheme: TrainScheme = TrainScheme.ADVERSARIAL
    strategy: Strategy = Strategy.IMPORTANCE_WEIGHT
    adversarial_weight: float = Field(default=0.1, ge=0)
    entropy_weight: float = Field(default=0.1, ge=0)
    learning_rate: float = Field(default=1e-3, gt=0)  # base; phases override
    schedule: ScheduleConfig = ScheduleConfig(
        phases=[
            PhaseConfig(epochs=30, learning_rate=1e-3),
            PhaseConfig(epochs=30, learning_rate=5e-4),
            PhaseConfig(epochs=30, learning_rate=2.5e-4),
        ],
        batch_size=64,
    )
    budgets: Union[int, list[int]] = 5
    max_rounds: int = Field(default=10, ge=0)
    seed: int = 0
    test_fraction: float = Field(default=1.0 / 3.0, gt=0, lt=1)
    standardize: bool = True
    first_round_random: bool = False
    warm_start: bool = False
    labeled_target_domain_label: Literal[0, 1] = 1
    record_scores: bool = True
    out_dir: Optional[str] = None

    @field_validator("budgets")
    @classmethod
    def _budgets_positive(cls, v):
        values = [v] if isinstance(v, int) else v
        if any(b <= 0 for b in values):
            raise ValueError("budgets entries must be positive")
        return v

    @model_validator(mode="after")
    def _budgets_match_rounds(self):
        if isinstance(self.budgets, list) and len(self.budgets) != self.max_rounds:
            raise ValueError(
                f"budgets lists {len(self.budgets)} rounds but max_rounds is "
                f"{self.max_rounds}"
            )
        return self

    def budget_list(self) -> list[int]:
        if isinstance(self.budgets, int):
            return [self.budgets] * self.max_rounds
        return list(self.budgets)

    def to_model_spec(self, input_dim: int, num_classes: int) -> ModelSpec:
        return ModelSpec(
            input_dim=input_dim,
            num_classes=num_classes,
            feature_dims=list(self.model.feature_dims),
            predictor_dims=list(self.model.predictor_dims),
            discriminator_dims=list(self.model.discriminator_dims),
            adversarial_weight=self.adversarial_weight,
            entropy_weight=self.entropy_weight,
            learning_rate=self.learning_rate,
        )


class GridConfig(StrictModel):
    base: RunConfig = RunConfig()
    schemes: Optional[list[TrainScheme]] = None  # None: just the base scheme
    strategies: Optional[list[Strategy]] = None
    seeds: list[int] = [0, 1, 2, 3, 4]
    workers: Optional[int] = Field(default=None, gt=0)  # None: available cores
    out_dir: Optional[str] = None

    @field_validator("seeds")
    @classmethod
    def _seeds_nonempty(cls, v):
        if not v:
            raise ValueError("seeds must list at least one seed")
        return v

    def cells(self) -> list[tuple[TrainScheme, Strategy, int]]:
        schemes = self.schemes or [self.base.scheme]
        strategies = self.strategies or [self.base.strategy]
        return [(sc, st, seed) for sc in schemes for st in strategies for seed in self.seeds]


# ---------------------------------------------------------------------------
# Presets and file loading


def toy_preset() -> RunConfig:
    """Synthetic two-moons defaults sized for seconds-scale runs."""
    return RunConfig()


def paper_digits_preset() -> RunConfig:
    """Digit-corpus settings: batch 128, three 20-epoch phases stepping the
    learning rate down from 2e-4, budget 10 across 30 rounds. Point the
    dataset block at IDX files before running."""
    return RunConfig(
        dataset=DatasetConfig(kind="idx"),
        model=ModelConfig(feature_dims=[256, 128], discriminator_dims=[64]),
        schedule=ScheduleConfig(
            phases=[
                PhaseConfig(epochs=20, learning_rate=2e-4),
                PhaseConfig(epochs=20, learning_rate=1e-4),
                PhaseConfig(epochs=20, learning_rate=5e-5),
            ],
            batch_size=128,
        ),
        adversarial_weight=0.1,
        budgets=10,
        max_rounds=30,
    )


PRESETS = {"toy": toy_preset, "paper-digits": paper_digits_preset}


def preset_config(name: str) -> RunConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return PRESETS[name]()


def format_validation_error(err: ValidationError) -> str:
    lines = [f"invalid configuration ({err.error_count()} problem(s)):"]
    for item in err.errors():
        loc = ".".join(str(p) for p in item["loc"]) or "<root>"
        lines.append(f"  field '{loc}': {item['msg']}")
    return "\n".join(lines)


def parse_run_config(doc: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(doc)
    except ValidationError as err:
        raise ConfigError(format_validation_error(err)) from err


def parse_grid_config(doc: dict) -> GridConfig:
    try:
        return GridConfig.model_validate(doc)
    except ValidationError as err:
        raise ConfigError(format_validation_error(err)) from err


def load_config_file(path: str | Path) -> dict:
    """Read a YAML or JSON config document into a plain dict."""
    text = Path(path).read_text()
    try:
        if str(path).endswith(".json"):
            doc = json.loads(text)
        else:
            doc = yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as err:
        raise ConfigError(f"could not parse {path}: {err}") from err
    if not isinstance(doc, dict):
        raise ConfigError(f"{path} must contain a mapping at the top level")
    return doc
