"""Pipeline configuration: file, environment, and flag layering.

Threshold defaults are the published operating points (0.6 coverage,
0.75 retained variance, 5% label eligibility, 90% assignment
probability, 0.9 duplicate IoU, frequency cutoff 10); every one is
overridable and every report prints the values it ran with.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .geometry import MergeThresholds

ENV_PREFIX = "TUSKMARK_"


class ConfigError(Exception):
    pass


@dataclass
class Thresholds:
    dedup_iou: float = 0.9
    exterior_coverage: float = 0.6
    eval_coverage: float = 0.6
    variance_target: float = 0.75
    label_eligibility: float = 0.05
    assignment_probability: float = 0.90
    signature_recurrence: int = 2
    frequency_threshold: int = 10
    sample_fraction: float = 0.10
    sample_minimum: int = 100
    merge_size_ratio_min: float = 0.5
    merge_size_ratio_max: float = 2.0
    merge_gap_height_factor: float = 0.5
    merge_collinearity_factor: float = 0.25
    svm_c: float = 1.0
    svm_gamma: float | None = None
    smo_tolerance: float = 5e-4

    def validate(self) -> None:
        unit_open = {
            "dedup_iou": self.dedup_iou,
            "exterior_coverage": self.exterior_coverage,
            "eval_coverage": self.eval_coverage,
            "variance_target": self.variance_target,
            "sample_fraction": self.sample_fraction,
        }
        for name, value in unit_open.items():
            if not 0.0 < value <= 1.0:
                raise ConfigError(f"{name} must be in (0, 1], got {value}")
        for name, value in (
            ("label_eligibility", self.label_eligibility),
            ("assignment_probability", self.assignment_probability),
        ):
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {value}")
        if self.signature_recurrence < 1:
            raise ConfigError("signature_recurrence must be >= 1")
        if self.frequency_threshold < 1:
            raise ConfigError("frequency_threshold must be >= 1")
        if self.sample_minimum < 0:
            raise ConfigError("sample_minimum must be >= 0")
        if self.svm_c <= 0:
            raise ConfigError("svm_c must be positive")
        if self.smo_tolerance <= 0:
            raise ConfigError("smo_tolerance must be positive")
        if not 0 < self.merge_size_ratio_min <= 1 <= self.merge_size_ratio_max:
            raise ConfigError("merge size ratio bounds must straddle 1")

    def merge_thresholds(self) -> MergeThresholds:
        return MergeThresholds(
            size_ratio_min=self.merge_size_ratio_min,
            size_ratio_max=self.merge_size_ratio_max,
            gap_height_factor=self.merge_gap_height_factor,
            collinearity_height_factor=self.merge_collinearity_factor,
        )


@dataclass
class BackendConfig:
    kind: str = "mock"  # mock | http
    transcript: str | None = None
    url: str | None = None
    templates_dir: str | None = None
    retries: int = 2
    backoff_seconds: float = 0.0
    concurrency: int = 4


@dataclass
class PipelineConfig:
    catalog_dir: str = "catalog"
    image_root: str = "."
    manifest: str | None = None
    detections: str | None = None
    embeddings: str | None = None
    human_labels: str | None = None
    ground_truth: str | None = None
    predictions: str | None = None
    reports_dir: str | None = None  # default: <catalog_dir>/reports
    models_file: str | None = None  # default: <catalog_dir>/label_models.json
    seed: int | None = None
    logical_clock: bool = True
    service_host: str = "127.0.0.1"
    service_port: int = 8765
    ui_dir: str | None = None
    thresholds: Thresholds = field(default_factory=Thresholds)
    backend: BackendConfig = field(default_factory=BackendConfig)

    def validate(self) -> None:
        self.thresholds.validate()
        if self.backend.kind not in ("mock", "http"):
            raise ConfigError(f"unknown backend kind {self.backend.kind!r}")

    def resolved_reports_dir(self) -> Path:
        return Path(self.reports_dir) if self.reports_dir else Path(self.catalog_dir) / "reports"

    def resolved_models_file(self) -> Path:
        if self.models_file:
            return Path(self.models_file)
        return Path(self.catalog_dir) / "label_models.json"

    def header_lines(self) -> list[str]:
        """Threshold block printed into every report for auditability."""
        lines = ["# configuration"]
        for f in fields(Thresholds):
            lines.append(f"#   {f.name} = {getattr(self.thresholds, f.name)}")
        lines.append(f"#   seed = {self.seed}")
        return lines

    def to_dict(self) -> dict:
        return asdict(self)


def _apply_section(target, data: dict, section: str) -> None:
    known = {f.name for f in fields(target)}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"unknown {section} key {key!r}")
        setattr(target, key, value)


def load_config(path: str | Path | None = None, env: dict | None = None) -> PipelineConfig:
    """Build configuration from an optional YAML file plus environment.

    Environment variables (TUSKMARK_CATALOG_DIR, TUSKMARK_IMAGE_ROOT,
    TUSKMARK_SEED, TUSKMARK_SERVICE_PORT) override the file; CLI flags
    override both.
    """
    config = PipelineConfig()
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                data = yaml.safe_load(fh) or {}
        except FileNotFoundError:
            raise ConfigError(f"configuration file not found: {path}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected a mapping at top level")
        thresholds = data.pop("thresholds", {}) or {}
        backend = data.pop("backend", {}) or {}
        _apply_section(config, data, "config")
        _apply_section(config.thresholds, thresholds, "thresholds")
        _apply_section(config.backend, backend, "backend")
    env = dict(os.environ if env is None else env)
    if ENV_PREFIX + "CATALOG_DIR" in env:
        config.catalog_dir = env[ENV_PREFIX + "CATALOG_DIR"]
    if ENV_PREFIX + "IMAGE_ROOT" in env:
        config.image_root = env[ENV_PREFIX + "IMAGE_ROOT"]
    if ENV_PREFIX + "SEED" in env:
        config.seed = int(env[ENV_PREFIX + "SEED"])
    if ENV_PREFIX + "SERVICE_PORT" in env:
        config.service_port = int(env[ENV_PREFIX + "SERVICE_PORT"])
    config.validate()
    return config
