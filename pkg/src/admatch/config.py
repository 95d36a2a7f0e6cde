"""Run configuration: nested sections per pipeline stage, loaded from JSON
with unknown keys rejected, resolved defaults echoed back out, and a stable
content hash so every artifact can name the exact configuration that
produced it.

Environment overrides: ADMATCH_SEED replaces the global seed and
ADMATCH_ARTIFACTS the artifact directory.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .corpus import CorpusSpec
from .distill import FinetuneConfig, MappingConfig
from .errors import ConfigError
from .featurize import FeaturizeConfig
from .gbdt import GbdtConfig
from .models import CdssmConfig, DeepCrossingConfig
from .training import TrainParams
from .util import config_hash, derive_seed

THETA_GRID = (0.0, 0.2, 0.5, 0.8, 1.0)
RHO_GRID = tuple(round(0.1 * k, 1) for k in range(1, 10))

BASELINE_ROWS = (
    "cdssm-click",
    "cdssm-labeled",
    "dc",
    "gbdt",
    "dc+gbdt",
    "cdssm-dc",
    "cdssm-dc+gbdt",
    "cdssm-ft-dc",
    "cdssm-ft-dc+gbdt",
)


def _from_dict(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected an object, got {type(data).__name__}")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}; expected {sorted(known)}")
    kwargs = {}
    for name, value in data.items():
        f = known[name]
        if dataclasses.is_dataclass(f.type) or (
            isinstance(f.type, str) and f.type in _SECTION_TYPES
        ):
            section_cls = f.type if dataclasses.is_dataclass(f.type) else _SECTION_TYPES[f.type]
            kwargs[name] = _from_dict(section_cls, value, f"{path}.{name}")
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


@dataclass(frozen=True)
class CorpusSection:
    n_intents: int = 160
    vocab_size: int = 1000
    n_labeled: int = 7000
    n_unlabeled: int = 50000
    n_clicked: int = 50000
    click_noise_rate: float = 0.1
    seed: int | None = None  # defaults to a seed derived from the run seed

    def to_spec(self, run_seed: int) -> CorpusSpec:
        seed = self.seed if self.seed is not None else derive_seed(run_seed, "corpus")
        spec = CorpusSpec(
            n_intents=self.n_intents,
            vocab_size=self.vocab_size,
            n_labeled=self.n_labeled,
            n_unlabeled=self.n_unlabeled,
            n_clicked=self.n_clicked,
            click_noise_rate=self.click_noise_rate,
            seed=seed,
        )
        spec.validate()
        return spec


@dataclass(frozen=True)
class AnnotatorSection:
    kinds: tuple = ("dc", "gbdt")
    task_set: str = "joint"  # joint | with-aux | single
    dc: DeepCrossingConfig = DeepCrossingConfig()
    dc_train: TrainParams = TrainParams(epochs=30, batch_size=256, lr=0.5, patience=4)
    gbdt: GbdtConfig = GbdtConfig()

    def __post_init__(self) -> None:
        for kind in self.kinds:
            if kind not in ("dc", "gbdt"):
                raise ConfigError(f"unknown annotator kind {kind!r}")
        if self.task_set not in ("joint", "with-aux", "single"):
            raise ConfigError(f"unknown task_set {self.task_set!r}")


@dataclass(frozen=True)
class StudentSection:
    cdssm: CdssmConfig = CdssmConfig()
    mapping: MappingConfig = MappingConfig()
    train: TrainParams = TrainParams(epochs=6, batch_size=256, lr=0.5, patience=2, val_fraction=0.05)


@dataclass(frozen=True)
class FinetuneSection:
    mode: str = "label-aware"
    theta: float = 0.5
    train: TrainParams = TrainParams(epochs=12, batch_size=256, lr=0.1, patience=3)

    def to_config(self) -> FinetuneConfig:
        return FinetuneConfig(mode=self.mode, theta=self.theta)


@dataclass(frozen=True)
class ProtocolSection:
    n_seeds: int = 3
    rows: tuple = BASELINE_ROWS
    thetas: tuple = THETA_GRID
    rhos: tuple = RHO_GRID
    mappings: tuple = ("f1:g1", "f1:g2", "f2:g3")
    grid_annotators: tuple = ("dc-single", "dc-mtl")
    rho_pipeline_seeds: int = 1  # replicates for the pipeline branch of the rho sweep
    rho_focus: float = 0.2  # comparison point run with the full n_seeds


@dataclass(frozen=True)
class RunConfig:
    seed: int = 7
    artifacts: str = "runs/out"
    n_test: int = 2000
    val_fraction: float = 0.1
    corpus: CorpusSection = CorpusSection()
    featurize: FeaturizeConfig = FeaturizeConfig()
    annotator: AnnotatorSection = AnnotatorSection()
    student: StudentSection = StudentSection()
    finetune: FinetuneSection = FinetuneSection()
    protocol: ProtocolSection = ProtocolSection()

    def __post_init__(self) -> None:
        if self.n_test <= 0 or self.n_test >= self.corpus.n_labeled:
            raise ConfigError(
                f"n_test must be in (0, n_labeled={self.corpus.n_labeled}), got {self.n_test}"
            )
        if not (0.0 < self.val_fraction < 1.0):
            raise ConfigError(f"val_fraction must be in (0, 1), got {self.val_fraction!r}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        return config_hash(_listify(self.to_dict()))


_SECTION_TYPES = {
    "CorpusSection": CorpusSection,
    "AnnotatorSection": AnnotatorSection,
    "StudentSection": StudentSection,
    "FinetuneSection": FinetuneSection,
    "ProtocolSection": ProtocolSection,
    "FeaturizeConfig": FeaturizeConfig,
    "DeepCrossingConfig": DeepCrossingConfig,
    "CdssmConfig": CdssmConfig,
    "GbdtConfig": GbdtConfig,
    "MappingConfig": MappingConfig,
    "TrainParams": TrainParams,
}


def _listify(obj: Any) -> Any:
    """JSON-friendly view: tuples become lists, recursively."""
    if isinstance(obj, dict):
        return {k: _listify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_listify(v) for v in obj]
    return obj


def config_from_dict(data: dict) -> RunConfig:
    data = dict(data)
    for name in ("kinds", "rows", "thetas", "rhos", "mappings", "grid_annotators"):
        for section in data.values():
            if isinstance(section, dict) and name in section and isinstance(section[name], list):
                section[name] = tuple(section[name])
    return _from_dict(RunConfig, data, "config")


def load_config(path: str | Path | None) -> RunConfig:
    """Load a JSON config file (or defaults when None) and apply environment
    overrides."""
    data: dict = {}
    if path is not None:
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    cfg = config_from_dict(data)
    env_seed = os.environ.get("ADMATCH_SEED")
    env_artifacts = os.environ.get("ADMATCH_ARTIFACTS")
    if env_seed is not None:
        try:
            cfg = dataclasses.replace(cfg, seed=int(env_seed))
        except ValueError:
            raise ConfigError(f"ADMATCH_SEED must be an integer, got {env_seed!r}") from None
    if env_artifacts is not None:
        cfg = dataclasses.replace(cfg, artifacts=env_artifacts)
    return cfg


def write_resolved_config(cfg: RunConfig, out_dir: str | Path) -> str:
    """Write the resolved config and its hash next to the run outputs."""
    out = Path(out_dir) / "config"
    out.mkdir(parents=True, exist_ok=True)
    resolved = _listify(cfg.to_dict())
    (out / "resolved.json").write_text(
        json.dumps(resolved, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    digest = cfg.hash()
    (out / "config.hash").write_text(digest + "\n", encoding="utf-8")
    return digest
