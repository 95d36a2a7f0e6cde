"""Experiment protocols and pipeline orchestration.

Each protocol cell runs the pipeline stages it needs (annotator -> scoring ->
student -> fine-tune) with a seed derived from the base seed and the cell
identity. Replicates draw independent corpora; reported rows are seed
averages with the per-replicate rows preserved in the report log.

Heavy artifacts (annotators, scored sets, students, baselines, fine-tuned
models) are cached on disk keyed by a hash of everything upstream of them,
so protocols sharing cells reuse work instead of retraining.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import plots
from .annotate import (
    MAIN_TASK_AC,
    DcAnnotator,
    GbdtAnnotator,
    ScoredDataset,
    binarize_array,
    make_scored,
    save_scored,
    score_dataset,
    score_encoded,
    train_deep_crossing_annotator,
    train_gbdt_annotator,
)
from .config import RunConfig, write_resolved_config
from .corpus import LabeledSample, generate_corpus, save_dataset, split_labeled, subsample
from .distill import (
    FinetuneConfig,
    MappingConfig,
    finetune,
    train_cdssm_on_clicks,
    train_cdssm_on_labels,
    train_student,
)
from .errors import ConfigError
from .featurize import EncodedDataset, TrigramVocab, encode_dataset
from .gbdt import load_gbdt, save_gbdt
from .metrics import MetricsReport, SweepResult, evaluate_scores
from .models import CdssmModel, DeepCrossingModel, TaskSet
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .util import canonical_json, derive_seed, sha256_hex

PROTOCOL_NAMES = ("baselines", "mapping-grid", "theta-sweep", "rho-sweep")

_TASK_SETS = {
    "joint": TaskSet.joint,
    "with-aux": TaskSet.with_aux,
    "single": TaskSet.single,
}


def _cache_key(payload: dict) -> str:
    return sha256_hex(canonical_json(payload))[:16]


@dataclass
class ProtocolResult:
    name: str
    rows: list[tuple[str, MetricsReport]]  # aggregated, one per cell
    sweeps: list[SweepResult]
    per_seed: list[tuple[str, MetricsReport]]


class Replicate:
    """Lazy, memoized pipeline artifacts for one replicate of one config.

    All randomness descends from `derive_seed(cfg.seed, ...)` plus the
    replicate index, so two Replicate instances with equal configs produce
    bit-identical artifacts.
    """

    def __init__(self, cfg: RunConfig, replicate: int, cache_dir: Path | None = None):
        self.cfg = cfg
        self.replicate = replicate
        self.cache_dir = Path(cache_dir) if cache_dir is not None else None
        if self.cache_dir is not None:
            self.cache_dir.mkdir(parents=True, exist_ok=True)
        base = cfg.corpus.seed if cfg.corpus.seed is not None else derive_seed(cfg.seed, "corpus")
        self.corpus_seed = derive_seed(base, "replicate", replicate)
        self.seed = derive_seed(cfg.seed, "replicate", replicate)
        self._mem: dict = {}

    # -- data ---------------------------------------------------------------

    def _data_identity(self) -> dict:
        return {
            "corpus": {**vars(self.cfg.corpus), "seed": self.corpus_seed},
            "n_test": self.cfg.n_test,
            "val_fraction": self.cfg.val_fraction,
            "featurize": self.cfg.featurize.to_dict(),
        }

    def data(self) -> dict:
        if "data" in self._mem:
            return self._mem["data"]
        cfg = self.cfg
        spec = cfg.corpus.to_spec(cfg.seed)
        spec = type(spec)(**{**vars(spec), "seed": self.corpus_seed})
        corpus = generate_corpus(spec)
        rng = np.random.default_rng(derive_seed(self.corpus_seed, "test-split"))
        perm = rng.permutation(len(corpus.labeled))
        test = [corpus.labeled[i] for i in sorted(perm[: cfg.n_test].tolist())]
        pool = [corpus.labeled[i] for i in sorted(perm[cfg.n_test :].tolist())]
        train, val = split_labeled(pool, cfg.val_fraction, derive_seed(self.corpus_seed, "val-split"))
        data = {
            "corpus": corpus,
            "train": train,
            "val": val,
            "test": test,
            "pool": pool,
        }
        self._mem["data"] = data
        return data

    def vocab(self) -> TrigramVocab:
        if "vocab" not in self._mem:
            data = self.data()
            corpus = data["corpus"]
            samples = data["pool"] + corpus.unlabeled + corpus.clicked
            self._mem["vocab"] = TrigramVocab.build_from_samples(samples)
        return self._mem["vocab"]

    def vocab_path(self) -> str:
        if self.cache_dir is None:
            return ""
        path = self.cache_dir / f"vocab-{_cache_key(self._data_identity())}.tsv"
        if not path.exists():
            self.vocab().save(path)
        return str(path)

    def encoded(self, which: str) -> EncodedDataset:
        key = f"enc:{which}"
        if key not in self._mem:
            data = self.data()
            samples = {
                "train": data["train"],
                "val": data["val"],
                "test": data["test"],
                "unlabeled": data["corpus"].unlabeled,
                "clicked": data["corpus"].clicked,
            }[which]
            self._mem[key] = encode_dataset(samples, self.vocab(), self.cfg.featurize)
        return self._mem[key]

    def encoded_subset(self, rho: float) -> tuple[EncodedDataset, EncodedDataset, int]:
        """Encoded train/val split of the rho-subsampled train set."""
        key = f"enc-subset:{rho}"
        if key not in self._mem:
            data = self.data()
            subset = subsample(data["train"], rho, derive_seed(self.corpus_seed, "rho-subsample"))
            sub_train, sub_val = split_labeled(
                subset, self.cfg.val_fraction, derive_seed(self.corpus_seed, "rho-val", rho)
            )
            self._mem[key] = (
                encode_dataset(sub_train, self.vocab(), self.cfg.featurize),
                encode_dataset(sub_val, self.vocab(), self.cfg.featurize),
                len(subset),
            )
        return self._mem[key]

    def test_labels(self) -> np.ndarray:
        return binarize_array(self.encoded("test").ac, MAIN_TASK_AC)

    def sizes(self, labeled_train: int | None = None) -> dict[str, int]:
        cfg = self.cfg
        return {
            "labeled_train": labeled_train
            if labeled_train is not None
            else cfg.corpus.n_labeled - cfg.n_test,
            "test": cfg.n_test,
            "unlabeled": cfg.corpus.n_unlabeled,
            "clicked": cfg.corpus.n_clicked,
        }

    # -- annotators -----------------------------------------------------------

    def _annotator_identity(self, name: str, rho: float | None) -> dict:
        cfg = self.cfg
        return {
            "data": self._data_identity(),
            "name": name,
            "rho": rho,
            "task_set": "single" if name == "dc-single" else cfg.annotator.task_set,
            "dc": cfg.annotator.dc.to_dict(),
            "dc_train": cfg.annotator.dc_train.to_dict(),
            "gbdt": cfg.annotator.gbdt.to_dict(),
            "seed": derive_seed(self.seed, "annotator", name, rho if rho is not None else 1.0),
        }

    def annotator(self, name: str, rho: float | None = None):
        """Train (or load) one annotator; `rho` trains it on a subsample."""
        key = f"annot:{name}:{rho}"
        if key in self._mem:
            return self._mem[key]
        identity = self._annotator_identity(name, rho)
        seed = identity["seed"]
        if rho is None:
            train_enc, val_enc = self.encoded("train"), self.encoded("val")
        else:
            train_enc, val_enc, _ = self.encoded_subset(rho)

        if name == "gbdt":
            cache = self._cache_path("annot", identity, ".gbdt.txt")
            if cache is not None and cache.exists():
                annotator = GbdtAnnotator(load_gbdt(cache))
            else:
                annotator = train_gbdt_annotator(train_enc, self.cfg.annotator.gbdt, seed)
                if cache is not None:
                    save_gbdt(cache, annotator.model)
        elif name in ("dc", "dc-single"):
            cache = self._cache_path("annot", identity, ".ckpt")
            if cache is not None and cache.exists():
                annotator = DcAnnotator(DeepCrossingModel.from_checkpoint(load_checkpoint(cache)))
            else:
                task_set_name = "single" if name == "dc-single" else self.cfg.annotator.task_set
                task_set = _TASK_SETS[task_set_name]()
                annotator = train_deep_crossing_annotator(
                    train_enc, val_enc, task_set, self.cfg.annotator.dc,
                    self.cfg.annotator.dc_train, seed,
                )
                if cache is not None:
                    save_checkpoint(
                        cache,
                        annotator.model.to_checkpoint(
                            vocab_path=self.vocab_path(), config_hash=self.cfg.hash()
                        ),
                    )
        else:
            raise ConfigError(f"unknown annotator {name!r}")
        self._mem[key] = annotator
        return annotator

    def annotators(self, combo: Sequence[str], rho: float | None = None) -> list:
        return [self.annotator(name, rho) for name in combo]

    # -- scoring ----------------------------------------------------------------

    def scored(self, combo: Sequence[str], which: str, rho: float | None = None) -> ScoredDataset:
        key = f"scored:{','.join(combo)}:{which}:{rho}"
        if key in self._mem:
            return self._mem[key]
        identity = {
            "annotators": [self._annotator_identity(name, rho) for name in combo],
            "which": which,
        }
        enc = self.encoded(which) if rho is None or which != "train" else self.encoded_subset(rho)[0]
        cache = self._cache_path("scores", identity, ".npy")
        if cache is not None and cache.exists():
            s = np.load(cache)
        else:
            s = score_encoded(self.annotators(combo, rho), enc)
            if cache is not None:
                np.save(cache, s)
        ytilde = None if enc.ac is None else binarize_array(enc.ac, MAIN_TASK_AC)
        out = ScoredDataset(enc=enc, s=s, ytilde=ytilde)
        self._mem[key] = out
        return out

    # -- students and baselines ---------------------------------------------------

    def _student_identity(self, combo: Sequence[str], mapping: MappingConfig, rho: float | None) -> dict:
        return {
            "annotators": [self._annotator_identity(name, rho) for name in combo],
            "mapping": mapping.to_dict(),
            "cdssm": self.cfg.student.cdssm.to_dict(),
            "train": self.cfg.student.train.to_dict(),
            "seed": derive_seed(self.seed, "student", ",".join(combo), mapping.name,
                                rho if rho is not None else 1.0),
        }

    def student(self, combo: Sequence[str], mapping: MappingConfig | None = None,
                rho: float | None = None) -> CdssmModel:
        mapping = mapping if mapping is not None else self.cfg.student.mapping
        identity = self._student_identity(combo, mapping, rho)
        return self._cached_cdssm(
            "student",
            identity,
            lambda: train_student(
                self.scored(combo, "unlabeled", rho),
                mapping,
                self.cfg.student.cdssm,
                self.cfg.student.train,
                identity["seed"],
            )[0],
        )

    def baseline(self, name: str, rho: float | None = None) -> CdssmModel:
        cfg = self.cfg
        if name == "labeled":
            if rho is None:
                train_enc, val_enc = self.encoded("train"), self.encoded("val")
            else:
                train_enc, val_enc, _ = self.encoded_subset(rho)
            identity = {
                "data": self._data_identity(),
                "baseline": "labeled",
                "rho": rho,
                "cdssm": cfg.student.cdssm.to_dict(),
                "train": cfg.student.train.to_dict(),
                "seed": derive_seed(self.seed, "baseline-labeled", rho if rho is not None else 1.0),
            }
            return self._cached_cdssm(
                "baseline",
                identity,
                lambda: train_cdssm_on_labels(
                    train_enc, val_enc, cfg.student.cdssm, cfg.student.train, identity["seed"]
                )[0],
            )
        if name == "click":
            identity = {
                "data": self._data_identity(),
                "baseline": "click",
                "cdssm": cfg.student.cdssm.to_dict(),
                "train": cfg.student.train.to_dict(),
                "seed": derive_seed(self.seed, "baseline-click"),
            }
            return self._cached_cdssm(
                "baseline",
                identity,
                lambda: train_cdssm_on_clicks(
                    self.encoded("clicked"), self.encoded("val"),
                    cfg.student.cdssm, cfg.student.train, identity["seed"],
                )[0],
            )
        raise ConfigError(f"unknown baseline {name!r}")

    def finetuned(
        self,
        combo: Sequence[str],
        ft: FinetuneConfig | None = None,
        mapping: MappingConfig | None = None,
        rho: float | None = None,
    ) -> CdssmModel:
        cfg = self.cfg
        ft = ft if ft is not None else cfg.finetune.to_config()
        mapping = mapping if mapping is not None else cfg.student.mapping
        identity = {
            "student": self._student_identity(combo, mapping, rho),
            "finetune": ft.to_dict(),
            "ft_train": cfg.finetune.train.to_dict(),
            "seed": derive_seed(self.seed, "finetune", ",".join(combo), mapping.name,
                                ft.mode, ft.theta, rho if rho is not None else 1.0),
        }

        def build() -> CdssmModel:
            student = self.student(combo, mapping, rho)
            scored_train = self.scored(combo, "train", rho)
            val_enc = self.encoded("val") if rho is None else self.encoded_subset(rho)[1]
            model, _ = finetune(
                student, scored_train, val_enc, ft, cfg.finetune.train, identity["seed"],
                mapping=mapping,
            )
            return model

        return self._cached_cdssm("finetuned", identity, build)

    # -- evaluation ----------------------------------------------------------------

    def test_report(self, scores: np.ndarray, row: str, labeled_train: int | None = None,
                    started: float | None = None) -> MetricsReport:
        return evaluate_scores(
            scores,
            self.test_labels(),
            seed=self.seed,
            config_hash=self.cfg.hash(),
            sizes=self.sizes(labeled_train),
            tags={"row": row, "replicate": self.replicate},
            started=started,
        )

    def cdssm_test_scores(self, model: CdssmModel) -> np.ndarray:
        enc = self.encoded("test")
        return model.score(enc.query_seq, enc.ad_seq)

    # -- plumbing -------------------------------------------------------------------

    def _cache_path(self, prefix: str, identity: dict, suffix: str) -> Path | None:
        if self.cache_dir is None:
            return None
        return self.cache_dir / f"{prefix}-{_cache_key(identity)}{suffix}"

    def _cached_cdssm(self, prefix: str, identity: dict, build) -> CdssmModel:
        mem_key = f"{prefix}:{_cache_key(identity)}"
        if mem_key in self._mem:
            return self._mem[mem_key]
        cache = self._cache_path(prefix, identity, ".ckpt")
        if cache is not None and cache.exists():
            model = CdssmModel.from_checkpoint(load_checkpoint(cache))
        else:
            model = build()
            if cache is not None:
                save_checkpoint(
                    cache,
                    model.to_checkpoint(vocab_path=self.vocab_path(), config_hash=self.cfg.hash()),
                )
        self._mem[mem_key] = model
        return model


# ---------------------------------------------------------------------------
# Aggregation and report output


def _aggregate(name: str, reports: list[MetricsReport], cfg: RunConfig) -> MetricsReport:
    return MetricsReport(
        roc_auc=float(np.mean([r.roc_auc for r in reports])),
        pr_auc=float(np.mean([r.pr_auc for r in reports])),
        sizes=dict(reports[0].sizes),
        seed=cfg.seed,
        config_hash=cfg.hash(),
        wall_clock_sec=float(np.sum([r.wall_clock_sec for r in reports])),
        tags={"row": name, "aggregate": "mean", "n_seeds": len(reports)},
    )


def _write_outputs(
    out_dir: Path,
    result: ProtocolResult,
    cfg: RunConfig,
) -> None:
    reports_dir = out_dir / "reports"
    reports_dir.mkdir(parents=True, exist_ok=True)
    write_resolved_config(cfg, out_dir)

    lines = []
    for name, report in result.rows + result.per_seed:
        lines.append(canonical_json({"row": name, **report.to_dict()}))
    (reports_dir / "reports.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")

    chain = sha256_hex(
        "".join(r.canonical_hash() for _, r in result.rows + result.per_seed)
    )
    (reports_dir / "reports.hash").write_text(chain + "\n", encoding="utf-8")

    widths = max([len(n) for n, _ in result.rows] + [4])
    table = [f"{'row'.ljust(widths)}  {'roc_auc':>9}  {'pr_auc':>9}  seeds"]
    for name, report in result.rows:
        table.append(
            f"{name.ljust(widths)}  {report.roc_auc:9.4f}  {report.pr_auc:9.4f}  "
            f"{report.tags.get('n_seeds', 1):>5}"
        )
    (reports_dir / "table.txt").write_text("\n".join(table) + "\n", encoding="utf-8")

    for sweep in result.sweeps:
        label = sweep.axis if len(result.sweeps) == 1 else f"{sweep.axis}-{_slug(sweep)}"
        tsv = [f"{sweep.axis}\troc_auc\tpr_auc"]
        for value, report in sweep.cells:
            tsv.append(f"{value}\t{report.roc_auc!r}\t{report.pr_auc!r}")
        (reports_dir / f"curve_{label}.tsv").write_text("\n".join(tsv) + "\n", encoding="utf-8")

    plots.render_protocol(result, reports_dir)


def _slug(sweep: SweepResult) -> str:
    tag = sweep.cells[0][1].tags.get("branch", "") if sweep.cells else ""
    return str(tag) if tag else "curve"


# ---------------------------------------------------------------------------
# Protocols


def _replicates(cfg: RunConfig, workspace: Path | None) -> list[Replicate]:
    cache = None if workspace is None else Path(workspace) / "cache"
    return [Replicate(cfg, r, cache) for r in range(cfg.protocol.n_seeds)]


def _baseline_row_scores(rep: Replicate, row: str) -> np.ndarray:
    enc_test = rep.encoded("test")
    if row == "cdssm-click":
        return rep.cdssm_test_scores(rep.baseline("click"))
    if row == "cdssm-labeled":
        return rep.cdssm_test_scores(rep.baseline("labeled"))
    if row in ("dc", "gbdt"):
        return rep.annotator(row).score(enc_test)
    if row == "dc+gbdt":
        return score_encoded(rep.annotators(("dc", "gbdt")), enc_test)
    if row.startswith("cdssm-ft-"):
        combo = tuple(row[len("cdssm-ft-") :].split("+"))
        return rep.cdssm_test_scores(rep.finetuned(combo))
    if row.startswith("cdssm-"):
        combo = tuple(row[len("cdssm-") :].split("+"))
        return rep.cdssm_test_scores(rep.student(combo))
    raise ConfigError(f"unknown baselines row {row!r}")


def protocol_baselines(cfg: RunConfig, workspace: Path | None = None) -> ProtocolResult:
    reps = _replicates(cfg, workspace)
    rows: list[tuple[str, MetricsReport]] = []
    per_seed: list[tuple[str, MetricsReport]] = []
    for row in cfg.protocol.rows:
        reports = []
        for rep in reps:
            started = time.perf_counter()
            scores = _baseline_row_scores(rep, row)
            report = rep.test_report(scores, row, started=started)
            reports.append(report)
            per_seed.append((row, report))
        rows.append((row, _aggregate(row, reports, cfg)))
    sweep = SweepResult(axis="row", cells=list(rows))
    return ProtocolResult("baselines", rows, [sweep], per_seed)


_GRID_ANNOTATORS = {"dc-mtl": "dc", "dc-single": "dc-single"}


def protocol_mapping_grid(cfg: RunConfig, workspace: Path | None = None) -> ProtocolResult:
    """Annotator-variant x mapping-function grid with before/after fine-tune
    student scores; fine-tuning runs label-aware with theta = 1."""
    reps = _replicates(cfg, workspace)
    ft = FinetuneConfig(mode="label-aware", theta=1.0)
    rows: list[tuple[str, MetricsReport]] = []
    per_seed: list[tuple[str, MetricsReport]] = []
    cells = []
    for grid_name in cfg.protocol.grid_annotators:
        annotator_name = _GRID_ANNOTATORS.get(grid_name)
        if annotator_name is None:
            raise ConfigError(f"unknown grid annotator {grid_name!r}")
        combo = (annotator_name,)
        annotator_reports = []
        for rep in reps:
            started = time.perf_counter()
            scores = rep.annotator(annotator_name).score(rep.encoded("test"))
            report = rep.test_report(scores, f"{grid_name}/annotator", started=started)
            annotator_reports.append(report)
            per_seed.append((f"{grid_name}/annotator", report))
        agg = _aggregate(f"{grid_name}/annotator", annotator_reports, cfg)
        rows.append((f"{grid_name}/annotator", agg))
        cells.append((f"{grid_name}/annotator", agg))

        for mapping_name in cfg.protocol.mappings:
            mapping = MappingConfig.parse(
                mapping_name,
                t1=cfg.student.mapping.t1,
                t2=cfg.student.mapping.t2,
                p=cfg.student.mapping.p,
            )
            for stage in ("before", "after"):
                name = f"{grid_name}/{mapping_name}/{stage}"
                reports = []
                for rep in reps:
                    started = time.perf_counter()
                    if stage == "before":
                        model = rep.student(combo, mapping)
                    else:
                        model = rep.finetuned(combo, ft, mapping)
                    report = rep.test_report(
                        rep.cdssm_test_scores(model), name, started=started
                    )
                    reports.append(report)
                    per_seed.append((name, report))
                agg = _aggregate(name, reports, cfg)
                rows.append((name, agg))
                cells.append((name, agg))
    sweep = SweepResult(axis="mapping", cells=cells)
    return ProtocolResult("mapping-grid", rows, [sweep], per_seed)


def protocol_theta_sweep(cfg: RunConfig, workspace: Path | None = None) -> ProtocolResult:
    """Fine-tuning comparison: hard and soft baselines plus the theta grid,
    all from the same student."""
    reps = _replicates(cfg, workspace)
    combo = tuple(cfg.annotator.kinds)
    rows: list[tuple[str, MetricsReport]] = []
    per_seed: list[tuple[str, MetricsReport]] = []
    theta_cells = []

    modes: list[tuple[str, FinetuneConfig]] = [
        ("hard", FinetuneConfig(mode="hard-baseline", theta=cfg.finetune.theta)),
        ("soft", FinetuneConfig(mode="soft-baseline", theta=cfg.finetune.theta)),
    ]
    for theta in cfg.protocol.thetas:
        modes.append((f"theta={theta}", FinetuneConfig(mode="label-aware", theta=float(theta))))

    for name, ft in modes:
        reports = []
        for rep in reps:
            started = time.perf_counter()
            model = rep.finetuned(combo, ft)
            report = rep.test_report(rep.cdssm_test_scores(model), name, started=started)
            report.tags["mode"] = ft.mode
            report.tags["theta"] = ft.theta
            reports.append(report)
            per_seed.append((name, report))
        agg = _aggregate(name, reports, cfg)
        agg.tags["mode"] = ft.mode
        agg.tags["theta"] = ft.theta
        rows.append((name, agg))
        if name.startswith("theta="):
            theta_cells.append((float(ft.theta), agg))
    sweep = SweepResult(axis="theta", cells=theta_cells)
    return ProtocolResult("theta-sweep", rows, [sweep], per_seed)


def protocol_rho_sweep(cfg: RunConfig, workspace: Path | None = None) -> ProtocolResult:
    """Data-efficiency sweep: labeled-only baseline and the full pipeline,
    trained on rho-subsampled labeled data for each grid point.

    The labeled branch uses every replicate; the pipeline branch uses
    `rho_pipeline_seeds` replicates except at `rho_focus`, which gets the
    full replicate count for the data-efficiency comparison.
    """
    reps = _replicates(cfg, workspace)
    combo = tuple(cfg.annotator.kinds)
    rows: list[tuple[str, MetricsReport]] = []
    per_seed: list[tuple[str, MetricsReport]] = []
    labeled_cells = []
    pipeline_cells = []

    for rho in cfg.protocol.rhos:
        rho = float(rho)
        labeled_reports = []
        for rep in reps:
            started = time.perf_counter()
            model = rep.baseline("labeled", rho=rho)
            subset_size = rep.encoded_subset(rho)[2]
            report = rep.test_report(
                rep.cdssm_test_scores(model), f"labeled/rho={rho}", labeled_train=subset_size,
                started=started,
            )
            report.tags["branch"] = "labeled"
            report.tags["rho"] = rho
            labeled_reports.append(report)
            per_seed.append((f"labeled/rho={rho}", report))
        agg = _aggregate(f"labeled/rho={rho}", labeled_reports, cfg)
        agg.tags.update({"branch": "labeled", "rho": rho})
        rows.append((f"labeled/rho={rho}", agg))
        labeled_cells.append((rho, agg))

        n_pipeline = cfg.protocol.n_seeds if rho == cfg.protocol.rho_focus else cfg.protocol.rho_pipeline_seeds
        pipeline_reports = []
        for rep in reps[:n_pipeline]:
            started = time.perf_counter()
            model = rep.finetuned(combo, rho=rho)
            subset_size = rep.encoded_subset(rho)[2]
            report = rep.test_report(
                rep.cdssm_test_scores(model), f"pipeline/rho={rho}", labeled_train=subset_size,
                started=started,
            )
            report.tags["branch"] = "pipeline"
            report.tags["rho"] = rho
            pipeline_reports.append(report)
            per_seed.append((f"pipeline/rho={rho}", report))
        agg = _aggregate(f"pipeline/rho={rho}", pipeline_reports, cfg)
        agg.tags.update({"branch": "pipeline", "rho": rho})
        rows.append((f"pipeline/rho={rho}", agg))
        pipeline_cells.append((rho, agg))

    sweeps = [
        SweepResult(axis="rho", cells=labeled_cells),
        SweepResult(axis="rho", cells=pipeline_cells),
    ]
    return ProtocolResult("rho-sweep", rows, sweeps, per_seed)


def run_protocol(
    name: str,
    cfg: RunConfig,
    out_dir: str | Path,
    workspace: str | Path | None = None,
) -> ProtocolResult:
    runners = {
        "baselines": protocol_baselines,
        "mapping-grid": protocol_mapping_grid,
        "theta-sweep": protocol_theta_sweep,
        "rho-sweep": protocol_rho_sweep,
    }
    if name not in runners:
        raise ConfigError(f"unknown protocol {name!r}; expected one of {PROTOCOL_NAMES}")
    workspace = Path(workspace) if workspace is not None else Path(out_dir)
    result = runners[name](cfg, workspace)
    _write_outputs(Path(out_dir), result, cfg)
    return result


# ---------------------------------------------------------------------------
# The four-step pipeline as a single run


def run_pipeline(cfg: RunConfig, out_dir: str | Path) -> dict:
    """Generate data, train annotators, score, train and fine-tune the
    student, evaluate, and write every artifact under `out_dir`."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    config_digest = write_resolved_config(cfg, out)

    rep = Replicate(cfg, 0, cache_dir=None)
    data = rep.data()

    data_dir = out / "data"
    save_dataset(data_dir / "labeled.tsv", data["pool"], "labeled")
    save_dataset(data_dir / "test.tsv", data["test"], "labeled")
    save_dataset(data_dir / "unlabeled.tsv", data["corpus"].unlabeled, "unlabeled")
    save_dataset(data_dir / "clicked.tsv", data["corpus"].clicked, "clicked")

    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    vocab_path = ckpt_dir / "vocab.tsv"
    rep.vocab().save(vocab_path)

    combo = tuple(cfg.annotator.kinds)
    annotators = rep.annotators(combo)
    for name, annotator in zip(combo, annotators):
        if isinstance(annotator, GbdtAnnotator):
            save_gbdt(ckpt_dir / f"annotator_{name}.txt", annotator.model)
        else:
            save_checkpoint(
                ckpt_dir / f"annotator_{name}.ckpt",
                annotator.model.to_checkpoint(str(vocab_path), config_digest),
            )

    scored_dir = out / "scored"
    scored_labeled = score_dataset(annotators, data["train"], rep.encoded("train"))
    scored_unlabeled = score_dataset(annotators, data["corpus"].unlabeled, rep.encoded("unlabeled"))
    save_scored(scored_dir / "labeled_scored.tsv", scored_labeled, "labeled")
    save_scored(scored_dir / "unlabeled_scored.tsv", scored_unlabeled, "unlabeled")

    student = rep.student(combo)
    save_checkpoint(
        ckpt_dir / "student.ckpt", student.to_checkpoint(str(vocab_path), config_digest)
    )
    tuned = rep.finetuned(combo)
    save_checkpoint(
        ckpt_dir / "student_ft.ckpt", tuned.to_checkpoint(str(vocab_path), config_digest)
    )

    rows = []
    for row, model in (("cdssm-student", student), ("cdssm-ft", tuned)):
        rows.append((row, rep.test_report(rep.cdssm_test_scores(model), row)))
    annotator_scores = score_encoded(annotators, rep.encoded("test"))
    rows.append(("annotator-ensemble", rep.test_report(annotator_scores, "annotator-ensemble")))
    result = ProtocolResult("pipeline", rows, [], [])
    _write_outputs(out, result, cfg)
    return {
        "out_dir": str(out),
        "config_hash": config_digest,
        "rows": {name: report.to_dict() for name, report in rows},
        "wall_clock_sec": time.perf_counter() - started,
    }
