"""Experiment driver: train one ablation variant end to end and record a
manifest from which every output can be regenerated byte for byte."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass
from pathlib import Path

from .data import (ATOMS_FILE, BASELINE_QUERIES_FILE, DOCUMENTS_FILE, QUERIES_FILE, Dataset,
                   load_dataset)
from .encoder import save_checkpoint
from .logic import Template
from .retrieval import build_index, evaluate, save_index
from .training import VARIANTS, TrainConfig, train, write_log

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1
CHECKPOINT_FILE = "model.ckpt"
INDEX_FILE = "index.bin"
LOG_FILE = "train_log.csv"
REPORT_FILE = "report.json"
MANIFEST_FILE = "manifest.json"
OUTPUT_FILES = (CHECKPOINT_FILE, INDEX_FILE, LOG_FILE, REPORT_FILE)


class IntegrityError(RuntimeError):
    """A dataset or manifest failed verification."""


@dataclass(frozen=True)
class AblationSpec:
    variant: str

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {sorted(VARIANTS)}")

    @property
    def dataset(self) -> str:
        return VARIANTS[self.variant][0]

    @property
    def strategy(self) -> str:
        return VARIANTS[self.variant][1]

    @property
    def constraints(self) -> tuple:
        """``(lambda_e, lambda_s)``."""
        return VARIANTS[self.variant][2:]

    def config(self, **overrides) -> TrainConfig:
        return TrainConfig.from_dict({"variant": self.variant, **overrides})


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def code_version() -> str:
    """Package version plus a digest of the package sources."""
    from . import __version__

    h = hashlib.sha256()
    root = Path(__file__).parent
    for p in sorted(root.glob("*.py")):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return f"{__version__}+{h.hexdigest()[:12]}"


def dataset_checksums(data_dir) -> dict:
    data_dir = Path(data_dir)
    names = (DOCUMENTS_FILE, ATOMS_FILE, QUERIES_FILE, BASELINE_QUERIES_FILE)
    return {n: sha256_file(data_dir / n) for n in names if (data_dir / n).exists()}


def load_checked(data_dir, queries_file: str = QUERIES_FILE) -> Dataset:
    """Load a dataset and refuse it if any integrity check fails."""
    path = Path(data_dir) / queries_file
    if not path.exists():
        raise IntegrityError(f"{path} not found")
    ds = load_dataset(data_dir, queries_file)
    if ds.integrity_warnings:
        raise IntegrityError(
            f"{queries_file}: {ds.integrity_warnings} queries have gt_docs that disagree "
            "with their derived ground truth"
        )
    ids = [d.id for d in ds.documents]
    if len(set(ids)) != len(ids):
        raise IntegrityError(f"{DOCUMENTS_FILE}: duplicate document ids")
    known = set(ids)
    for a in ds.atoms.values():
        if not a.doc_ids <= known:
            raise IntegrityError(f"{ATOMS_FILE}: atom {a.id} references unknown documents")
    return ds


def _write_atomic(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def run_experiment(config: TrainConfig, out_dir, eval_dataset: Dataset | None = None) -> dict:
    """Train, checkpoint, index, and evaluate one configuration.

    Evaluation always uses the variants query file, so variants trained on
    the baseline queries are scored on the same test split. Returns the
    manifest dict (also written to ``out_dir/manifest.json``).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    timings = {}
    t0 = time.perf_counter()
    eval_ds = eval_dataset if eval_dataset is not None else load_checked(config.data_dir)
    if config.dataset == "baseline":
        train_ds = load_checked(config.data_dir, BASELINE_QUERIES_FILE)
    elif config.dataset == "variants":
        train_ds = eval_ds
    else:
        raise ValueError(f"unknown dataset {config.dataset!r}")
    timings["load_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    result = train(config, train_ds, out)
    timings["train_s"] = time.perf_counter() - t0

    save_checkpoint(result.model, out / CHECKPOINT_FILE)
    write_log(result.log_rows, out / LOG_FILE)
    t0 = time.perf_counter()
    index = build_index(result.model, eval_ds.documents)
    save_index(index, out / INDEX_FILE)
    report = evaluate(result.model, eval_ds, config.eval_split, config.ks, config.corr_k, index)
    report["variant"] = config.variant
    report["fallback_batches"] = result.fallback_batches
    _write_atomic(out / REPORT_FILE, _dump_json(report))
    timings["eval_s"] = time.perf_counter() - t0

    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "config": config.to_dict(),
        "seeds": config.seeds,
        "dataset_checksums": dataset_checksums(config.data_dir),
        "code_version": code_version(),
        "epoch_losses": result.epoch_means,
        "timings": timings,
        "outputs": {name: sha256_file(out / name) for name in OUTPUT_FILES},
    }
    _write_atomic(out / MANIFEST_FILE, _dump_json(manifest))
    log.info("run finished in %.1fs: %s", sum(timings.values()), out)
    return manifest


def verify_outputs(manifest: dict, out_dir) -> dict:
    """Compare files in ``out_dir`` against the manifest checksums."""
    out = Path(out_dir)
    return {name: (out / name).exists() and sha256_file(out / name) == digest
            for name, digest in manifest["outputs"].items()}


def reproduce(manifest_path, out_dir) -> dict:
    """Re-run the configuration recorded in a manifest and check each output.

    Raises IntegrityError if the dataset on disk no longer matches the
    recorded checksums; otherwise returns ``{file: bool}``.
    """
    manifest = json.loads(Path(manifest_path).read_text())
    config = TrainConfig.from_dict({k: v for k, v in manifest["config"].items()})
    current = dataset_checksums(config.data_dir)
    if current != manifest["dataset_checksums"]:
        changed = sorted(k for k in set(current) | set(manifest["dataset_checksums"])
                         if current.get(k) != manifest["dataset_checksums"].get(k))
        raise IntegrityError(f"dataset files changed since the run: {changed}")
    if manifest["code_version"] != code_version():
        log.warning("code version differs: recorded %s, running %s",
                    manifest["code_version"], code_version())
    run_experiment(config, out_dir)
    return verify_outputs(manifest, out_dir)


SWEEP_FILE = "alpha_sweep.csv"
GROUP_SIM_FILE = "alpha_group_sim.csv"


def alpha_sweep(values, base_config: TrainConfig, out_dir) -> list:
    """One Full-style mixed-batching run per alpha, shared seeds.

    Writes one CSV row per alpha with overall and per-template recalls,
    the violation rate and mean AvgGroupSim, and a long-format CSV of the
    per-group AvgGroupSim. Returns the rows of the first file.
    """
    values = [float(a) for a in values]
    bad = [a for a in values if not 0.0 <= a <= 1.0]
    if bad:
        raise ValueError(f"alpha values outside [0, 1]: {bad}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    eval_ds = load_checked(base_config.data_dir)
    rows, group_rows = [], []
    for alpha in values:
        cfg = TrainConfig.from_dict({**base_config.to_dict(), "strategy": "mixed", "alpha": alpha})
        run_dir = out / f"alpha_{alpha:g}"
        run_experiment(cfg, run_dir, eval_dataset=eval_ds)
        report = json.loads((run_dir / REPORT_FILE).read_text())
        metrics = ["P@1"] + [f"R@{k}" for k in report["ks"]]
        row = {"alpha": alpha}
        row.update({f"overall_{m}": report["overall"].get(m) for m in metrics})
        for t in Template:
            if t.value in report["per_template"]:
                row.update({f"{t.name}_{m}": report["per_template"][t.value][m] for m in metrics})
        row["violation_rate"] = report["violation"]["rate"]
        row["avg_group_sim"] = report["avg_group_sim"]["mean"]
        rows.append(row)
        for gid, sim in sorted(report["avg_group_sim"]["per_group"].items()):
            group_rows.append({"alpha": alpha, "group": gid, "avg_group_sim": sim})
    _write_csv(out / SWEEP_FILE, rows)
    _write_csv(out / GROUP_SIM_FILE, group_rows)
    return rows


def _write_csv(path: Path, rows: list) -> None:
    cols = []
    for r in rows:
        cols.extend(k for k in r if k not in cols)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
