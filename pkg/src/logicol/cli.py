"""Command-line entry point: ``logicol synthesize|train|eval|analyze|sweep|reproduce``.

Exit codes: 0 success, 1 bad input or failed run, 2 usage error,
3 failed integrity check (including a non-reproducing manifest).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from .data import (BASELINE_QUERIES_FILE, QUERIES_FILE, DatasetFormatError, SynthConfig,
                   save_dataset, synthesize_dataset)
from .encoder import CheckpointError, load_checkpoint
from .experiment import (MANIFEST_FILE, IntegrityError, alpha_sweep, load_checked, reproduce,
                         run_experiment)
from .logic import DatasetIntegrityError
from .retrieval import (DEFAULT_KS, IndexVersionError, and_not_pairs, build_index, evaluate,
                        similarity_correlation)
from .training import TrainConfig

log = logging.getLogger("logicol")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_INTEGRITY = 0, 1, 2, 3


def _read_config(path) -> dict:
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(cfg, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    return cfg


def _parse_ks(text: str) -> list:
    try:
        ks = [int(k) for k in text.split(",") if k.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad k list {text!r}") from None
    if not ks or min(ks) < 1:
        raise argparse.ArgumentTypeError("k values must be positive integers")
    return ks


def _parse_floats(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad value list {text!r}") from None


def _write_json(path, obj) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _train_config(args) -> TrainConfig:
    raw = _read_config(args.config)
    if args.seed is not None:
        raw["seed"] = args.seed
    if getattr(args, "data", None) is not None:
        raw["data_dir"] = args.data
    return TrainConfig.from_dict(raw)


# -- subcommands -------------------------------------------------------------


def cmd_synthesize(args) -> int:
    raw = _read_config(args.config)
    if args.seed is not None:
        raw["seed"] = args.seed
    config = SynthConfig.from_dict(raw)
    variants, baseline, report = synthesize_dataset(config)
    out = Path(args.out)
    save_dataset(variants, out, QUERIES_FILE)
    save_dataset(baseline, out, BASELINE_QUERIES_FILE)
    # re-read what was written; both files must pass the load-time checks
    for name, ds in ((QUERIES_FILE, variants), (BASELINE_QUERIES_FILE, baseline)):
        if load_checked(out, name) != ds:
            raise IntegrityError(f"{name}: written dataset does not round-trip")
    report["config"] = {**config.__dict__, "split_fractions": list(config.split_fractions)}
    _write_json(out / "stats.json", report)
    total = report["variants"]["Total"]
    print(f"wrote {report['n_documents']} documents, {report['n_atoms_retained']} atoms, "
          f"{sum(total.values())} queries to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    config = _train_config(args)
    manifest = run_experiment(config, args.out)
    last = manifest["epoch_losses"][-1] if manifest["epoch_losses"] else {}
    print(f"trained {config.variant or 'custom'} for {config.epochs} epochs; "
          f"final joint loss {last.get('joint', float('nan')):.4f}; outputs in {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = load_checkpoint(args.model)
    ds = load_checked(args.data)
    report = evaluate(model, ds, args.split, args.ks, args.corr_k)
    _write_json(args.out, report)
    ov = report["overall"]
    recalls = ", ".join(f"{k} {v:.4f}" for k, v in ov.items() if k.startswith("R@"))
    print(f"{ov.get('n', 0)} {args.split} queries, ks={report['ks']}: P@1 {ov.get('P@1', 0):.4f}, {recalls}")
    return EXIT_OK


def _read_pairs(path, ds) -> list:
    """Query-id pairs from a CSV/TSV with two columns (header optional)."""
    by_id = {q.id: i for i, q in enumerate(ds.queries)}
    pairs = []
    text = Path(path).read_text()
    dialect = "excel-tab" if "\t" in text.splitlines()[0] else "excel"
    for lineno, row in enumerate(csv.reader(text.splitlines(), dialect=dialect), 1):
        if not row or row[0].startswith("#"):
            continue
        if len(row) < 2:
            raise DatasetFormatError(f"{path}:{lineno}: expected two query ids")
        a, b = row[0].strip(), row[1].strip()
        if lineno == 1 and (a not in by_id or b not in by_id):
            continue  # header
        for q in (a, b):
            if q not in by_id:
                raise DatasetFormatError(f"{path}:{lineno}: unknown query id {q!r}")
        pairs.append((by_id[a], by_id[b]))
    return pairs


def cmd_analyze(args) -> int:
    model = load_checkpoint(args.model)
    ds = load_checked(args.data)
    pairs = _read_pairs(args.pairs, ds) if args.pairs else and_not_pairs(ds, args.split)
    index = build_index(model, ds.documents)
    Y = model.encode([q.text for q in ds.queries])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    cols = ("q1", "q2", "template1", "template2", "pearson_r", "topk_overlap", "pool_size", "k")
    rs = []
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for a, b in pairs:
            rec = similarity_correlation(index, Y[a], Y[b], args.k)
            qa, qb = ds.queries[a], ds.queries[b]
            r = rec["pearson_r"]
            if r is not None:
                rs.append(r)
            w.writerow([qa.id, qb.id, qa.template.value, qb.template.value,
                        "" if r is None else repr(r), rec["topk_overlap"], rec["pool_size"], rec["k"]])
    mean = sum(rs) / len(rs) if rs else float("nan")
    print(f"{len(pairs)} pairs, mean pearson r {mean:.4f} ({len(pairs) - len(rs)} undefined) -> {out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    config = _train_config(args)
    rows = alpha_sweep(args.values, config, args.out)
    for r in rows:
        viol = "n/a" if r["violation_rate"] is None else f"{r['violation_rate']:.4f}"
        print(f"alpha {r['alpha']:.2f}: R@100 {r.get('overall_R@100', float('nan')):.4f} "
              f"violation {viol} AvgGroupSim {r['avg_group_sim']:.4f}")
    return EXIT_OK


def cmd_reproduce(args) -> int:
    manifest = Path(args.manifest)
    if manifest.is_dir():
        manifest = manifest / MANIFEST_FILE
    result = reproduce(manifest, args.out)
    for name, ok in result.items():
        print(f"{'identical' if ok else 'DIFFERS':9s} {name}")
    return EXIT_OK if all(result.values()) else EXIT_INTEGRITY


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="logicol",
                                description="Logically consistent dense retrieval on synthetic data.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synthesize", help="generate a synthetic corpus and query sets")
    s.add_argument("--config", help="JSON file with generator settings")
    s.add_argument("--out", required=True, help="output dataset directory")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_synthesize)

    s = sub.add_parser("train", help="train one configuration and evaluate it")
    s.add_argument("--config", help="JSON training config (may name a variant)")
    s.add_argument("--out", required=True, help="run directory")
    s.add_argument("--seed", type=int)
    s.add_argument("--data", help="dataset directory (overrides data_dir)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--ks", type=_parse_ks, default=list(DEFAULT_KS))
    s.add_argument("--split", default="test")
    s.add_argument("--corr-k", type=int, default=100)
    s.add_argument("--out", required=True, help="report JSON path")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("analyze", help="similarity analyses")
    asub = s.add_subparsers(dest="analysis", required=True)
    c = asub.add_parser("correlation", help="score correlation between query pairs")
    c.add_argument("--model", required=True)
    c.add_argument("--data", required=True)
    c.add_argument("--pairs", help="CSV of query-id pairs; default: AND/NOT pairs of --split")
    c.add_argument("--split", default="test")
    c.add_argument("--k", type=int, default=100)
    c.add_argument("--out", required=True, help="CSV path")
    c.set_defaults(func=cmd_analyze)

    s = sub.add_parser("sweep", help="sweep the mixed-batching alpha")
    s.add_argument("--config", help="JSON training config used for every point")
    s.add_argument("--values", type=_parse_floats, default=[0.0, 0.25, 0.5, 0.75, 1.0])
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--data")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("reproduce", help="re-run a manifest and compare outputs")
    s.add_argument("--manifest", required=True, help="manifest.json or its run directory")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_reproduce)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (IntegrityError, DatasetIntegrityError, CheckpointError, IndexVersionError) as exc:
        print(f"integrity check failed: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except (DatasetFormatError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
