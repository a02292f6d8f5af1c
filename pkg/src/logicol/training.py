"""Training loop: sample a batch, embed, joint loss, backprop, Adam step."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .batching import BatchSampler
from .data import Dataset
from .encoder import (AdamState, EncoderModel, HashConfig, backward_rows, embed_many,
                      optimizer_step, save_checkpoint)
from .losses import LossConfig, joint_loss

log = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "step", "supcon", "exclusion", "subset", "joint",
               "n_queries", "n_docs", "n_subset_edges", "n_exclusion_edges", "fallback_embeddings")

# (dataset, strategy, lambda_e, lambda_s) per ablation variant
VARIANTS = {
    "SupCon": ("baseline", "random", 0.0, 0.0),
    "NoGroupNoConstraints": ("variants", "random", 0.0, 0.0),
    "NoMixNoConstraints": ("variants", "grouped", 0.0, 0.0),
    "NoConstraints": ("variants", "mixed", 0.0, 0.0),
    "Full": ("variants", "mixed", 0.1, 0.1),
}


@dataclass
class TrainConfig:
    data_dir: str = "data"
    dataset: str = "variants"
    variant: str | None = None
    strategy: str = "mixed"
    alpha: float = 0.5
    batch_size: int = 16
    epochs: int = 10
    lr: float = 1e-2
    dim: int = 64
    n_features: int = 2 ** 15
    init_scale: float = 0.1
    tau: float = 0.05
    gamma_e: float = 0.2
    gamma_s: float = 0.2
    lambda_e: float = 0.1
    lambda_s: float = 0.1
    eps: float = 1e-8
    dist_tau: float | None = None
    subset_reduction: str = "sum"
    seed: int = 0
    init_seed: int | None = None
    batch_seed: int | None = None
    checkpoint_every: int = 0
    eval_split: str = "test"
    ks: list = field(default_factory=lambda: [5, 20, 100, 1000])
    corr_k: int = 100

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        """Build a config; a ``variant`` key supplies dataset, strategy and
        loss weights, and any of those given explicitly override it."""
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        values = {}
        variant = d.get("variant")
        if variant is not None:
            if variant not in VARIANTS:
                raise ValueError(f"unknown variant {variant!r}; choose from {sorted(VARIANTS)}")
            ds, strategy, le, ls = VARIANTS[variant]
            values.update(dataset=ds, strategy=strategy, lambda_e=le, lambda_s=ls)
        values.update(d)
        cfg = cls(**values)
        cfg.ks = list(cfg.ks)
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def loss_config(self) -> LossConfig:
        return LossConfig(tau=self.tau, gamma_e=self.gamma_e, gamma_s=self.gamma_s,
                          lambda_e=self.lambda_e, lambda_s=self.lambda_s, eps=self.eps,
                          dist_tau=self.dist_tau, subset_reduction=self.subset_reduction)

    @property
    def seeds(self) -> dict:
        return {
            "init": self.seed if self.init_seed is None else self.init_seed,
            "batching": self.seed if self.batch_seed is None else self.batch_seed,
        }


@dataclass
class TrainResult:
    model: EncoderModel
    log_rows: list
    epoch_means: list
    fallback_batches: int


def train(config: TrainConfig, dataset: Dataset, out_dir: Path | None = None) -> TrainResult:
    loss_cfg = config.loss_config
    seeds = config.seeds
    model = EncoderModel.init(config.dim, HashConfig(n_features=config.n_features),
                              seed=seeds["init"], scale=config.init_scale)
    opt = AdamState(lr=config.lr)
    sampler = BatchSampler(dataset, config.strategy, config.batch_size, config.alpha,
                           seeds["batching"])
    qfeat = [model.featurize(q.text) for q in dataset.queries]
    dfeat = [model.featurize(d.text) for d in dataset.documents]

    log_rows, epoch_means = [], []
    step = 0
    for epoch in range(1, config.epochs + 1):
        acc = []
        for _ in range(sampler.steps_per_epoch):
            step += 1
            batch = sampler.sample()
            xs = [qfeat[i] for i in batch.queries] + [dfeat[j] for j in batch.documents]
            Y, norms = embed_many(model, xs)
            nq = len(batch.queries)
            parts, dQ, dD = joint_loss(Y[:nq], Y[nq:], batch.positives, batch.edges, loss_cfg)
            grad_rows, grad = backward_rows(model, xs, Y, norms, np.vstack([dQ, dD]))
            optimizer_step(opt, model, grad, grad_rows)
            n_sub = sum(e.kind.value == "subset" for e in batch.edges)
            row = {
                "epoch": epoch, "step": step,
                **{k: parts[k] for k in ("supcon", "exclusion", "subset", "joint")},
                "n_queries": nq, "n_docs": len(batch.documents),
                "n_subset_edges": n_sub, "n_exclusion_edges": len(batch.edges) - n_sub,
                "fallback_embeddings": int(np.sum(norms == 0.0)),
            }
            log_rows.append(row)
            acc.append([parts["supcon"] / nq, parts["exclusion"], parts["subset"], parts["joint"]])
        mean = np.mean(acc, axis=0)
        epoch_means.append({"epoch": epoch, "supcon_per_query": float(mean[0]),
                            "exclusion": float(mean[1]), "subset": float(mean[2]),
                            "joint": float(mean[3])})
        log.info("epoch %d: %s", epoch, epoch_means[-1])
        if out_dir is not None and config.checkpoint_every and epoch % config.checkpoint_every == 0:
            save_checkpoint(model, Path(out_dir) / f"checkpoint_epoch{epoch}.ckpt")
    return TrainResult(model, log_rows, epoch_means, sampler.fallbacks)


def write_log(rows: list, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LOG_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
