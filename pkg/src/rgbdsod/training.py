"""Losses, learning-rate schedule, training loop and checkpoints."""

from __future__ import annotations

import json
import logging
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional

import torch
import torch.nn as nn

from .config import RunConfig, from_dict, validate_config
from .data import RGBDDataset, collate
from .model import RGBDSaliencyNet, build_variant

log = logging.getLogger(__name__)

EPS = 1e-7
DETERMINISTIC_ENV = "RGBDSOD_DETERMINISTIC"
# keys that change the parameter set; a checkpoint only loads into a matching graph
ARCH_KEYS = ("input_size", "patch_size", "embed_dim", "depths", "num_heads", "window_size",
             "mlp_ratio", "cmi_stages", "cmi_blocks", "decoder_width", "variant")


class NonFiniteLossError(RuntimeError):
    def __init__(self, batch_ids, step: int):
        self.batch_ids = list(batch_ids)
        self.step = step
        super().__init__(f"non-finite loss at step {step} on batch {self.batch_ids}")


class CheckpointError(RuntimeError):
    pass


@dataclass
class LossBreakdown:
    L_s: torch.Tensor
    L_e: torch.Tensor
    L: torch.Tensor

    def as_floats(self) -> dict[str, float]:
        return {"L_s": self.L_s.item(), "L_e": self.L_e.item(), "L": self.L.item()}


def bce_loss(pred: torch.Tensor, target: torch.Tensor, eps: float = EPS) -> torch.Tensor:
    """Pixel-mean binary cross-entropy with ``target`` as the label."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    if target.numel() and (target.min() < 0 or target.max() > 1):
        raise ValueError("target values must lie in [0, 1]")
    p = pred.clamp(eps, 1 - eps)
    return -(target * torch.log(p) + (1 - target) * torch.log(1 - p)).mean()


def total_loss(s: torch.Tensor, e: Optional[torch.Tensor], gt: torch.Tensor,
               edge: torch.Tensor, variant: str = "full") -> LossBreakdown:
    l_s = bce_loss(s, gt)
    if variant == "no_edge" or e is None:
        l_e = torch.zeros((), dtype=l_s.dtype, device=l_s.device)
        return LossBreakdown(l_s, l_e, l_s)
    l_e = bce_loss(e, edge)
    return LossBreakdown(l_s, l_e, l_s + l_e)


def lr_schedule(epoch: int, cfg: RunConfig) -> float:
    return cfg.lr * cfg.lr_decay_gamma ** (epoch // cfg.lr_decay_every_epochs)


def deterministic_mode() -> bool:
    return os.environ.get(DETERMINISTIC_ENV, "").lower() in ("1", "true", "yes", "on")


def set_deterministic(enabled: bool = True) -> None:
    if enabled:
        torch.use_deterministic_algorithms(True)
        torch.set_num_threads(1)


# --------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    parameters: dict[str, torch.Tensor]
    config: RunConfig
    epoch: int
    rng_state: Optional[torch.Tensor] = None
    optimizer: Optional[dict] = None
    step: int = 0
    best_val_mae: Optional[float] = None

    def model(self) -> RGBDSaliencyNet:
        m = build_variant(self.config)
        m.load_state_dict(self.parameters)
        return m


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "parameters": ckpt.parameters,
        "config": ckpt.config.to_dict(),
        "epoch": ckpt.epoch,
        "step": ckpt.step,
        "rng_state": ckpt.rng_state,
        "optimizer": ckpt.optimizer,
        "best_val_mae": ckpt.best_val_mae,
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)
    return path


def config_mismatch(a: RunConfig, b: RunConfig) -> list[str]:
    da, db = a.to_dict(), b.to_dict()
    return [k for k in ARCH_KEYS if da[k] != db[k]]


def load_checkpoint(path: str | Path, expect: Optional[RunConfig] = None,
                    allow_mismatch: bool = False) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
        cfg = validate_config(from_dict(payload["config"]))
        ckpt = Checkpoint(
            parameters=payload["parameters"], config=cfg, epoch=int(payload["epoch"]),
            rng_state=payload.get("rng_state"), optimizer=payload.get("optimizer"),
            step=int(payload.get("step", 0)), best_val_mae=payload.get("best_val_mae"))
    except CheckpointError:
        raise
    except Exception as exc:  # torch raises assorted errors for damaged files
        raise CheckpointError(f"corrupted checkpoint {path}: {exc}") from exc
    if expect is not None and not allow_mismatch:
        diff = config_mismatch(expect, cfg)
        if diff:
            raise CheckpointError(f"checkpoint {path} config mismatch on: {', '.join(diff)}")
    return ckpt


# --------------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    final: Checkpoint
    best: Optional[Checkpoint]
    records: list[dict[str, Any]] = field(default_factory=list)
    val_records: list[dict[str, Any]] = field(default_factory=list)


def batch_order(n: int, seed: int, epoch: int) -> list[int]:
    g = torch.Generator().manual_seed(seed * 100003 + epoch)
    return torch.randperm(n, generator=g).tolist()


@torch.no_grad()
def dataset_mae(model: nn.Module, dataset, batch_size: int = 8) -> float:
    """Mean per-image MAE at model resolution."""
    was_training = model.training
    model.eval()
    total, count = 0.0, 0
    for start in range(0, len(dataset), batch_size):
        b = collate([dataset[i] for i in range(start, min(start + batch_size, len(dataset)))])
        s = model(b["rgb"], b["depth"])["saliency"]
        total += (s - b["gt"]).abs().mean(dim=(1, 2, 3)).sum().item()
        count += s.shape[0]
    model.train(was_training)
    return total / max(count, 1)


def _snapshot(model: nn.Module, cfg: RunConfig, epoch: int, step: int,
              opt: Optional[torch.optim.Optimizer], best: Optional[float]) -> Checkpoint:
    return Checkpoint(
        parameters={k: v.detach().clone() for k, v in model.state_dict().items()},
        config=cfg, epoch=epoch, rng_state=torch.get_rng_state(),
        optimizer=opt.state_dict() if opt is not None else None, step=step,
        best_val_mae=best)


def train(cfg: RunConfig, train_set, val_set=None, run_dir: str | Path | None = None,
          resume: Optional[Checkpoint] = None,
          on_step: Optional[Callable[[dict], None]] = None) -> TrainResult:
    """Adam on L = L_s + L_e with a step-decayed learning rate.

    ``train_set``/``val_set`` are RGBDDataset-like (indexable, yielding ModelInput).
    With ``run_dir`` the step log goes to ``train_log.jsonl`` and ``last.pt`` /
    ``best.pt`` are kept current. ``resume`` continues from its epoch counter.
    """
    validate_config(cfg)
    if len(train_set) == 0:
        raise ValueError("training set is empty")
    if deterministic_mode():
        set_deterministic(True)

    model = build_variant(cfg)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    start_epoch, step, best_mae = 0, 0, math.inf
    if resume is not None:
        diff = config_mismatch(cfg, resume.config)
        if diff:
            raise CheckpointError(f"cannot resume: config mismatch on {', '.join(diff)}")
        model.load_state_dict(resume.parameters)
        if resume.optimizer is not None:
            opt.load_state_dict(resume.optimizer)
        if resume.rng_state is not None:
            torch.set_rng_state(resume.rng_state)
        start_epoch, step = resume.epoch, resume.step
        if resume.best_val_mae is not None:
            best_mae = resume.best_val_mae
    else:
        torch.manual_seed(cfg.seed)

    run_dir = Path(run_dir) if run_dir is not None else None
    log_file = None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        log_file = open(run_dir / "train_log.jsonl", "a" if resume is not None else "w")

    records, val_records = [], []
    best_ckpt: Optional[Checkpoint] = None
    t0 = time.perf_counter()
    done = start_epoch
    model.train()
    try:
        for epoch in range(start_epoch, cfg.epochs):
            lr = lr_schedule(epoch, cfg)
            for group in opt.param_groups:
                group["lr"] = lr
            order = batch_order(len(train_set), cfg.seed, epoch)
            for start in range(0, len(order), cfg.batch_size):
                if cfg.max_steps is not None and step >= cfg.max_steps:
                    break
                batch = collate([train_set[i] for i in order[start:start + cfg.batch_size]])
                out = model(batch["rgb"], batch["depth"])
                losses = total_loss(out["saliency"], out["edge"], batch["gt"], batch["edge"],
                                    cfg.variant)
                if not torch.isfinite(losses.L):
                    raise NonFiniteLossError(batch["id"], step)
                opt.zero_grad(set_to_none=True)
                losses.L.backward()
                if cfg.grad_clip is not None:
                    torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
                opt.step()
                step += 1
                rec = {"epoch": epoch, "step": step, **losses.as_floats(), "lr": lr,
                       "seconds": round(time.perf_counter() - t0, 4)}
                records.append(rec)
                if log_file is not None:
                    log_file.write(json.dumps(rec) + "\n")
                if on_step is not None:
                    on_step(rec)

            done = epoch + 1
            if val_set is not None and len(val_set):
                mae = dataset_mae(model, val_set)
                vrec = {"epoch": epoch, "step": step, "val_mae": mae}
                val_records.append(vrec)
                log.info("epoch %d  L=%.4f  val_mae=%.4f", epoch, records[-1]["L"] if records
                         else float("nan"), mae)
                if mae < best_mae:
                    best_mae = mae
                    best_ckpt = _snapshot(model, cfg, done, step, None, best_mae)
                    if run_dir is not None:
                        save_checkpoint(best_ckpt, run_dir / "best.pt")
            if run_dir is not None:
                save_checkpoint(_snapshot(model, cfg, done, step, opt,
                                          best_mae if math.isfinite(best_mae) else None),
                                run_dir / "last.pt")
                if val_records:
                    with open(run_dir / "val_log.jsonl", "a") as fh:
                        fh.write(json.dumps(val_records[-1]) + "\n")
            if cfg.max_steps is not None and step >= cfg.max_steps:
                break
    finally:
        if log_file is not None:
            log_file.close()

    final = _snapshot(model, cfg, done, step, opt, best_mae if math.isfinite(best_mae) else None)
    return TrainResult(final=final, best=best_ckpt, records=records, val_records=val_records)


def load_dataset(root: str | Path, cfg: RunConfig) -> RGBDDataset:
    return RGBDDataset(root, cfg.input_size)
