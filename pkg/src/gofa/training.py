"""Optimization loop: AdamW with decoupled weight decay, global-norm
gradient clipping, cosine annealing with warm restarts, parameter freezing
by name prefix, and bit-exact checkpoint resume.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tensor, global_grad_norm
from .model import GofaModel

log = logging.getLogger("gofa")


class TrainingDivergedError(RuntimeError):
    """Raised when the loss turns NaN/Inf; carries a diagnostic dump path."""

    def __init__(self, message: str, dump_path: str | None = None):
        self.dump_path = dump_path
        super().__init__(message)


@dataclass
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 0.1
    betas: tuple[float, float] = (0.9, 0.95)
    eps: float = 1e-8
    grad_clip: float = 0.5
    batch_size: int = 8
    grad_accum: int = 1
    gate_lr_mult: float = 1.0  # escape hatch for tanh gates pinned at zero
    restarts: int = 2
    min_lr_fraction: float = 0.1
    freeze: tuple[str, ...] = ()
    seed: int = 0
    max_steps: int = 100
    checkpoint_every: int = 500
    log_every: int = 10
    debug_nan_checks: bool = False

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not 0 < self.min_lr_fraction <= 1:
            raise ValueError("min_lr_fraction must lie in (0, 1]")
        if self.grad_clip <= 0:
            raise ValueError("grad_clip must be positive")


def cosine_restart_lr(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Cosine annealing from lr to min_lr_fraction*lr within each cycle;
    with R restarts the run splits into R+1 equal cycles, so the schedule
    resets at 1/(R+1), 2/(R+1), ... of the run."""
    n_cycles = cfg.restarts + 1
    boundaries = [total_steps * i // n_cycles for i in range(n_cycles + 1)]
    for c in range(n_cycles):
        if boundaries[c] <= step < boundaries[c + 1] or (c == n_cycles - 1 and step >= boundaries[c + 1]):
            start, end = boundaries[c], boundaries[c + 1]
            length = max(end - start, 1)
            u = (step - start) / (length - 1) if length > 1 else 0.0
            u = min(u, 1.0)
            lo = cfg.lr * cfg.min_lr_fraction
            return lo + (cfg.lr - lo) * 0.5 * (1.0 + np.cos(np.pi * u))
    return cfg.lr * cfg.min_lr_fraction


def clip_gradients(params: list[Tensor], max_norm: float) -> float:
    """Scale all gradients so the global L2 norm is at most ``max_norm``;
    returns the pre-clip norm."""
    norm = global_grad_norm(params)
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        for t in params:
            if t.grad is not None:
                t.grad *= scale
    return norm


class AdamW:
    """Decoupled weight decay Adam with bias correction.

    Weight decay is skipped for rank-0/rank-1 parameters (gains, gates,
    biases). Frozen parameters (matched by name prefix) are never updated.
    """

    def __init__(self, named_params: dict[str, Tensor], cfg: TrainConfig):
        self.cfg = cfg
        self.named = dict(named_params)
        self.trainable = {
            name: t for name, t in self.named.items()
            if not any(name.startswith(p) for p in cfg.freeze)
        }
        self.m = {n: np.zeros_like(t.data) for n, t in self.trainable.items()}
        self.v = {n: np.zeros_like(t.data) for n, t in self.trainable.items()}
        self.step_count = 0
        self.lr_mult = {
            n: (cfg.gate_lr_mult if ".gate_" in n else 1.0) for n in self.trainable
        }

    def zero_grad(self) -> None:
        for t in self.named.values():
            t.zero_grad()

    def step(self, lr: float) -> None:
        self.step_count += 1
        b1, b2 = self.cfg.betas
        c1 = 1.0 - b1**self.step_count
        c2 = 1.0 - b2**self.step_count
        for name, t in self.trainable.items():
            g = t.grad
            if g is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + self.cfg.eps)
            if self.cfg.weight_decay and t.data.ndim >= 2:
                update = update + self.cfg.weight_decay * t.data
            t.data -= lr * self.lr_mult[name] * update

    def state_tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for name in self.trainable:
            out[f"opt.m.{name}"] = self.m[name]
            out[f"opt.v.{name}"] = self.v[name]
        out["opt.step"] = np.asarray([self.step_count], dtype=np.int64)
        return out

    def load_state_tensors(self, tensors: dict[str, np.ndarray]) -> None:
        for name in self.trainable:
            if f"opt.m.{name}" in tensors:
                self.m[name] = tensors[f"opt.m.{name}"].copy()
                self.v[name] = tensors[f"opt.v.{name}"].copy()
        if "opt.step" in tensors:
            self.step_count = int(tensors["opt.step"][0])


@dataclass
class TrainReport:
    steps: int
    losses: list[float] = field(default_factory=list)
    checkpoints: list[str] = field(default_factory=list)
    log_rows: list[dict] = field(default_factory=list)
    final_loss: float = float("nan")


def _micro_batches(batch: list, k: int) -> list[list]:
    size = (len(batch) + k - 1) // k
    return [batch[i : i + size] for i in range(0, len(batch), size)]


def train(
    model: GofaModel,
    corpus,
    cfg: TrainConfig,
    out_dir: str | Path | None = None,
    use_gnn: bool = True,
    start_step: int = 0,
    optimizer: AdamW | None = None,
    loss_log_path: str | Path | None = None,
) -> TrainReport:
    """Run ``cfg.max_steps`` optimization steps over ``corpus``.

    ``corpus`` is a sequence of TaskSamples; batches are drawn in a
    deterministic seeded shuffle, re-derivable at resume so a resumed run
    is bit-identical to an uninterrupted one.
    """
    samples = list(corpus)
    if not samples:
        raise ValueError("training corpus is empty")
    opt = optimizer if optimizer is not None else AdamW(model.parameters(), cfg)
    report = TrainReport(steps=cfg.max_steps)
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    log_file = None
    if loss_log_path is not None:
        log_file = open(loss_log_path, "a", encoding="utf-8")
        if start_step == 0:
            log_file.write("step,lr,loss,grad_norm,tokens_seen\n")
    tokens_seen = 0

    def batch_for_step(step: int) -> list:
        per_epoch = max(len(samples) // cfg.batch_size, 1)
        epoch = step // per_epoch
        slot = step % per_epoch
        order = np.random.default_rng((cfg.seed, epoch)).permutation(len(samples))
        picked = order[slot * cfg.batch_size : (slot + 1) * cfg.batch_size]
        if len(picked) == 0:
            picked = order[: cfg.batch_size]
        return [samples[i] for i in picked]

    # Replay token counters for an exact resume of the CSV log.
    for step in range(start_step):
        for s in batch_for_step(step):
            for t in s.targets:
                tokens_seen += len(model.target_ids(t.target_text))

    for step in range(start_step, cfg.max_steps):
        batch = batch_for_step(step)
        total_targets = sum(len(s.targets) for s in batch)
        opt.zero_grad()
        loss_value = 0.0
        for micro in _micro_batches(batch, cfg.grad_accum):
            loss, n_targets, n_tokens = model.forward_batch(micro, use_gnn=use_gnn)
            # Weight by target share so accumulation matches the full batch.
            scaled = loss * (n_targets / total_targets)
            scaled.backward()
            loss_value += scaled.item()
            tokens_seen += n_tokens
        if not np.isfinite(loss_value):
            dump = None
            if out_dir is not None:
                dump = str(out_dir / f"diverged_step_{step}.json")
                with open(dump, "w", encoding="utf-8") as fh:
                    json.dump(
                        {
                            "step": step,
                            "loss": loss_value,
                            "batch_targets": [
                                {"nog": t.nog, "y": t.target_text}
                                for s in batch
                                for t in s.targets
                            ],
                        },
                        fh,
                        indent=2,
                    )
            raise TrainingDivergedError(f"non-finite loss {loss_value} at step {step}", dump)
        grad_norm = clip_gradients(list(opt.trainable.values()), cfg.grad_clip)
        lr = cosine_restart_lr(step, cfg.max_steps, cfg)
        opt.step(lr)
        if cfg.debug_nan_checks:
            model.check_finite()
        report.losses.append(loss_value)
        if step % cfg.log_every == 0 or step == cfg.max_steps - 1:
            row = {
                "step": step,
                "lr": lr,
                "loss": loss_value,
                "grad_norm": grad_norm,
                "tokens_seen": tokens_seen,
            }
            report.log_rows.append(row)
            if log_file is not None:
                log_file.write(f"{step},{lr:.8g},{loss_value:.8g},{grad_norm:.8g},{tokens_seen}\n")
                log_file.flush()
            log.info("step %d lr %.3g loss %.4f grad_norm %.3f", step, lr, loss_value, grad_norm)
        if out_dir is not None and (
            (step + 1) % cfg.checkpoint_every == 0 or step == cfg.max_steps - 1
        ):
            path = out_dir / f"checkpoint_{step + 1:06d}.gofa"
            model.save(
                path,
                extra_tensors=opt.state_tensors(),
                extra_config={"train_step": step + 1, "train": train_config_dict(cfg)},
            )
            report.checkpoints.append(str(path))
    report.final_loss = report.losses[-1] if report.losses else float("nan")
    if log_file is not None:
        log_file.close()
    return report


def train_config_dict(cfg: TrainConfig) -> dict:
    return {
        "lr": cfg.lr,
        "weight_decay": cfg.weight_decay,
        "betas": list(cfg.betas),
        "eps": cfg.eps,
        "grad_clip": cfg.grad_clip,
        "batch_size": cfg.batch_size,
        "grad_accum": cfg.grad_accum,
        "gate_lr_mult": cfg.gate_lr_mult,
        "restarts": cfg.restarts,
        "min_lr_fraction": cfg.min_lr_fraction,
        "freeze": list(cfg.freeze),
        "seed": cfg.seed,
        "max_steps": cfg.max_steps,
        "checkpoint_every": cfg.checkpoint_every,
        "log_every": cfg.log_every,
    }


def train_config_from_dict(obj: dict) -> TrainConfig:
    obj = dict(obj)
    obj["betas"] = tuple(obj.get("betas", (0.9, 0.95)))
    obj["freeze"] = tuple(obj.get("freeze", ()))
    return TrainConfig(**obj)


def autoencode_pretrain(model: GofaModel, texts: list[str], cfg: TrainConfig) -> TrainReport:
    """Optimize the reconstruction objective over a pool of texts."""
    if not texts:
        raise ValueError("autoencode corpus is empty")
    opt = AdamW(model.parameters(), cfg)
    report = TrainReport(steps=cfg.max_steps)
    rng = np.random.default_rng(cfg.seed)
    for step in range(cfg.max_steps):
        idx = rng.integers(0, len(texts), size=min(cfg.batch_size, len(texts)))
        batch = [texts[i] for i in idx]
        opt.zero_grad()
        loss = model.autoencode_loss(batch)
        loss.backward()
        clip_gradients(list(opt.trainable.values()), cfg.grad_clip)
        opt.step(cosine_restart_lr(step, cfg.max_steps, cfg))
        report.losses.append(loss.item())
    report.final_loss = report.losses[-1]
    return report


def resume(model_path, corpus, out_dir=None, use_gnn: bool = True, loss_log_path=None) -> tuple[GofaModel, TrainReport]:
    """Continue a checkpointed run to its configured max_steps."""
    model, extras, config = GofaModel.load(model_path)
    cfg = train_config_from_dict(config["train"])
    opt = AdamW(model.parameters(), cfg)
    opt.load_state_tensors(extras)
    start_step = int(config.get("train_step", 0))
    report = train(
        model, corpus, cfg, out_dir=out_dir, use_gnn=use_gnn,
        start_step=start_step, optimizer=opt, loss_log_path=loss_log_path,
    )
    return model, report
