"""Multi-domain training loop, checkpoints, and merged-weight evaluation."""

from __future__ import annotations

import json
import logging
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import persist
from .data import Dataset
from .errors import ConfigurationError, ContractError, NumericalError
from .losses import LossBreakdown, cross_entropy, orth_loss, ss_loss, total_loss
from .model import MultiDomainNet, NetworkSpec, net_from_tensors, net_tensors
from .optim import SGD, AdamW, multistep_lr

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "sslora-checkpoint/1"


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 8
    max_steps: int = 2000
    optimizer: str = "adamw"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    milestones: list[int] | None = None
    gamma: float = 0.1
    lambda1: float = 1.0
    lambda2: float = 1e-7
    seed: int = 0
    reproject_every_step: bool = False
    eval_every: int = 200

    def __post_init__(self):
        if self.lr < 0:
            raise ConfigurationError("lr must be non-negative")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.max_steps < 0:
            raise ConfigurationError("max_steps must be >= 0")
        if self.optimizer not in ("sgd", "adamw"):
            raise ConfigurationError(f"optimizer must be 'sgd' or 'adamw', got {self.optimizer!r}")
        if self.milestones is not None:
            self.milestones = [int(m) for m in self.milestones]
            if any(b <= a for a, b in zip(self.milestones, self.milestones[1:])):
                raise ConfigurationError("milestones must be strictly increasing")

    def resolved_milestones(self) -> list[int]:
        """Explicit milestones, or 60% and 85% of ``max_steps``."""
        if self.milestones is not None:
            return list(self.milestones)
        return sorted({int(0.6 * self.max_steps), int(0.85 * self.max_steps)})

    def schedule(self, step: int) -> float:
        return multistep_lr(step, self.lr, self.resolved_milestones(), self.gamma)


@dataclass
class Batch:
    domain: int
    x: np.ndarray        # rows: batch x input_dim
    labels: np.ndarray


@dataclass
class TrainState:
    optimizer: AdamW | SGD
    rng: np.random.Generator
    step: int = 0
    lr: float = 0.0
    counters: Counter = field(default_factory=Counter)
    last_good: str | None = None


def make_optimizer(net: MultiDomainNet, config: TrainConfig) -> AdamW | SGD:
    params = net.parameters()
    if config.optimizer == "sgd":
        return SGD(params)
    # B factors are excluded from decay under constraints; see README.
    decay = [n for n in params if not (net.spec.constrained and n.endswith(".B"))]
    return AdamW(params, betas=(config.beta1, config.beta2), eps=config.eps,
                 weight_decay=config.weight_decay, decay=decay)


def init_state(net: MultiDomainNet, config: TrainConfig) -> TrainState:
    return TrainState(optimizer=make_optimizer(net, config),
                      rng=np.random.Generator(np.random.PCG64(
                          np.random.SeedSequence([config.seed, 0xBA7C4]))),
                      lr=config.schedule(0))


def regularizers(net: MultiDomainNet, counter: Counter | None = None):
    """Summed orth and ss losses over all both-mode layers, with B gradients.

    Returns:
        ``(orth, ss, orth_grads, ss_grads)``; gradient dicts are keyed by
        parameter name.
    """
    orth = ss = 0.0
    g_orth: dict[str, np.ndarray] = {}
    g_ss: dict[str, np.ndarray] = {}
    for idx in net.both_layers():
        bs = [pair.b for pair in net.layers[idx].specific]
        o, og = orth_loss(bs)
        s, sg = ss_loss(bs, counter)
        orth += o
        ss += s
        for dom in range(len(bs)):
            g_orth[f"layer{idx}.dom{dom}.B"] = og[dom]
            g_ss[f"layer{idx}.dom{dom}.B"] = sg[dom]
    return orth, ss, g_orth, g_ss


def _accumulate(grads: dict, extra: dict, weight: float) -> None:
    if weight == 0.0:
        return
    for name, g in extra.items():
        if name in grads:
            grads[name] = grads[name] + weight * g
        else:
            grads[name] = weight * g


def step(net: MultiDomainNet, batch: Batch, state: TrainState,
         config: TrainConfig) -> LossBreakdown:
    """One optimisation step on a single-domain batch.

    Task gradients reach the shared adapters, the batch domain's adapters and
    head; regularizer gradients reach every domain's B factor.

    Raises:
        NumericalError: the loss is not finite (parameters are left untouched).
    """
    dtype = np.dtype(net.spec.dtype)
    logits = net.forward(np.asarray(batch.x, dtype=dtype).T, batch.domain)
    ce, dlogits = cross_entropy(logits, batch.labels)
    grads = net.backward(dlogits.astype(dtype, copy=False))
    orth, ss, g_orth, g_ss = regularizers(net, state.counters)
    _accumulate(grads, g_orth, config.lambda1)
    _accumulate(grads, g_ss, config.lambda2)
    losses = total_loss(ce, orth, ss, config.lambda1, config.lambda2)
    if not math.isfinite(losses.total):
        where = f"; last good checkpoint: {state.last_good}" if state.last_good else ""
        raise NumericalError(f"non-finite loss at step {state.step}: {losses}{where}",
                             iterations=state.step, checkpoint=state.last_good)
    state.lr = config.schedule(state.step)
    state.optimizer.step(grads, state.lr)
    if config.reproject_every_step:
        net.reproject()
    state.step += 1
    return losses


def sample_batch(ds: Dataset, rng: np.random.Generator, batch_size: int) -> Batch:
    idx = rng.choice(len(ds), size=min(batch_size, len(ds)), replace=False)
    return Batch(domain=ds.domain, x=ds.x[idx], labels=ds.labels[idx])


def accuracy(net: MultiDomainNet, ds: Dataset, merged: bool = False) -> tuple[float, float]:
    """Accuracy and mean CE of ``net`` on ``ds`` (training or merged path)."""
    if len(ds) == 0:
        raise ContractError("empty evaluation set")
    x = np.asarray(ds.x, dtype=np.dtype(net.spec.dtype)).T
    logits = net.merged_forward(x, ds.domain) if merged else net.forward(x, ds.domain)
    ce, _ = cross_entropy(logits, ds.labels)
    return float(np.mean(np.argmax(logits, axis=0) == ds.labels)), ce


def metrics_header(num_domains: int) -> list[str]:
    return (["step", "domain", "ce", "orth", "ss", "total", "lr"]
            + [f"val_acc_d{i}" for i in range(num_domains)])


def train_loop(net: MultiDomainNet, train_sets: Sequence[Dataset], config: TrainConfig, *,
               val_sets: Sequence[Dataset] | None = None,
               state: TrainState | None = None,
               metrics_path: str | Path | None = None,
               checkpoint_path: str | Path | None = None) -> tuple[TrainState, list[list[str]]]:
    """Round-robin training: step ``t`` draws a batch from domain ``t mod D``.

    Validation accuracy is logged every ``eval_every`` steps and at the last
    step. Metrics rows are appended to ``metrics_path`` as they are produced;
    the final state is checkpointed to ``checkpoint_path``.

    Returns:
        ``(state, rows)`` where ``rows`` are the metrics rows written by this call.
    """
    n_dom = net.spec.num_domains
    if len(train_sets) != n_dom:
        raise ConfigurationError(f"expected {n_dom} training sets, got {len(train_sets)}")
    for ds in train_sets:
        if len(ds) == 0:
            raise ConfigurationError(f"training set for domain {ds.domain} is empty")
    if val_sets is not None:
        if len(val_sets) != n_dom or any(len(ds) == 0 for ds in val_sets):
            raise ConfigurationError("need one non-empty validation set per domain")
    state = state or init_state(net, config)
    checkpoint_path = Path(checkpoint_path) if checkpoint_path else None
    rows: list[list[str]] = []
    out = None
    if metrics_path is not None:
        metrics_path = Path(metrics_path)
        fresh = state.step == 0 or not metrics_path.exists()
        metrics_path.parent.mkdir(parents=True, exist_ok=True)
        out = open(metrics_path, "w" if fresh else "a", newline="")
        if fresh:
            out.write(",".join(metrics_header(n_dom)) + "\n")
    try:
        while state.step < config.max_steps:
            t = state.step
            dom = t % n_dom
            losses = step(net, sample_batch(train_sets[dom], state.rng, config.batch_size),
                          state, config)
            row = [str(t), str(dom), repr(losses.ce), repr(losses.orth), repr(losses.ss),
                   repr(losses.total), repr(state.lr)]
            val = [""] * n_dom
            last = state.step == config.max_steps
            if val_sets is not None and (last or (config.eval_every > 0
                                                   and state.step % config.eval_every == 0)):
                val = [repr(accuracy(net, ds)[0]) for ds in val_sets]
                if checkpoint_path is not None and not last:
                    good = checkpoint_path.with_name(checkpoint_path.name + ".lastgood")
                    save_checkpoint(good, net, state, config)
                    state.last_good = str(good)
            row += val
            rows.append(row)
            if out is not None:
                out.write(",".join(row) + "\n")
    finally:
        if out is not None:
            out.close()
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, net, state, config)
    return state, rows


def save_checkpoint(path: str | Path, net: MultiDomainNet, state: TrainState,
                    config: TrainConfig) -> None:
    tensors = net_tensors(net)
    tensors.update(state.optimizer.state_tensors())
    meta = {
        "format": CHECKPOINT_FORMAT,
        "network_spec": json.dumps(net.spec.to_dict(), sort_keys=True),
        "train_config": json.dumps(asdict(config), sort_keys=True),
        "step": str(state.step),
        "rng_state": json.dumps(state.rng.bit_generator.state, sort_keys=True),
        "optimizer_steps": json.dumps(state.optimizer.step_counts(), sort_keys=True),
        "base_fingerprint": net.fingerprint,
        "counters": json.dumps(dict(state.counters), sort_keys=True),
    }
    persist.save(path, tensors, meta)


@dataclass
class Checkpoint:
    net: MultiDomainNet
    config: TrainConfig
    step: int
    metadata: dict
    tensors: dict


def load_checkpoint(path: str | Path) -> Checkpoint:
    container = persist.load(path)
    meta = container.metadata
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise ContractError(f"{path}: not a training checkpoint")
    spec = NetworkSpec(**json.loads(meta["network_spec"]))
    net = net_from_tensors(spec, container.tensors)
    if net.fingerprint != meta["base_fingerprint"]:
        raise ContractError(f"{path}: base weights do not match their fingerprint")
    config = TrainConfig(**json.loads(meta["train_config"]))
    return Checkpoint(net=net, config=config, step=int(meta["step"]), metadata=meta,
                      tensors=container.tensors)


def resume_state(ckpt: Checkpoint, config: TrainConfig) -> TrainState:
    """Rebuild optimizer moments, RNG stream and step counter from a checkpoint."""
    state = init_state(ckpt.net, config)
    state.optimizer.load_state(ckpt.tensors, json.loads(ckpt.metadata["optimizer_steps"]))
    state.rng.bit_generator.state = json.loads(ckpt.metadata["rng_state"])
    state.step = ckpt.step
    state.lr = config.schedule(max(ckpt.step - 1, 0))
    state.counters.update(json.loads(ckpt.metadata.get("counters", "{}")))
    return state


def evaluate(checkpoint: str | Path | MultiDomainNet, dataset: Dataset,
             domain: int) -> tuple[float, float]:
    """Accuracy and mean CE through the merged-weight inference path.

    Raises:
        ContractError: ``dataset`` belongs to another domain or is empty.
    """
    net = checkpoint if isinstance(checkpoint, MultiDomainNet) else load_checkpoint(checkpoint).net
    if dataset.domain != domain:
        raise ContractError(f"dataset is for domain {dataset.domain}, not {domain}")
    return accuracy(net, dataset, merged=True)


def export_adapters(path: str | Path, net: MultiDomainNet) -> None:
    """Write only the adapter factors (``layer{idx}.shared.A`` etc.)."""
    persist.save(path, {k: v for k, v in net.parameters().items() if k.startswith("layer")},
                 {"network_spec": json.dumps(net.spec.to_dict(), sort_keys=True)})
