"""Cross-city transfer loop.

One meta parameter set holds the shared group. Each meta epoch walks the
source cities in declared order: copy the shared group into the source
model, train the whole source model on its train split, then apply the
gradient of its test-split loss directly to the meta shared parameters
(first order, raw gradient step). After the sources, the shared group is
copied into the target model, which then trains on its own split. Private
parameters never cross model boundaries.

City models keep their optimizer state and private parameters across meta
epochs; only the shared values are overwritten by the copy.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Protocol

import numpy as np

from .autodiff import Optimizer, Tape, Tensor
from .data import CityDataset, Trajectory, iter_batches
from .model import ModelConfig, ParameterSet, RegistryError, TrajectoryTransformer, extract_shared, init_parameters
from .seeding import derive_rng


@dataclass(frozen=True)
class TransferConfig:
    epochs_meta: int = 5
    epochs_source: int = 1
    epochs_target: int = 50
    lr_source: float = 1e-3
    lr_target: float = 1e-3
    lr_meta: float = 5e-4
    batch_size: int = 32
    checkpoint_every: int = 0

    def __post_init__(self):
        if min(self.epochs_meta, self.epochs_source, self.epochs_target) < 1:
            raise ValueError("all epoch counts must be at least 1")
        if min(self.lr_source, self.lr_target, self.lr_meta) <= 0:
            raise ValueError("all learning rates must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint_every must be nonnegative")


@dataclass
class TraceRow:
    meta_epoch: int
    phase: str
    city: str
    epoch: int
    mean_loss: float


class TrainableModel(Protocol):
    """What the loop needs from a model: parameters and a batch loss."""

    params: ParameterSet

    def loss(self, ids, valid, train_rng=None) -> Tensor: ...


def _objective(model: TrainableModel):
    # models exposing training_loss (start transition included) are trained
    # on it; the bare loss remains the evaluation objective
    return getattr(model, "training_loss", model.loss)


def _scored_positions(model: TrainableModel, batch) -> int:
    # one extra scored transition per row when the start token is prepended
    if hasattr(model, "training_loss"):
        return batch.num_transitions + int(batch.mask.any(axis=1).sum())
    return batch.num_transitions


class CityModelRegistry:
    """Meta shared parameters plus one (model, optimizer) pair per city."""

    def __init__(self, meta: ParameterSet):
        meta.check_partition()
        self.meta = meta
        self.models: dict[str, TrajectoryTransformer] = {}
        self.optimizers: dict[str, Optimizer] = {}

    def register(self, city: str, model: TrajectoryTransformer, optimizer: Optimizer) -> None:
        if city in self.models:
            raise RegistryError(f"city {city!r} already registered")
        model.params.check_partition()
        if set(model.params.shared_names()) != set(self.meta.names()):
            raise RegistryError(
                f"{city}: shared group names do not match the meta model"
            )
        for name in self.meta.names():
            if model.params[name].shape != self.meta[name].shape:
                raise RegistryError(
                    f"{city}: shared tensor {name!r} has shape "
                    f"{model.params[name].shape}, meta has {self.meta[name].shape}"
                )
        self.models[city] = model
        self.optimizers[city] = optimizer


def clone_shared(dst: ParameterSet, meta: ParameterSet) -> None:
    """Overwrite ``dst``'s shared group with value copies from ``meta``.

    Private tensors are untouched; storage is never aliased.
    """
    dst_shared = set(dst.shared_names())
    meta_names = set(meta.names())
    if dst_shared != meta_names:
        raise RegistryError(
            f"shared group mismatch: destination has {sorted(dst_shared)}, "
            f"meta has {sorted(meta_names)}"
        )
    for name in meta.names():
        src = meta[name].data
        tgt = dst[name].data
        if src.shape != tgt.shape:
            raise RegistryError(
                f"shared tensor {name!r}: cannot copy shape {src.shape} into {tgt.shape}"
            )
        np.copyto(tgt, src)


def train_epochs(
    model: TrainableModel,
    trajectories: list[Trajectory],
    optimizer: Optimizer,
    epochs: int,
    batch_size: int,
    t_max: int,
    master_seed: int,
    context: tuple,
    dropout: bool = True,
    epoch_offset: int = 0,
    on_epoch: Callable[[int, float], None] | None = None,
) -> list[float]:
    """Minibatch-train every parameter of one model; per-epoch mean losses.

    The epoch mean weights each batch by its transition count, so it is the
    exact mean NLL per predicted position. ``context`` plus the global epoch
    number (``epoch_offset + e``) feeds the derived shuffle and dropout
    streams, so a phase resumed across outer loops consumes the same stream
    as one uninterrupted run, and whole runs replay exactly.
    """
    if not trajectories:
        raise ValueError("cannot train on an empty trajectory list")
    if epochs < 1:
        raise ValueError("epochs must be at least 1")
    trace = []
    for e in range(epochs):
        epoch = epoch_offset + e
        shuffle_rng = derive_rng(master_seed, "shuffle", *context, epoch)
        drop_rng = derive_rng(master_seed, "dropout", *context, epoch) if dropout else None
        total_nll = 0.0
        total_count = 0
        objective = _objective(model)
        for batch in iter_batches(trajectories, batch_size, t_max, shuffle_rng):
            with Tape() as tape:
                loss = objective(batch.ids, batch.mask, train_rng=drop_rng)
            tape.backward(loss)
            optimizer.step(model.params.named_parameters())
            count = _scored_positions(model, batch)
            total_nll += loss.item() * count
            total_count += count
        trace.append(total_nll / total_count)
        if on_epoch is not None:
            on_epoch(epoch, trace[-1])
    return trace


def split_mean_gradient(
    model: TrainableModel,
    trajectories: list[Trajectory],
    batch_size: int,
    t_max: int,
) -> float:
    """Accumulate the gradient of the whole-split mean NLL into the model.

    Batches are walked in corpus order without dropout; each backward pass
    is seeded with its share of the transition count, so the accumulated
    gradient equals the gradient of the single full-split mean exactly.
    Returns the split mean loss.
    """
    if not trajectories:
        raise ValueError("cannot evaluate a gradient on an empty trajectory list")
    model.params.zero_grads()
    objective = _objective(model)
    batches = iter_batches(trajectories, batch_size, t_max, rng=None)
    total = sum(_scored_positions(model, b) for b in batches)
    mean_loss = 0.0
    for batch in batches:
        with Tape() as tape:
            loss = objective(batch.ids, batch.mask, train_rng=None)
        weight = _scored_positions(model, batch) / total
        tape.backward(loss, seed=weight)
        mean_loss += loss.item() * weight
    return mean_loss


def apply_meta_gradient(meta: ParameterSet, source: ParameterSet, lr: float) -> None:
    """Raw gradient step on the meta shared group, paired by name.

    Gradients sitting on the source's private parameters are ignored; the
    meta set has no private counterpart for them.
    """
    if lr < 0:
        raise ValueError("meta learning rate must be nonnegative")
    for name in meta.names():
        grad = source[name].grad
        if grad is None:
            raise RuntimeError(f"shared parameter {name!r} has no gradient for the meta step")
        if grad.shape != meta[name].shape:
            raise RegistryError(
                f"shared tensor {name!r}: gradient shape {grad.shape} does not match "
                f"meta shape {meta[name].shape}"
            )
        meta[name].data -= lr * grad


def meta_gradient_step(
    meta: ParameterSet,
    model: TrainableModel,
    test_trajectories: list[Trajectory],
    lr_meta: float,
    batch_size: int,
    t_max: int,
) -> float:
    """Evaluate the source test-split gradient and step the meta parameters."""
    mean_loss = split_mean_gradient(model, test_trajectories, batch_size, t_max)
    apply_meta_gradient(meta, model.params, lr_meta)
    model.params.zero_grads()
    return mean_loss


@dataclass
class TransferResult:
    target_model: TrajectoryTransformer
    meta: ParameterSet
    source_models: dict[str, TrajectoryTransformer]
    trace: list[TraceRow] = field(default_factory=list)


ProbeFn = Callable[..., None]


def run_transfer(
    datasets: dict[str, CityDataset],
    target_city: str,
    source_cities: list[str],
    model_config: ModelConfig,
    transfer_config: TransferConfig,
    master_seed: int,
    half_open: bool = True,
    probe: ProbeFn | None = None,
    dropout: bool = True,
    checkpoint_cb: Callable[[int, "CityModelRegistry", TrajectoryTransformer], None] | None = None,
    on_trace: Callable[[TraceRow], None] | None = None,
) -> TransferResult:
    """Full transfer run; with no sources it degrades to plain training.

    ``model_config.num_locations`` is ignored; each city model gets its own
    vocabulary size. ``probe`` (when given) is called around every shared
    copy with (event, city, model_params, meta_params) so tests can verify
    the partition discipline in flight.
    """
    if target_city not in datasets:
        raise ValueError(f"unknown target city {target_city!r}")
    for city in source_cities:
        if city not in datasets:
            raise ValueError(f"unknown source city {city!r}")
        if city == target_city:
            raise ValueError("the target city cannot also be a source")

    def city_config(city: str) -> ModelConfig:
        return replace(model_config, num_locations=datasets[city].vocab.size)

    meta = extract_shared(init_parameters(city_config(target_city), master_seed, half_open))
    registry = CityModelRegistry(meta)
    for city in [*source_cities, target_city]:
        lr = transfer_config.lr_target if city == target_city else transfer_config.lr_source
        model = TrajectoryTransformer.initialize(city_config(city), master_seed, half_open)
        registry.register(city, model, Optimizer("adam", lr))

    def notify(event: str, city: str) -> None:
        if probe is not None:
            probe(event, city, registry.models[city].params, meta)

    t_max = model_config.max_seq_len
    cfg = transfer_config
    trace: list[TraceRow] = []

    def emit(rows):
        trace.extend(rows)
        if on_trace is not None:
            for row in rows:
                on_trace(row)
    for meta_epoch in range(cfg.epochs_meta):
        for city in source_cities:
            model = registry.models[city]
            notify("pre_clone", city)
            clone_shared(model.params, meta)
            notify("post_clone", city)
            losses = train_epochs(
                model,
                datasets[city].train,
                registry.optimizers[city],
                cfg.epochs_source,
                cfg.batch_size,
                t_max,
                master_seed,
                ("source", city),
                dropout=dropout,
                epoch_offset=meta_epoch * cfg.epochs_source,
            )
            emit([TraceRow(meta_epoch, "source", city, e, loss) for e, loss in enumerate(losses)])
            test_loss = meta_gradient_step(
                meta, model, datasets[city].test, cfg.lr_meta, cfg.batch_size, t_max
            )
            emit([TraceRow(meta_epoch, "meta", city, 0, test_loss)])
        target = registry.models[target_city]
        notify("pre_clone", target_city)
        clone_shared(target.params, meta)
        notify("post_clone", target_city)
        losses = train_epochs(
            target,
            datasets[target_city].train,
            registry.optimizers[target_city],
            cfg.epochs_target,
            cfg.batch_size,
            t_max,
            master_seed,
            ("target", target_city),
            dropout=dropout,
            epoch_offset=meta_epoch * cfg.epochs_target,
        )
        emit([TraceRow(meta_epoch, "target", target_city, e, loss) for e, loss in enumerate(losses)])
        if checkpoint_cb is not None and cfg.checkpoint_every > 0:
            if (meta_epoch + 1) % cfg.checkpoint_every == 0:
                checkpoint_cb(meta_epoch, registry, registry.models[target_city])

    sources = {c: registry.models[c] for c in source_cities}
    return TransferResult(
        target_model=registry.models[target_city], meta=meta, source_models=sources, trace=trace
    )


def train_single_city(
    dataset: CityDataset,
    model_config: ModelConfig,
    epochs: int,
    master_seed: int,
    lr: float = 1e-3,
    batch_size: int = 32,
    half_open: bool = True,
    dropout: bool = True,
    on_trace: Callable[[TraceRow], None] | None = None,
) -> TransferResult:
    """Standalone single-city training.

    Written as its own loop, but constructed so a zero-source transfer run
    with one meta epoch reproduces it bit for bit: parameter init depends on
    names only, so the initial shared copy from a fresh meta set is a no-op.
    """
    cfg = replace(model_config, num_locations=dataset.vocab.size)
    model = TrajectoryTransformer.initialize(cfg, master_seed, half_open)
    meta = extract_shared(model.params)
    clone_shared(model.params, meta)
    optimizer = Optimizer("adam", lr)
    live = None
    if on_trace is not None:
        live = lambda e, loss: on_trace(TraceRow(0, "target", dataset.name, e, loss))
    losses = train_epochs(
        model,
        dataset.train,
        optimizer,
        epochs,
        batch_size,
        model_config.max_seq_len,
        master_seed,
        ("target", dataset.name),
        dropout=dropout,
        on_epoch=live,
    )
    trace = [TraceRow(0, "target", dataset.name, e, loss) for e, loss in enumerate(losses)]
    return TransferResult(target_model=model, meta=meta, source_models={}, trace=trace)


def mean_split_loss(
    model: TrainableModel, trajectories: list[Trajectory], batch_size: int, t_max: int
) -> float:
    """Dropout-free mean NLL per transition over a split."""
    batches = iter_batches(trajectories, batch_size, t_max, rng=None)
    total = sum(b.num_transitions for b in batches)
    acc = 0.0
    for batch in batches:
        loss = model.loss(batch.ids, batch.mask, train_rng=None)
        acc += loss.item() * batch.num_transitions
    return acc / total


def write_trace_csv(trace: list[TraceRow], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["meta_epoch", "phase", "city", "epoch", "mean_loss"])
        for row in trace:
            writer.writerow([row.meta_epoch, row.phase, row.city, row.epoch, repr(row.mean_loss)])
