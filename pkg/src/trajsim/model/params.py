"""Named parameter collections with a shared/private partition.

The partition drives the cross-city transfer: shared tensors (query/key
projections and the shared input projection) move between models by value
copies, private tensors (embeddings, value/output projections, norms, MLP)
never leave their model. A checkpoint is a single binary container whose
header records the partition.
"""

from __future__ import annotations

import hashlib
import math
import json
from typing import Iterator

import numpy as np

from ..autodiff import Tensor
from ..seeding import derive_rng
from .config import ModelConfig

GROUPS = ("shared", "private")

CHECKPOINT_MAGIC = b"TSCKPT1\n"

# Every weight is fan-in scaled: linear maps by their input width, embedding
# and positional tables by the model width (their fan-in under weight tying).
# A fixed small std would attenuate the residual-free projection chain and
# the first attention layer by orders of magnitude, leaving the shared path
# numerically dead; there is no input normalization to rescue it.


class RegistryError(ValueError):
    pass


class ParameterSet:
    """Insertion-ordered mapping of name -> (Tensor, group)."""

    def __init__(self):
        self._tensors: dict[str, Tensor] = {}
        self._groups: dict[str, str] = {}

    def add(self, name: str, tensor: Tensor, group: str) -> Tensor:
        if group not in GROUPS:
            raise ValueError(f"group must be one of {GROUPS}, got {group!r}")
        if name in self._tensors:
            raise ValueError(f"duplicate parameter name {name!r}")
        tensor.requires_grad = True
        self._tensors[name] = tensor
        self._groups[name] = group
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self) -> list[str]:
        return list(self._tensors)

    def group_of(self, name: str) -> str:
        return self._groups[name]

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return list(self._tensors.items())

    def group_names(self, group: str) -> list[str]:
        return [n for n, g in self._groups.items() if g == group]

    def shared_names(self) -> list[str]:
        return self.group_names("shared")

    def private_names(self) -> list[str]:
        return self.group_names("private")

    def iter_group(self, group: str) -> Iterator[tuple[str, Tensor]]:
        for name, g in self._groups.items():
            if g == group:
                yield name, self._tensors[name]

    def check_partition(self) -> None:
        """Assert shared and private tags are disjoint and exhaustive."""
        shared = set(self.shared_names())
        private = set(self.private_names())
        if shared & private:
            raise AssertionError(f"overlapping groups: {sorted(shared & private)}")
        if shared | private != set(self._tensors):
            missing = set(self._tensors) - (shared | private)
            raise AssertionError(f"untagged parameters: {sorted(missing)}")

    def zero_grads(self) -> None:
        for t in self._tensors.values():
            t.grad = None

    def group_bytes(self, group: str) -> bytes:
        """Concatenated raw values of a group, for bitwise comparisons."""
        return b"".join(t.data.tobytes() for _, t in self.iter_group(group))

    def group_digest(self, group: str) -> str:
        return hashlib.sha256(self.group_bytes(group)).hexdigest()


def _param_rng(master_seed: int, name: str) -> np.random.Generator:
    # Keyed by name alone: every model built from the same master seed starts
    # with identical values for same-named tensors, which makes the
    # zero-source transfer run coincide exactly with plain training.
    return derive_rng(master_seed, "param", name)


def init_parameters(config: ModelConfig, master_seed: int, half_open: bool = True) -> ParameterSet:
    """Build and initialize all parameters of one city model.

    ``half_open=False`` tags every tensor as shared (the full-sharing
    ablation); otherwise query/key projections and the shared input
    projection are shared and everything else is private.
    """
    ps = ParameterSet()
    d = config.hidden_dim
    inner = 4 * d

    def group(shared_by_role: bool) -> str:
        if not half_open:
            return "shared"
        return "shared" if shared_by_role else "private"

    def gaussian(name: str, shape: tuple[int, ...]) -> np.ndarray:
        return _param_rng(master_seed, name).normal(0.0, 1.0 / math.sqrt(shape[0]), shape)

    def table(name: str, shape: tuple[int, ...]) -> np.ndarray:
        return _param_rng(master_seed, name).normal(0.0, 1.0 / math.sqrt(d), shape)

    def add(name: str, value: np.ndarray, shared_by_role: bool) -> None:
        ps.add(name, Tensor(value), group(shared_by_role))

    add("embedding", table("embedding", (config.num_locations + 1, d)), False)
    add("positional", table("positional", (config.max_seq_len, d)), False)

    for layer in range(config.num_layers):
        base = f"layers.{layer}"
        for proj, shared in (("proj_shared", True), ("proj_private", False)):
            for j in range(config.proj_layers):
                wname = f"{base}.{proj}.w{j}"
                if config.proj_layers == 1:
                    w = np.eye(d)
                else:
                    w = gaussian(wname, (d, d))
                add(wname, w, shared)
                add(f"{base}.{proj}.b{j}", np.zeros(d), shared)
        for mat, shared in (("q", True), ("k", True), ("v", False), ("o", False)):
            add(f"{base}.attn.w{mat}", gaussian(f"{base}.attn.w{mat}", (d, d)), shared)
            add(f"{base}.attn.b{mat}", np.zeros(d), shared)
        add(f"{base}.ln1.gain", np.ones(d), False)
        add(f"{base}.ln1.bias", np.zeros(d), False)
        add(f"{base}.mlp.w1", gaussian(f"{base}.mlp.w1", (d, inner)), False)
        add(f"{base}.mlp.b1", np.zeros(inner), False)
        add(f"{base}.mlp.w2", gaussian(f"{base}.mlp.w2", (inner, d)), False)
        add(f"{base}.mlp.b2", np.zeros(d), False)
        add(f"{base}.ln2.gain", np.ones(d), False)
        add(f"{base}.ln2.bias", np.zeros(d), False)

    ps.check_partition()
    return ps


def extract_shared(ps: ParameterSet) -> ParameterSet:
    """Value-copy of the shared group, used as a fresh meta parameter set."""
    meta = ParameterSet()
    for name, tensor in ps.iter_group("shared"):
        meta.add(name, Tensor(tensor.data.copy()), "shared")
    return meta


def save_checkpoint(ps: ParameterSet, path, extra: dict | None = None) -> None:
    """Write a deterministic single-file container: JSON header + raw blob."""
    entries = []
    offset = 0
    blobs = []
    for name in sorted(ps.names()):
        t = ps[name]
        raw = np.ascontiguousarray(t.data).tobytes()
        entries.append(
            {
                "name": name,
                "group": ps.group_of(name),
                "shape": list(t.data.shape),
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"params": entries, "extra": extra or {}}, sort_keys=True, separators=(",", ":")
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(len(header).to_bytes(8, "little"))
        fh.write(header)
        fh.write(b"".join(blobs))


def load_checkpoint(path) -> tuple[ParameterSet, dict]:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a parameter checkpoint")
        header_len = int.from_bytes(fh.read(8), "little")
        header = json.loads(fh.read(header_len).decode("utf-8"))
        blob = fh.read()
    ps = ParameterSet()
    for entry in header["params"]:
        raw = blob[entry["offset"] : entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype=np.float64).reshape(entry["shape"]).copy()
        ps.add(entry["name"], Tensor(arr), entry["group"])
    return ps, header.get("extra", {})


def checkpoint_digest(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()
