"""Causal transformer over location sequences with a partitioned parameter set.

Per layer the running stream ``h`` is split by two per-layer input
projections into a private and a shared representation; queries and keys
come from the shared one (shared weights), values from the private one
(private weights). Attention is causal scaled dot-product per head, the
block then follows add -> norm -> MLP -> norm, and output logits reuse the
embedding rows (weight tying), so the output head is private by
construction.

Padding positions are excluded from attention targets (large negative
additive mask, diagonal always kept so every softmax row stays finite) and
from the loss mask.
"""

from __future__ import annotations

import math

import numpy as np

from ..autodiff import Tape, Tensor
from ..autodiff import functional as F
from .config import ConfigError, ModelConfig
from .params import ParameterSet, init_parameters

MASK_OFF = -1e30


class TrajectoryTransformer:
    def __init__(self, config: ModelConfig, params: ParameterSet):
        self.config = config
        self.params = params

    @classmethod
    def initialize(
        cls, config: ModelConfig, master_seed: int, half_open: bool = True
    ) -> "TrajectoryTransformer":
        return cls(config, init_parameters(config, master_seed, half_open=half_open))

    # -- building blocks ----------------------------------------------------

    def embed(self, ids: np.ndarray) -> Tensor:
        """Token embedding plus learned positional rows: (B, T, d)."""
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim == 1:
            ids = ids[None, :]
        t = ids.shape[1]
        if t > self.config.max_seq_len:
            raise ConfigError(
                f"sequence length {t} exceeds max_seq_len {self.config.max_seq_len}"
            )
        tok = F.embedding(self.params["embedding"], ids)
        pos = F.slice_axis1(
            F.reshape(self.params["positional"], (1,) + self.params["positional"].shape), 0, t
        )
        return F.add(tok, pos)

    def _projection(self, h: Tensor, layer: int, which: str) -> Tensor:
        out = h
        for j in range(self.config.proj_layers):
            if j > 0:
                out = F.relu(out)
            out = F.affine(
                out,
                self.params[f"layers.{layer}.{which}.w{j}"],
                self.params[f"layers.{layer}.{which}.b{j}"],
            )
        return out

    def project(self, h: Tensor, layer: int) -> tuple[Tensor, Tensor]:
        """Split the stream into (private, shared) representations."""
        return self._projection(h, layer, "proj_private"), self._projection(
            h, layer, "proj_shared"
        )

    def _split_heads(self, x: Tensor, batch: int, t: int) -> Tensor:
        cfg = self.config
        return F.swapaxes(F.reshape(x, (batch, t, cfg.num_heads, cfg.head_dim)), 1, 2)

    def attention(
        self,
        h_shared: Tensor,
        h_private: Tensor,
        layer: int,
        mask_add: np.ndarray,
        train_rng: np.random.Generator | None = None,
    ) -> tuple[Tensor, np.ndarray]:
        """Causal multi-head attention; returns (output, attention weights).

        Queries and keys are computed from the shared representation with
        shared weights, values from the private representation with private
        weights. The returned weights are the pre-dropout probabilities,
        shape (B, H, T, T).
        """
        cfg = self.config
        batch, t = h_shared.shape[0], h_shared.shape[1]
        p = self.params
        q = F.affine(h_shared, p[f"layers.{layer}.attn.wq"], p[f"layers.{layer}.attn.bq"])
        k = F.affine(h_shared, p[f"layers.{layer}.attn.wk"], p[f"layers.{layer}.attn.bk"])
        v = F.affine(h_private, p[f"layers.{layer}.attn.wv"], p[f"layers.{layer}.attn.bv"])
        q = self._split_heads(q, batch, t)
        k = self._split_heads(k, batch, t)
        v = self._split_heads(v, batch, t)
        scores = F.scale(F.matmul(q, F.swapaxes(k, -1, -2)), 1.0 / math.sqrt(cfg.head_dim))
        scores = F.add_constant(scores, mask_add)
        weights = F.softmax(scores, axis=-1)
        attended = F.matmul(F.dropout(weights, cfg.dropout_rate, train_rng), v)
        merged = F.reshape(F.swapaxes(attended, 1, 2), (batch, t, cfg.hidden_dim))
        out = F.affine(merged, p[f"layers.{layer}.attn.wo"], p[f"layers.{layer}.attn.bo"])
        return out, weights.data

    def _mask_add(self, batch: int, t: int, valid: np.ndarray | None) -> np.ndarray:
        causal = np.tril(np.ones((t, t), dtype=bool))
        if valid is None:
            allowed = np.broadcast_to(causal, (batch, t, t))
        else:
            allowed = causal[None, :, :] & valid[:, None, :]
            # keep the diagonal so padded query rows still normalize
            allowed = allowed | np.eye(t, dtype=bool)[None, :, :]
        return np.where(allowed, 0.0, MASK_OFF)[:, None, :, :]

    def forward(
        self,
        ids: np.ndarray,
        valid: np.ndarray | None = None,
        train_rng: np.random.Generator | None = None,
        collect_attention: bool = False,
    ):
        """Logits over the ``num_locations`` real locations: (B, T, N).

        Position ``t`` scores the location at position ``t + 1``. With
        ``collect_attention`` also returns the per-layer attention weights.
        """
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim == 1:
            ids = ids[None, :]
        if valid is not None:
            valid = np.asarray(valid, dtype=bool)
            if valid.ndim == 1:
                valid = valid[None, :]
        batch, t = ids.shape
        h = self.embed(ids)
        mask_add = self._mask_add(batch, t, valid)
        attentions = []
        for layer in range(self.config.num_layers):
            h_private, h_shared = self.project(h, layer)
            z, weights = self.attention(h_shared, h_private, layer, mask_add, train_rng)
            if collect_attention:
                attentions.append(weights)
            p = self.params
            h = F.layer_norm(F.add(h, z), p[f"layers.{layer}.ln1.gain"], p[f"layers.{layer}.ln1.bias"])
            m = F.affine(h, p[f"layers.{layer}.mlp.w1"], p[f"layers.{layer}.mlp.b1"])
            m = F.affine(F.relu(m), p[f"layers.{layer}.mlp.w2"], p[f"layers.{layer}.mlp.b2"])
            m = F.dropout(m, self.config.dropout_rate, train_rng)
            h = F.layer_norm(m, p[f"layers.{layer}.ln2.gain"], p[f"layers.{layer}.ln2.bias"])
        logits = F.tied_logits(h, self.params["embedding"], self.config.num_locations)
        if collect_attention:
            return logits, attentions
        return logits

    def loss(
        self,
        ids: np.ndarray,
        valid: np.ndarray | None = None,
        train_rng: np.random.Generator | None = None,
    ) -> Tensor:
        """Mean next-location NLL over all valid transitions in the batch.

        Position ``t`` (0-based) predicts position ``t + 1``; a transition
        counts when both endpoints are valid. A batch without a single
        transition (all rows length <= 1) is rejected.
        """
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim == 1:
            ids = ids[None, :]
        batch, t = ids.shape
        if valid is None:
            valid = np.ones((batch, t), dtype=bool)
        else:
            valid = np.asarray(valid, dtype=bool)
            if valid.ndim == 1:
                valid = valid[None, :]
        if t < 2 or not (valid[:, 1:] & valid[:, :-1]).any():
            raise ValueError("batch has no valid prediction positions")
        logits = self.forward(ids, valid, train_rng)
        pred = F.slice_axis1(logits, 0, t - 1)
        return F.cross_entropy(pred, ids[:, 1:], valid[:, 1:] & valid[:, :-1])

    def training_loss(
        self,
        ids: np.ndarray,
        valid: np.ndarray | None = None,
        train_rng: np.random.Generator | None = None,
    ) -> Tensor:
        """Batch loss with the start transition included.

        A start-token column is prepended before scoring, so the
        first-location prediction is trained alongside all transitions;
        without it the generation start state would never receive gradient
        and sampled corpora would open from an arbitrary distribution.
        """
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim == 1:
            ids = ids[None, :]
        batch = ids.shape[0]
        if valid is None:
            valid = np.ones(ids.shape, dtype=bool)
        else:
            valid = np.asarray(valid, dtype=bool)
            if valid.ndim == 1:
                valid = valid[None, :]
        start = np.full((batch, 1), self.config.start_token_id, dtype=np.int64)
        return self.loss(
            np.concatenate([start, ids], axis=1),
            np.concatenate([np.ones((batch, 1), dtype=bool), valid], axis=1),
            train_rng,
        )


def make_model(
    config: ModelConfig, master_seed: int, half_open: bool = True
) -> TrajectoryTransformer:
    return TrajectoryTransformer.initialize(config, master_seed, half_open=half_open)
