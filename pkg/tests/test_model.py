import math

import numpy as np
import pytest

from conftest import analytic_grads, finite_difference, max_rel_error
from trajsim.autodiff import Optimizer, Tape, Tensor
from trajsim.autodiff import functional as F
from trajsim.data import Trajectory, iter_batches
from trajsim.model import ConfigError, ModelConfig, init_parameters, make_model


def tiny_config(**overrides):
    base = dict(
        num_locations=5,
        hidden_dim=8,
        num_heads=2,
        num_layers=2,
        proj_layers=2,
        max_seq_len=6,
        dropout_rate=0.0,
    )
    base.update(overrides)
    return ModelConfig(**base)


class TestConfig:
    def test_heads_must_divide_hidden(self):
        with pytest.raises(ConfigError):
            tiny_config(hidden_dim=8, num_heads=3)

    def test_proj_layers_grid(self):
        for k in (1, 2, 3):
            tiny_config(proj_layers=k)
        with pytest.raises(ConfigError):
            tiny_config(proj_layers=4)


class TestPartition:
    def test_disjoint_and_exhaustive(self):
        ps = init_parameters(tiny_config(), 0)
        ps.check_partition()
        shared = set(ps.shared_names())
        private = set(ps.private_names())
        assert shared.isdisjoint(private)
        assert shared | private == set(ps.names())

    def test_group_membership_by_role(self):
        ps = init_parameters(tiny_config(), 0)
        for name in ps.names():
            group = ps.group_of(name)
            if ".attn.wq" in name or ".attn.bq" in name or ".attn.wk" in name or ".attn.bk" in name:
                assert group == "shared", name
            elif ".proj_shared." in name:
                assert group == "shared", name
            else:
                assert group == "private", name
        assert ps.group_of("embedding") == "private"
        assert ps.group_of("positional") == "private"

    def test_full_sharing_mode_tags_everything_shared(self):
        ps = init_parameters(tiny_config(), 0, half_open=False)
        ps.check_partition()
        assert ps.private_names() == []
        assert set(ps.shared_names()) == set(ps.names())


class TestEmbed:
    def test_equal_ids_equal_rows_with_zero_positional(self):
        model = make_model(tiny_config(), 3)
        model.params["positional"].data[:] = 0.0
        out = model.embed(np.array([2, 4, 2]))
        np.testing.assert_array_equal(out.data[0, 0], out.data[0, 2])

    def test_empty_sequence(self):
        model = make_model(tiny_config(), 3)
        out = model.embed(np.zeros((1, 0), dtype=int))
        assert out.shape == (1, 0, 8)

    def test_too_long_sequence_is_config_error(self):
        model = make_model(tiny_config(max_seq_len=4), 3)
        with pytest.raises(ConfigError):
            model.embed(np.zeros(5, dtype=int))

    def test_out_of_range_id(self):
        model = make_model(tiny_config(), 3)
        with pytest.raises(IndexError):
            model.embed(np.array([6]))  # table has rows 0..5 (5 = start token)

    def test_gradient_lands_only_on_visited_rows(self):
        # dense-gradient oracle on a 5-location toy: perturb each table entry
        model = make_model(tiny_config(num_layers=1), 9)
        ids = np.array([1, 3, 3])
        probe = np.random.default_rng(0).normal(size=(1, 3, 8))

        def loss_from(table):
            tok = table[ids] + model.params["positional"].data[:3]
            return float((tok * probe[0]).sum())

        with Tape() as tape:
            out = model.embed(ids)
            loss = F.sum_all(F.mul(out, Tensor(probe)))
        tape.backward(loss)
        grad = model.params["embedding"].grad
        visited = {1, 3}
        for row in range(grad.shape[0]):
            if row in visited:
                assert np.abs(grad[row]).max() > 0
            else:
                np.testing.assert_array_equal(grad[row], 0.0)
        numeric = finite_difference(
            lambda arrs: loss_from(arrs[0]), [model.params["embedding"].data.copy()]
        )[0]
        assert max_rel_error(grad, numeric) < 1e-5


class TestProject:
    def test_identity_init_single_layer(self):
        model = make_model(tiny_config(proj_layers=1), 5)
        h = Tensor(np.random.default_rng(1).normal(size=(1, 4, 8)))
        h_private, h_shared = model.project(h, 0)
        np.testing.assert_array_equal(h_private.data, h.data)
        np.testing.assert_array_equal(h_shared.data, h.data)

    @pytest.mark.parametrize("depth", [1, 2, 3])
    def test_output_shapes(self, depth):
        model = make_model(tiny_config(proj_layers=depth), 5)
        h = Tensor(np.zeros((2, 4, 8)))
        h_private, h_shared = model.project(h, 0)
        assert h_private.shape == (2, 4, 8)
        assert h_shared.shape == (2, 4, 8)

    def test_gradients_reach_both_projection_groups(self):
        model = make_model(tiny_config(proj_layers=2), 5)
        ids = np.array([[0, 1, 2, 3]])
        with Tape() as tape:
            loss = model.loss(ids)
        tape.backward(loss)
        for name in ("layers.0.proj_shared.w0", "layers.0.proj_private.w0"):
            assert np.abs(model.params[name].grad).max() > 0, name


class TestAttention:
    def test_single_token_weight_is_one(self):
        model = make_model(tiny_config(), 5)
        _, attns = model.forward(np.array([[2]]), collect_attention=True)
        for layer_weights in attns:
            np.testing.assert_allclose(layer_weights[0, :, 0, 0], 1.0, atol=1e-12)

    def test_single_token_output_is_projected_value(self):
        cfg = tiny_config(num_layers=1)
        model = make_model(cfg, 5)
        ids = np.array([[2]])
        h = model.embed(ids)
        h_private, h_shared = model.project(h, 0)
        mask_add = model._mask_add(1, 1, None)
        out, _ = model.attention(h_shared, h_private, 0, mask_add)
        p = model.params
        v = h_private.data @ p["layers.0.attn.wv"].data + p["layers.0.attn.bv"].data
        manual = v @ p["layers.0.attn.wo"].data + p["layers.0.attn.bo"].data
        np.testing.assert_allclose(out.data, manual, atol=1e-12)

    def test_rows_are_causal_distributions(self):
        model = make_model(tiny_config(), 5)
        ids = np.array([[0, 1, 2, 3, 4]])
        _, attns = model.forward(ids, collect_attention=True)
        for layer_weights in attns:
            w = layer_weights[0]
            np.testing.assert_allclose(w.sum(axis=-1), 1.0, atol=1e-9)
            assert (w >= 0).all()
            upper = np.triu_indices(w.shape[-1], k=1)
            for head in range(w.shape[0]):
                np.testing.assert_array_equal(w[head][upper], 0.0)

    def test_padding_keys_are_masked(self):
        model = make_model(tiny_config(), 5)
        ids = np.array([[0, 1, 2, 0, 0]])
        mask = np.array([[True, True, True, False, False]])
        _, attns = model.forward(ids, mask, collect_attention=True)
        for layer_weights in attns:
            # valid queries (rows 0-2) never attend to padded keys (cols 3-4)
            np.testing.assert_array_equal(layer_weights[0, :, :3, 3:], 0.0)

    def test_causality_end_to_end_by_perturbation(self):
        # positional rows are not tied to the output head, so perturbing the
        # row used only by token 3 must leave logits at positions 1-2 bit-equal
        cfg = tiny_config()
        model_a = make_model(cfg, 11)
        model_b = make_model(cfg, 11)
        model_b.params["positional"].data[2] += 0.37
        ids = np.array([[1, 2, 3]])
        logits_a = model_a.forward(ids).data
        logits_b = model_b.forward(ids).data
        np.testing.assert_array_equal(logits_a[0, :2], logits_b[0, :2])
        assert np.abs(logits_a[0, 2] - logits_b[0, 2]).max() > 0


class TestForward:
    def test_output_shape(self):
        model = make_model(tiny_config(), 5)
        logits = model.forward(np.array([[0, 1, 2], [3, 4, 0]]))
        assert logits.shape == (2, 3, 5)

    def test_all_zero_weights_give_uniform_predictions(self):
        model = make_model(tiny_config(), 5)
        for _, t in model.params.named_parameters():
            t.data[:] = 0.0
        logits = model.forward(np.array([[0, 1, 2]])).data
        np.testing.assert_array_equal(logits, 0.0)
        probs = np.exp(logits) / np.exp(logits).sum(-1, keepdims=True)
        np.testing.assert_allclose(probs, 1.0 / 5.0)

    def test_weight_tying_embedding_drives_logits(self):
        # a uniform row shift is invisible (normalized features have zero
        # mean), so perturb one component of an id that is never an input
        model = make_model(tiny_config(), 5)
        ids = np.array([[0, 1]])
        before = model.forward(ids).data.copy()
        model.params["embedding"].data[4, 0] += 1.0
        after = model.forward(ids).data
        assert np.abs(after[..., 4] - before[..., 4]).max() > 0
        np.testing.assert_array_equal(after[..., :4], before[..., :4])


class TestInternalLoss:
    def test_length_one_batch_rejected(self):
        model = make_model(tiny_config(), 5)
        with pytest.raises(ValueError, match="no valid prediction"):
            model.loss(np.array([[3]]))

    def test_uniform_model_gives_log_vocab(self):
        cfg = tiny_config(num_locations=16, hidden_dim=8)
        model = make_model(cfg, 5)
        for _, t in model.params.named_parameters():
            t.data[:] = 0.0
        loss = model.loss(np.array([[0, 1, 2, 3]]))
        assert loss.item() == pytest.approx(math.log(16.0), abs=1e-12)

    def test_matches_hand_rolled_nll_loop(self):
        # independent oracle: per-position scalar loop over plain softmax
        model = make_model(tiny_config(), 21)
        ids = np.array([[0, 1, 2, 3], [4, 3, 2, 1]])
        mask = np.array([[True, True, True, True], [True, True, True, False]])
        loss = model.loss(ids, mask).item()
        logits = model.forward(ids, mask).data
        total, count = 0.0, 0
        for b in range(2):
            for t in range(3):
                if mask[b, t] and mask[b, t + 1]:
                    row = logits[b, t]
                    p = np.exp(row - row.max())
                    p /= p.sum()
                    total += -math.log(p[ids[b, t + 1]])
                    count += 1
        assert loss == pytest.approx(total / count, rel=1e-12)


def build_alternating_corpus(n_trajectories=8, length=6):
    """Deterministic A-B-A-B corpus; perfectly predictable after one step."""
    out = []
    for i in range(n_trajectories):
        locs = np.array([j % 2 for j in range(length)])
        out.append(Trajectory(user=f"u{i}", slots=np.arange(length) + 24 * i, locs=locs))
    return out


def train_to_memorize(steps=200, seed=0):
    cfg = ModelConfig(
        num_locations=2,
        hidden_dim=16,
        num_heads=2,
        num_layers=1,
        proj_layers=1,
        max_seq_len=8,
        dropout_rate=0.0,
    )
    model = make_model(cfg, seed)
    corpus = build_alternating_corpus()
    opt = Optimizer("adam", 5e-3)
    batches = iter_batches(corpus, 8, cfg.max_seq_len, rng=None)
    losses = []
    for _ in range(steps):
        for batch in batches:
            with Tape() as tape:
                loss = model.loss(batch.ids, batch.mask)
            tape.backward(loss)
            opt.step(model.params.named_parameters())
            losses.append(loss.item())
    return model, losses


def test_memorization_within_200_steps():
    _, losses = train_to_memorize(steps=200)
    assert min(losses) < 0.1, f"best loss {min(losses):.4f} after {len(losses)} steps"
    assert losses[-1] < 0.1


def test_end_to_end_gradient_check():
    """Whole-model loss gradient vs central differences, tiny instance."""
    cfg = tiny_config()  # 2 layers, d=8, N=5
    ids = np.array([[0, 1, 2, 3]])
    worst = run_full_model_gradient_check(cfg, ids, seed=0)
    assert worst <= 1e-3


def _min_relu_gap(model, ids) -> float:
    """Smallest |preactivation| any rectifier sees during one forward pass."""
    from trajsim.autodiff import functional as F_mod

    gaps = [np.inf]
    original = F_mod.relu

    def recording(t):
        if t.data.size:
            gaps.append(float(np.abs(t.data).min()))
        return original(t)

    F_mod.relu = recording
    try:
        model.loss(ids)
    finally:
        F_mod.relu = original
    return min(gaps)


def run_full_model_gradient_check(cfg, ids, seed):
    """Max relative error between tape and finite-difference gradients.

    Parameters are re-drawn at unit-ish scale: at the tiny default init the
    MLP outputs have variance comparable to the layer-norm epsilon, where
    the loss is so sharply curved that central differences themselves are
    inaccurate. Draws that leave any rectifier preactivation within the
    finite-difference step of its kink are rejected up front, because
    central differences are invalid across the kink; this screens the
    evaluation point, never the outcome.
    """
    from trajsim.seeding import derive_rng

    model = make_model(cfg, seed)
    baseline = {n: t.data.copy() for n, t in model.params.named_parameters()}
    for attempt in range(50):
        noise = derive_rng(seed, "gradcheck-noise", attempt)
        for name, t in model.params.named_parameters():
            t.data = baseline[name] + noise.normal(0.0, 0.3, t.data.shape)
        if _min_relu_gap(model, ids) > 1e-3:
            break
    else:
        raise RuntimeError("could not find a kink-free evaluation point")
    names = model.params.names()

    with Tape() as tape:
        loss = model.loss(ids)
    tape.backward(loss)
    analytic = {n: model.params[n].grad.copy() for n in names}

    worst = 0.0
    for name in names:
        arr = model.params[name].data

        def loss_value(_arrays):
            return model.loss(ids).item()

        numeric = finite_difference(loss_value, [arr])[0]
        worst = max(worst, max_rel_error(analytic[name], numeric, floor=1e-5))
    return worst
