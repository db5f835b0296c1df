"""Mixture-of-autoencoders tests: losses, gradients, training contracts."""

import math

import numpy as np
import pytest

from spiralcluster import mixae
from spiralcluster.errors import ContractError
from spiralcluster.mixae import (
    GridSearchSpec,
    MixaeConfig,
    MixaeWeights,
    assign_clusters,
    batch_entropy,
    build_mixae,
    grid_search,
    load_mixae,
    mixae_backward,
    mixae_forward,
    mixae_loss,
    sample_entropy,
    save_mixae,
    train_mixae,
)
from spiralcluster.neuralcore import AdamConfig
from spiralcluster.seeding import rng_for

from oracles import finite_difference_gradient


def tiny_config(k=2, resolution=16, holdout=0.0):
    return MixaeConfig(k=k, resolution=resolution, latent_dim=6, holdout_fraction=holdout)


def two_pattern_images(n=60, res=16, seed=0):
    """Half bright-top, half bright-bottom images: trivially two clusters."""
    rng = np.random.default_rng(seed)
    images = np.zeros((n, res, res))
    labels = []
    for i in range(n):
        cls = i % 2
        rows = slice(0, res // 2) if cls == 0 else slice(res // 2, res)
        images[i, rows, :] = rng.uniform(0.6, 1.0, size=(res // 2, res))
        labels.append(cls)
    return images, labels


class TestForward:
    def test_confidence_shape_and_normalization(self):
        model = build_mixae(tiny_config(k=3), seed=1)
        batch = np.random.default_rng(0).uniform(0, 1, (5, 16, 16, 1))
        fwd = mixae_forward(model, batch)
        assert fwd.p.shape == (5, 3)
        assert np.allclose(fwd.p.sum(axis=1), 1.0, atol=1e-9)
        assert np.all(fwd.p >= 0)

    def test_reconstruction_shapes(self):
        model = build_mixae(tiny_config(k=2), seed=2)
        batch = np.random.default_rng(1).uniform(0, 1, (4, 16, 16, 1))
        fwd = mixae_forward(model, batch)
        assert fwd.reconstructions.shape == (2, 4, 16, 16, 1)
        assert fwd.latents.shape == (2, 4, 6)

    def test_identical_aes_symmetric_assigner_gives_uniform_p(self):
        config = tiny_config(k=3)
        model = build_mixae(config, seed=3)
        # Copy AE 0's parameters into every other autoencoder.
        enc0 = [p.copy() for p in model.encoders[0].parameters()]
        dec0 = [p.copy() for p in model.decoders[0].parameters()]
        for i in range(1, config.k):
            model.encoders[i].set_parameters(enc0)
            model.decoders[i].set_parameters(dec0)
        # Symmetric assigner: every cluster's output column identical.
        final = model.assign_net.layers[-1]
        final.w[...] = final.w[:, [0]] @ np.ones((1, config.k))
        final.b[...] = 0.0
        batch = np.random.default_rng(2).uniform(0, 1, (6, 16, 16, 1))
        fwd = mixae_forward(model, batch)
        assert np.allclose(fwd.p, 1.0 / 3.0, atol=1e-12)

    def test_empty_batch_rejected(self):
        model = build_mixae(tiny_config(), seed=0)
        with pytest.raises(ContractError):
            mixae_forward(model, np.empty((0, 16, 16, 1)))


class TestSampleEntropy:
    def test_one_hot_zero(self):
        p = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
        assert abs(sample_entropy(p)) <= 1e-9

    def test_uniform_is_ln_k(self):
        p = np.full((4, 2), 0.5)
        assert sample_entropy(p) == pytest.approx(math.log(2), abs=1e-9)

    def test_point_nine_point_one(self):
        assert sample_entropy(np.array([[0.9, 0.1]])) == pytest.approx(0.3251, abs=1e-4)

    def test_negative_rejected(self):
        with pytest.raises(ContractError):
            sample_entropy(np.array([[1.1, -0.1]]))

    def test_bounds(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            raw = rng.uniform(0, 1, (8, 5))
            p = raw / raw.sum(axis=1, keepdims=True)
            s = sample_entropy(p)
            assert -1e-9 <= s <= math.log(5) + 1e-9


class TestBatchEntropy:
    def test_balanced_one_hot(self):
        p = np.array([[1.0, 0.0], [0.0, 1.0]])
        assert batch_entropy(p) == pytest.approx(-math.log(2), abs=1e-9)

    def test_all_uniform_second_minimum(self):
        p = np.full((2, 2), 0.5)
        assert batch_entropy(p) == pytest.approx(-math.log(2), abs=1e-9)

    def test_second_minimum_equality(self):
        for k in (2, 3, 4):
            n = 2 * k
            one_hot = np.zeros((n, k))
            one_hot[np.arange(n), np.arange(n) % k] = 1.0
            uniform = np.full((n, k), 1.0 / k)
            assert batch_entropy(one_hot) == pytest.approx(batch_entropy(uniform), abs=1e-9)
            assert abs(sample_entropy(one_hot)) <= 1e-9
            assert sample_entropy(uniform) == pytest.approx(math.log(k), abs=1e-9)

    def test_degenerate_single_cluster_near_zero(self):
        p = np.zeros((5, 3))
        p[:, 1] = 1.0
        assert abs(batch_entropy(p)) <= 1e-9

    def test_bounds(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            raw = rng.uniform(0, 1, (6, 4))
            p = raw / raw.sum(axis=1, keepdims=True)
            b = batch_entropy(p)
            assert -math.log(4) - 1e-9 <= b <= 1e-9


class TestLoss:
    def test_zero_weight_limit_reduces_to_reconstruction(self):
        model = build_mixae(tiny_config(), seed=6)
        batch = np.random.default_rng(3).uniform(0, 1, (4, 16, 16, 1))
        fwd = mixae_forward(model, batch)
        weights = MixaeWeights(theta=2.0, alpha=1e-30, gamma=1e-30)
        loss = mixae_loss(fwd, batch, weights)
        assert loss.total == pytest.approx(2.0 * loss.reconstruction, rel=1e-12)

    def test_perfect_reconstruction_zero_term(self):
        model = build_mixae(tiny_config(), seed=7)
        batch = np.random.default_rng(4).uniform(0, 1, (3, 16, 16, 1))
        fwd = mixae_forward(model, batch)
        fwd.reconstructions[...] = batch[None, ...]
        loss = mixae_loss(fwd, batch, MixaeWeights(0.1, 0.01, 1e5))
        assert loss.reconstruction == 0.0

    def test_scalar_assembly_arithmetic(self):
        total = 0.1 * 2.0 + 0.01 * 0.69 + 1e5 * (-0.69)
        assert total == pytest.approx(-68999.7931, abs=1e-6)

    def test_decomposition_identity(self):
        model = build_mixae(tiny_config(), seed=8)
        batch = np.random.default_rng(5).uniform(0, 1, (5, 16, 16, 1))
        fwd = mixae_forward(model, batch)
        w = MixaeWeights(0.1, 0.01, 1e5)
        loss = mixae_loss(fwd, batch, w)
        assert loss.total == pytest.approx(
            w.theta * loss.reconstruction + w.alpha * loss.sample_entropy + w.gamma * loss.batch_entropy,
            abs=1e-9,
        )


class TestGradients:
    @pytest.mark.parametrize("weights", [
        MixaeWeights(0.1, 0.01, 1.0),
        MixaeWeights(1.0, 0.5, 10.0),
    ])
    def test_full_loss_matches_finite_differences(self, weights):
        config = tiny_config(k=2)
        model = build_mixae(config, seed=9)
        rng = np.random.default_rng(6)
        batch = rng.uniform(0.1, 0.9, (3, 16, 16, 1))

        params0 = [p.copy() for p in model.parameters()]
        flat0 = np.concatenate([p.ravel() for p in params0])

        def unflatten(flat):
            out, off = [], 0
            for p in params0:
                out.append(flat[off : off + p.size].reshape(p.shape))
                off += p.size
            return out

        def loss_at(flat):
            model.set_parameters(unflatten(flat))
            fwd = mixae_forward(model, batch)
            return mixae_loss(fwd, batch, weights).total

        fwd = mixae_forward(model, batch)
        grads = mixae_backward(model, fwd, batch, weights)
        analytic = np.concatenate([g.ravel() for g in grads])
        coords = np.random.default_rng(7).choice(flat0.size, size=64, replace=False)
        fd = finite_difference_gradient(loss_at, flat0.copy(), coords)
        model.set_parameters(params0)
        rel = np.abs(analytic[coords] - fd) / np.maximum.reduce(
            [np.abs(analytic[coords]), np.abs(fd), np.full(64, 1e-6)]
        )
        assert rel.max() <= 1e-4, f"worst relative error {rel.max():.2e}"


class TestTrainMixae:
    def test_history_and_determinism(self):
        images, labels = two_pattern_images()
        config = tiny_config(holdout=0.25)
        w = MixaeWeights(0.1, 0.01, 10.0)
        a = train_mixae(images, config, w, epochs=3, batch_size=16, seed=11, labels=labels)
        b = train_mixae(images, config, w, epochs=3, batch_size=16, seed=11, labels=labels)
        assert a.status == "ok"
        assert len(a.history) == 3
        assert a.history == b.history
        pa = np.concatenate([p.ravel() for p in a.model.parameters()])
        pb = np.concatenate([p.ravel() for p in b.model.parameters()])
        assert pa.tobytes() == pb.tobytes()
        for row in a.history:
            assert {"epoch", "r", "s", "b", "total", "ari", "acc"} <= set(row)
            assert row["total"] == pytest.approx(
                0.1 * row["r"] + 0.01 * row["s"] + 10.0 * row["b"], abs=1e-9
            )
            assert np.isfinite(row["total"])

    def test_holdout_split_disjoint(self):
        images, _ = two_pattern_images(n=40)
        config = tiny_config(holdout=0.25)
        res = train_mixae(images, config, MixaeWeights(0.1, 0.01, 1.0), 1, 16, seed=12)
        assert len(res.holdout_indices) == 10
        assert len(res.train_indices) == 30
        assert not set(res.holdout_indices) & set(res.train_indices)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_aborts_with_last_good_params(self):
        images, _ = two_pattern_images(n=30)
        config = MixaeConfig(
            k=2, resolution=16, latent_dim=6, holdout_fraction=0.0,
            adam=AdamConfig(eta=1e150), clip_norm=0.0,
        )
        res = train_mixae(images, config, MixaeWeights(1.0, 1.0, 1e8), 4, 16, seed=13)
        assert res.status == "diverged"
        assert all(np.all(np.isfinite(p)) for p in res.model.parameters())

    def test_collapse_flagged(self):
        # Identical inputs force identical confidences; sample entropy then
        # drives every sample one-hot onto the same cluster.
        images = np.full((24, 16, 16), 0.5)
        config = tiny_config(holdout=0.0)
        res = train_mixae(
            images, config, MixaeWeights(theta=1e-9, alpha=50.0, gamma=1e-9),
            epochs=8, batch_size=24, seed=14,
        )
        assert res.status == "collapsed"

    def test_label_alignment_checked(self):
        images, labels = two_pattern_images(n=20)
        with pytest.raises(ContractError):
            train_mixae(images, tiny_config(), MixaeWeights(0.1, 0.01, 1.0), 1, 8,
                        seed=0, labels=labels[:-1])


class TestAssignClusters:
    def test_uniform_p_ties_break_to_zero(self):
        config = tiny_config(k=3)
        model = build_mixae(config, seed=15)
        enc0 = [p.copy() for p in model.encoders[0].parameters()]
        dec0 = [p.copy() for p in model.decoders[0].parameters()]
        for i in range(1, config.k):
            model.encoders[i].set_parameters(enc0)
            model.decoders[i].set_parameters(dec0)
        final = model.assign_net.layers[-1]
        final.w[...] = 0.0
        final.b[...] = 0.0
        images = np.random.default_rng(8).uniform(0, 1, (5, 16, 16))
        assert assign_clusters(model, images).tolist() == [0] * 5

    def test_argmax_rule(self):
        images, labels = two_pattern_images(n=30)
        res = train_mixae(images, tiny_config(), MixaeWeights(0.1, 0.01, 10.0), 2, 16, seed=16)
        from spiralcluster.mixae import confidences

        p = confidences(res.model, images)
        assert np.array_equal(assign_clusters(res.model, images), p.argmax(axis=1))


class TestGridSearch:
    def test_paper_shaped_grid_axes(self):
        spec = GridSearchSpec()
        assert np.allclose(spec.axis("theta"), [10.0**e for e in range(-1, 6)])
        assert np.allclose(spec.axis("alpha"), [10.0**e for e in range(-5, 0)])
        assert np.allclose(spec.axis("gamma"), [1e3, 1e4, 1e5])

    def test_fractional_exponents_supported(self):
        spec = GridSearchSpec(gamma_exponents=(3.0, 5.0, 5))
        assert spec.axis("gamma")[1] == pytest.approx(3.162e3, rel=1e-3)
        assert mixae.FILTERED_OPTIMUM[2] == pytest.approx(10**3.5, rel=1e-3)

    def test_single_cell_matches_direct_run(self):
        images, labels = two_pattern_images(n=24)
        config = tiny_config(holdout=0.0)
        spec = GridSearchSpec(
            theta_exponents=(-1.0, -1.0, 1),
            alpha_exponents=(-2.0, -2.0, 1),
            gamma_exponents=(1.0, 1.0, 1),
        )
        out = grid_search(spec, images, config, epochs=2, batch_size=12, seed=17,
                          runs_per_cell=1, labels=labels)
        assert len(out["cells"]) == 1
        run = out["cells"][0]["runs"][0]
        direct = train_mixae(
            images, config, MixaeWeights(0.1, 0.01, 10.0), 2, 12,
            seed=run["seed"], labels=labels,
        )
        assert run["final_total"] == direct.history[-1]["total"]
        assert run["ari"] == direct.history[-1]["ari"]
        assert out["best_index"] == 0

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergent_cells_recorded_not_fatal(self):
        images, _ = two_pattern_images(n=16)
        config = MixaeConfig(
            k=2, resolution=16, latent_dim=6, holdout_fraction=0.0,
            adam=AdamConfig(eta=1e150), clip_norm=0.0,
        )
        spec = GridSearchSpec(
            theta_exponents=(0.0, 0.0, 1),
            alpha_exponents=(0.0, 0.0, 1),
            gamma_exponents=(8.0, 8.0, 1),
        )
        out = grid_search(spec, images, config, epochs=3, batch_size=8, seed=18)
        assert out["cells"][0]["runs"][0]["status"] == "diverged"
        assert out["best_index"] is None


class TestCheckpoint:
    def test_round_trip_preserves_assignments(self, tmp_path):
        images, labels = two_pattern_images(n=30)
        res = train_mixae(images, tiny_config(), MixaeWeights(0.1, 0.01, 10.0), 2, 16, seed=19)
        path = tmp_path / "mixae.atm1"
        save_mixae(path, res.model, {"seed": 19})
        loaded, header = load_mixae(path)
        assert header["seed"] == 19
        assert np.array_equal(
            assign_clusters(loaded, images), assign_clusters(res.model, images)
        )

    def test_run_artifacts(self, tmp_path):
        images, labels = two_pattern_images(n=24)
        config = tiny_config(holdout=0.25)
        res = train_mixae(images, config, MixaeWeights(0.1, 0.01, 10.0), 2, 12,
                          seed=20, labels=labels)
        mixae.save_run_artifacts(tmp_path / "run", res, config)
        assert (tmp_path / "run" / "model.atm1").exists()
        history = (tmp_path / "run" / "history.csv").read_text().splitlines()
        assert history[0] == "epoch,r,s,b,total,ari,acc"
        assert len(history) == 3
        import json

        run_doc = json.loads((tmp_path / "run" / "run.json").read_text())
        assert run_doc["status"] == "ok"
        assert run_doc["weights"]["gamma"] == 10.0
        # history.csv re-parses into the exact floats: the decomposition
        # identity survives the round trip.
        for line in history[1:]:
            epoch, r, s, b, total, ari, acc = (float(v) for v in line.split(","))
            assert total == 0.1 * r + 0.01 * s + 10.0 * b
