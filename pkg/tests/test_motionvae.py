import numpy as np
import pytest
import torch

from zipmo import synthkin as sk
from zipmo.motionvae import (CapacityError, FrameEmbedding, LatentGrid, OptimConfig,
                             Posterior, VaeConfig, VaeConfigError, VaeModel, kl_divergence,
                             load_vae, reparameterize, save_vae, vae_loss)
from zipmo.nnkit import AttentionConfig, FourierSpec
from zipmo.seeding import derive_seed

from oracles import kl_monte_carlo


def _tiny_cfg(**kw):
    base = dict(horizon=16, t_c=16, grid_h=4, grid_w=4, latent_dim=4,
                nn=AttentionConfig(d_model=64, n_heads=2, depth=2),
                fourier=FourierSpec(n_freq=8), frame_dim=16, patch_size=8)
    base.update(kw)
    return VaeConfig(**base)


def _scene_tensors(model, scn, n_tracks=None):
    arr = scn.tracks.as_array()
    if n_tracks is not None:
        arr = arr[:n_tracks]
    dtype = next(model.parameters()).dtype
    tracks = torch.from_numpy(arr[None]).to(dtype)
    feats = model.frame_features(torch.from_numpy(scn.raster[None]).to(dtype))
    return tracks, feats


class TestConfig:
    def test_t_c_must_divide_horizon(self):
        with pytest.raises(VaeConfigError):
            VaeConfig(horizon=48, t_c=32)

    def test_t_c_domain(self):
        with pytest.raises(VaeConfigError):
            _tiny_cfg(t_c=3, horizon=9)

    def test_mae_fraction_open_interval(self):
        with pytest.raises(VaeConfigError):
            _tiny_cfg(mae_fraction=1.0)

    def test_latent_token_shape_law(self):
        # (T / t_c) * H * W for every preset, independent of track count
        for t_c in (2, 4, 8, 16, 32, 64):
            cfg = VaeConfig(horizon=64, t_c=t_c, grid_h=4, grid_w=4, latent_dim=2,
                            nn=AttentionConfig(d_model=16, n_heads=2, depth=1),
                            fourier=FourierSpec(n_freq=2), frame_dim=8, patch_size=8)
            assert cfg.latent_tokens == (64 // t_c) * 16

    def test_round_trip_dict(self):
        cfg = _tiny_cfg()
        assert VaeConfig.from_dict(cfg.to_dict()) == cfg


class TestPosteriorOps:
    def test_kl_zero_at_standard_normal(self):
        p = Posterior(mean=np.zeros((1, 2, 2, 2)), logvar=np.zeros((1, 2, 2, 2)))
        assert kl_divergence(p) == 0.0

    def test_kl_single_coordinate_closed_form(self):
        p = Posterior(mean=np.array([[[[1.0]]]]), logvar=np.array([[[[0.0]]]]))
        assert abs(kl_divergence(p) - 0.5) < 1e-12

    def test_kl_nonnegative_random(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            p = Posterior(mean=rng.normal(0, 2, (1, 2, 2, 3)),
                          logvar=rng.uniform(-2, 1, (1, 2, 2, 3)))
            assert kl_divergence(p) >= 0.0

    def test_kl_matches_monte_carlo(self):
        rng = np.random.default_rng(1)
        mu = rng.normal(0, 1.5, (2, 2))
        logvar = rng.uniform(-1.5, 1.0, (2, 2))
        p = Posterior(mean=mu[None, None], logvar=logvar[None, None])
        mc = kl_monte_carlo(mu, logvar, 200_000, np.random.default_rng(2))
        assert abs(mc - kl_divergence(p)) / kl_divergence(p) < 0.01

    def test_reparameterize_logvar_floor_returns_mean(self):
        mean = np.random.default_rng(3).normal(0, 1, (1, 2, 2, 2))
        p = Posterior(mean=mean, logvar=np.full_like(mean, -120.0))
        z = reparameterize(p, seed=0)
        assert np.allclose(z.z, mean)

    def test_reparameterize_seeds_differ_and_repeat(self):
        p = Posterior(mean=np.zeros((1, 2, 2, 2)), logvar=np.zeros((1, 2, 2, 2)))
        a, b = reparameterize(p, 1), reparameterize(p, 2)
        assert not np.allclose(a.z, b.z)
        assert np.array_equal(a.z, reparameterize(p, 1).z)

    def test_reparameterize_mean_unbiased(self):
        p = Posterior(mean=np.full((1, 1, 1, 1), 0.7), logvar=np.zeros((1, 1, 1, 1)))
        draws = np.array([reparameterize(p, s).z.item() for s in range(3000)])
        assert abs(draws.mean() - 0.7) < 3.0 / np.sqrt(3000)


class TestEncodeDecode:
    def test_posterior_shape_desk_preset(self):
        cfg = VaeConfig(horizon=64, t_c=64, grid_h=8, grid_w=8, latent_dim=8,
                        nn=AttentionConfig(d_model=32, n_heads=2, depth=1),
                        fourier=FourierSpec(n_freq=4), frame_dim=8, patch_size=8)
        model = VaeModel(cfg, seed=0)
        scn = sk.generate("rotation-cw-ccw", seed=1, n_tracks=8, T=64, resolution=32)
        tracks, feats = _scene_tensors(model, scn)
        mean, logvar = model.encode_batch(tracks, feats)
        assert tuple(mean.shape) == (1, 1, 8, 8, 8)
        assert tuple(logvar.shape) == (1, 1, 8, 8, 8)

    def test_posterior_shape_with_temporal_axis(self):
        cfg = VaeConfig(horizon=64, t_c=16, grid_h=8, grid_w=8, latent_dim=8,
                        nn=AttentionConfig(d_model=32, n_heads=2, depth=1),
                        fourier=FourierSpec(n_freq=4), frame_dim=8, patch_size=8)
        model = VaeModel(cfg, seed=0)
        scn = sk.generate("rotation-cw-ccw", seed=1, n_tracks=4, T=64, resolution=32)
        tracks, feats = _scene_tensors(model, scn)
        mean, _ = model.encode_batch(tracks, feats)
        assert tuple(mean.shape) == (1, 4, 8, 8, 8)

    def test_horizon_mismatch_is_config_error(self, tiny_vae):
        scn = sk.generate("bounce", seed=2, n_tracks=4, T=8, resolution=32)
        with pytest.raises(VaeConfigError):
            tiny_vae.encode(scn.tracks, tiny_vae.encode_frame(scn.raster))

    def test_token_budget_capacity_error(self):
        cfg = _tiny_cfg(max_encoder_tokens=64)
        model = VaeModel(cfg, seed=0)
        scn = sk.generate("bounce", seed=2, n_tracks=8, T=16, resolution=32)
        with pytest.raises(CapacityError):
            model.encode(scn.tracks, model.encode_frame(scn.raster))

    def test_encoder_permutation_invariant_over_tracks(self):
        cfg = _tiny_cfg()
        model = VaeModel(cfg, seed=0).double().eval()
        scn = sk.generate("rotation-cw-ccw", seed=7, n_tracks=10, T=16, resolution=32)
        tracks, feats = _scene_tensors(model, scn)
        mean1, logvar1 = model.encode_batch(tracks, feats)
        perm = torch.randperm(10)
        mean2, logvar2 = model.encode_batch(tracks[:, perm], feats)
        assert (mean1 - mean2).abs().max() <= 1e-5
        assert (logvar1 - logvar2).abs().max() <= 1e-5

    def test_decode_shape_and_determinism(self, tiny_vae, rotation_scene):
        f0 = tiny_vae.encode_frame(rotation_scene.raster)
        post = tiny_vae.encode(rotation_scene.tracks, f0)
        z = LatentGrid(z=post.mean, config={})
        rng = np.random.default_rng(0)
        queries = rng.uniform(-0.9, 0.9, (40, 2))
        out1 = tiny_vae.decode(queries, z, f0)
        out2 = tiny_vae.decode(queries, z, f0)
        assert out1.shape == (40, 16, 2)
        assert np.array_equal(out1, out2)

    def test_decode_queries_disjoint_from_encoded(self, tiny_vae, rotation_scene):
        # densification contract: query anywhere, not just at encoded tracks
        f0 = tiny_vae.encode_frame(rotation_scene.raster)
        post = tiny_vae.encode(rotation_scene.tracks, f0)
        out = tiny_vae.decode(np.array([[0.123, -0.456]]), LatentGrid(z=post.mean, config={}), f0)
        assert np.all(np.isfinite(out))

    def test_decode_empty_queries_rejected(self, tiny_vae, rotation_scene):
        f0 = tiny_vae.encode_frame(rotation_scene.raster)
        post = tiny_vae.encode(rotation_scene.tracks, f0)
        with pytest.raises(VaeConfigError):
            tiny_vae.decode(np.zeros((0, 2)), LatentGrid(z=post.mean, config={}), f0)

    def test_decoder_permutation_equivariant_over_queries(self):
        cfg = _tiny_cfg()
        model = VaeModel(cfg, seed=0).double().eval()
        scn = sk.generate("bounce", seed=3, n_tracks=6, T=16, resolution=32)
        f0 = model.encode_frame(scn.raster)
        post = model.encode(scn.tracks, f0)
        z = LatentGrid(z=post.mean, config={})
        rng = np.random.default_rng(1)
        q = rng.uniform(-0.8, 0.8, (12, 2))
        perm = rng.permutation(12)
        out = model.decode(q, z, f0)
        out_perm = model.decode(q[perm], z, f0)
        assert np.abs(out[perm] - out_perm).max() <= 1e-5

    def test_decode_chunking_matches_unchunked(self):
        cfg = _tiny_cfg()
        model = VaeModel(cfg, seed=0).double().eval()
        scn = sk.generate("bounce", seed=4, n_tracks=6, T=16, resolution=32)
        f0 = model.encode_frame(scn.raster)
        post = model.encode(scn.tracks, f0)
        z = LatentGrid(z=post.mean, config={})
        q = np.random.default_rng(2).uniform(-0.8, 0.8, (9, 2))
        full = model.decode(q, z, f0)
        model._decode_chunk = 16  # force many chunks (one trajectory each)
        chunked = model.decode(q, z, f0)
        model._decode_chunk = 8192
        assert np.abs(full - chunked).max() <= 1e-12


class TestEncodeFrame:
    def test_paper_patch_geometry(self):
        cfg = _tiny_cfg(patch_size=14, frame_dim=12)
        model = VaeModel(cfg, seed=0)
        f0 = model.encode_frame(np.zeros((224, 224)))
        assert f0.features.shape == (16, 16, 12)
        assert f0.source == "learned-patch"

    def test_desk_patch_geometry(self):
        cfg = _tiny_cfg(patch_size=8, frame_dim=16)
        model = VaeModel(cfg, seed=0)
        f0 = model.encode_frame(np.zeros((64, 64)))
        assert f0.features.shape == (8, 8, 16)

    def test_feature_file_round_trip(self, tmp_path, tiny_vae):
        feats = np.random.default_rng(0).standard_normal((4, 4, 16))
        path = tmp_path / "f.npy"
        np.save(path, feats)
        f0 = tiny_vae.encode_frame(path=path)
        assert f0.source == "file"
        assert np.array_equal(f0.features, feats)

    def test_non_square_raster_rejected(self, tiny_vae):
        with pytest.raises(VaeConfigError):
            tiny_vae.encode_frame(np.zeros((64, 32)))

    def test_too_small_raster_rejected(self, tiny_vae):
        with pytest.raises(VaeConfigError):
            tiny_vae.encode_frame(np.zeros((16, 16)))

    def test_feature_file_channel_mismatch(self, tmp_path, tiny_vae):
        path = tmp_path / "f.npy"
        np.save(path, np.zeros((4, 4, 7)))
        with pytest.raises(VaeConfigError):
            tiny_vae.encode_frame(path=path)


class TestVaeLoss:
    def _setup(self, seed=0, n_tracks=8, kl_weight=0.0):
        cfg = _tiny_cfg(kl_weight=kl_weight)
        model = VaeModel(cfg, seed=seed).double()
        scn = sk.generate("rotation-cw-ccw", seed=5, n_tracks=n_tracks, T=16, resolution=32)
        tracks, feats = _scene_tensors(model, scn)
        return model, tracks, feats

    def test_rigged_decoder_gives_zero_loss(self):
        model, tracks, feats = self._setup()

        def rigged(queries, z, f, time_indices=None):
            # returns the ground-truth trajectory whose start matches each query
            B, Q, _ = queries.shape
            out = torch.zeros(B, Q, tracks.shape[2], 2, dtype=queries.dtype)
            for b in range(B):
                for q in range(Q):
                    match = (tracks[b, :, 0, :] - queries[b, q]).abs().sum(-1).argmin()
                    out[b, q] = tracks[b, match]
            return out

        object.__setattr__(model, "decode_batch", rigged)
        losses = vae_loss(model, tracks, feats, seed=3)
        assert losses["recon"].item() == 0.0
        assert losses["masked"].item() == 0.0
        assert losses["total"].item() == 0.0  # kl_weight = 0

    def test_kl_weight_linearity(self):
        beta = 1e-7
        model_a, tracks, feats = self._setup(kl_weight=0.0)
        cfg_b = _tiny_cfg(kl_weight=beta)
        model_b = VaeModel(cfg_b, seed=0).double()
        model_b.load_state_dict(model_a.state_dict())
        la = vae_loss(model_a, tracks, feats, seed=9)
        lb = vae_loss(model_b, tracks, feats, seed=9)
        assert torch.allclose(la["kl"], lb["kl"])
        diff = lb["total"].item() - la["total"].item()
        assert abs(diff - beta * la["kl"].item()) < 1e-12

    def test_terms_match_loop_oracle(self):
        model, tracks, feats = self._setup()
        seed = 21
        losses = vae_loss(model, tracks, feats, seed=seed)

        # reproduce the documented split/noise chain, then recompute by loops
        cfg = model.cfg
        B, N, T, _ = tracks.shape
        n_mae = min(max(int(round(cfg.mae_fraction * N)), 1), N - 1)
        n_enc = N - n_mae
        rng = np.random.default_rng(derive_seed(seed, "mae-split"))
        perms = np.stack([rng.permutation(N) for _ in range(B)])
        shuffled = tracks[0][perms[0]][None]
        mean, logvar = model.encode_batch(shuffled[:, :n_enc], feats)
        eps = torch.from_numpy(np.random.default_rng(derive_seed(seed, "reparam"))
                               .standard_normal(tuple(mean.shape)))
        z = mean + torch.exp(0.5 * logvar) * eps
        pred = model.decode_batch(shuffled[:, :, 0, :], z, feats)

        def l1_sum(a, b):
            total = 0.0
            for t in range(a.shape[0]):
                for c in range(2):
                    total += abs(float(a[t, c]) - float(b[t, c]))
            return total

        recon = sum(l1_sum(pred[0, i], shuffled[0, i]) for i in range(n_enc)) / n_enc
        masked = sum(l1_sum(pred[0, i], shuffled[0, i]) for i in range(n_enc, N)) / n_mae
        kl = 0.0
        mu = mean[0].detach().numpy().reshape(-1)
        lv = logvar[0].detach().numpy().reshape(-1)
        for m_i, v_i in zip(mu, lv):
            kl += 0.5 * (m_i ** 2 + np.exp(v_i) - 1.0 - v_i)
        assert abs(losses["recon"].item() - recon) < 1e-9
        assert abs(losses["masked"].item() - masked) < 1e-9
        assert abs(losses["kl"].item() - kl) < 1e-9

    def test_time_subset_expectation_scale(self):
        model, tracks, feats = self._setup()
        full = vae_loss(model, tracks, feats, seed=2)
        sub = vae_loss(model, tracks, feats, seed=2, time_subset=16)  # T=16: no-op subset
        assert torch.allclose(full["total"], sub["total"])

    def test_single_track_rejected(self):
        model, tracks, feats = self._setup(n_tracks=2)
        with pytest.raises(VaeConfigError):
            vae_loss(model, tracks[:, :1], feats, seed=0)


class TestTraining:
    def test_smoke_loss_decreases(self, tmp_path):
        scenarios = [sk.generate("rotation-cw-ccw", seed=i, n_tracks=10, T=16, resolution=32)
                     for i in range(20)]
        cfg = _tiny_cfg()
        opt = OptimConfig(steps=60, batch_size=6, lr=1e-3, warmup=10)
        model, rows = train_vae_helper(scenarios, cfg, opt, tmp_path)
        assert rows[-1]["total"] < rows[0]["total"]
        assert (tmp_path / "loss_log.csv").exists()
        header = (tmp_path / "loss_log.csv").read_text().splitlines()[0]
        assert header == "step,total,recon,masked,kl"

    def test_checkpoint_reproduces_eval_loss(self, tmp_path):
        scenarios = [sk.generate("bounce", seed=i, n_tracks=8, T=16, resolution=32)
                     for i in range(6)]
        cfg = _tiny_cfg()
        opt = OptimConfig(steps=5, batch_size=3, lr=1e-3, warmup=2)
        model, _ = train_vae_helper(scenarios, cfg, opt, tmp_path)
        path = tmp_path / "vae.ckpt.npz"
        loaded, h = load_vae(path)
        assert isinstance(h, str) and len(h) == 64
        model.eval()
        tracks, feats = _scene_tensors(model, scenarios[0])
        a = vae_loss(model, tracks, feats, seed=4)
        tracks2, feats2 = _scene_tensors(loaded, scenarios[0])
        b = vae_loss(loaded, tracks2, feats2, seed=4)
        assert abs(a["total"].item() - b["total"].item()) <= 1e-9

    def test_empty_dataset_rejected(self):
        from zipmo.motionvae import train_vae
        with pytest.raises(VaeConfigError):
            train_vae([], _tiny_cfg(), OptimConfig(steps=1), seed=0)


def train_vae_helper(scenarios, cfg, opt, out_dir):
    from zipmo.motionvae import train_vae
    return train_vae(scenarios, cfg, opt, seed=0, out_dir=out_dir, tracks_per_scene=8)
