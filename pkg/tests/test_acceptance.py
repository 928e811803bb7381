"""Acceptance gate: one test per shipping criterion, one PASS/FAIL line each."""
import functools
import hashlib
import time

import numpy as np
import pytest
from conftest import make_texture
from fastapi.testclient import TestClient

from sifid import baselines, correlation, subjective
from sifid.augment import CATALOG, build_distorted_set, catalog_by_tag
from sifid.correlation import CorrelationCurve, classify_noise, pcc, select_si_fid, srocc
from sifid.encoder import Encoder, EncoderConfig, backward, forward_pair, init_encoder, preprocess
from sifid.fid import GaussianStats, frechet_distance, score_stitched, sqrtm_psd
from sifid.imagecore import Image, save_image
from sifid.rating_service import RatingStore, create_app
from sifid.synthgen import build_severity_ladder
from sifid.trainer import TrainConfig, cosine_loss_grad, mean_pair_cosine, train_on_images


def _gate(name):
    def deco(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            try:
                fn(*args, **kwargs)
            except BaseException:
                print(f"[ACCEPT] {name}: FAIL")
                raise
            print(f"[ACCEPT] {name}: PASS")

        return run

    return deco


@pytest.fixture(scope="module")
def severity_run():
    """Shared 10-source ladder plus a 20-epoch contrastive run."""
    sources = [make_texture(96, 128, seed=7000 + i) for i in range(10)]
    bundle = build_severity_ladder(sources, 11)
    cfg = TrainConfig(
        noise=catalog_by_tag("colorjitter_b0.5_h0.3"),
        epochs=20,
        batch_size=10,
        learning_rate=0.05,
        momentum=0.9,
        seed=5,
        loss_mode="attract",
        encoder=EncoderConfig(
            input_side=16, conv_channels=(4, 8), feature_dim=16, init_seed=2
        ),
    )
    t0 = time.perf_counter()
    series = train_on_images(sources, cfg)
    curve = correlation.build_curve(series, bundle, bundle.subjective)
    return {"bundle": bundle, "series": series, "curve": curve,
            "elapsed": time.perf_counter() - t0}


@_gate("frechet distance: closed forms + symmetry/nonnegativity on 1000 pairs")
def test_frechet_distance_closed_forms_and_random_pairs():
    t0 = time.perf_counter()
    one_a = GaussianStats(np.array([1.0]), np.array([[4.0]]))
    one_b = GaussianStats(np.array([3.0]), np.array([[9.0]]))
    expect = (1.0 - 3.0) ** 2 + 4.0 + 9.0 - 2.0 * 2.0 * 3.0
    assert abs(frechet_distance(one_a, one_b) - expect) <= 1e-9

    mu1, mu2 = np.array([0.0, 1.0, -2.0]), np.array([2.0, -1.0, 0.5])
    v1, v2 = np.array([1.0, 4.0, 0.25]), np.array([9.0, 1.0, 4.0])
    diag_a = GaussianStats(mu1, np.diag(v1))
    diag_b = GaussianStats(mu2, np.diag(v2))
    expect = float(
        np.sum((mu1 - mu2) ** 2 + v1 + v2 - 2.0 * np.sqrt(v1) * np.sqrt(v2))
    )
    assert abs(frechet_distance(diag_a, diag_b) - expect) <= 1e-9

    g = np.random.default_rng(410)
    for _ in range(1000):
        d = int(g.integers(1, 65))
        stats = []
        for _side in range(2):
            a = g.standard_normal((d, d))
            cov = a @ a.T / d + 0.1 * np.eye(d)
            stats.append(GaussianStats(g.standard_normal(d), cov))
        fwd = frechet_distance(stats[0], stats[1])
        rev = frechet_distance(stats[1], stats[0])
        assert fwd >= 0.0 and rev >= 0.0
        assert abs(fwd - rev) <= 1e-7 * max(1.0, fwd)
    assert time.perf_counter() - t0 < 10.0


@_gate("matrix square root: rel Frobenius error < 1e-6 on 200 PSD matrices")
def test_psd_matrix_square_root_accuracy():
    t0 = time.perf_counter()
    g = np.random.default_rng(411)
    for d in (2, 8, 32, 128):
        for _ in range(50):
            a = g.standard_normal((d, d))
            mat = a @ a.T
            root = sqrtm_psd(mat)
            err = np.linalg.norm(root @ root - mat) / np.linalg.norm(mat)
            assert err < 1e-6
    assert time.perf_counter() - t0 < 30.0


@_gate("gradients: analytic encoder+loss grads match finite differences")
def test_encoder_loss_gradients_match_finite_differences():
    t0 = time.perf_counter()
    g = np.random.default_rng(412)
    sides = (8, 12, 16)
    channel_pairs = ((2, 3), (3, 4), (4, 8))
    for trial in range(20):
        config = EncoderConfig(
            input_side=int(sides[trial % 3]),
            conv_channels=channel_pairs[trial % len(channel_pairs)],
            feature_dim=int(g.integers(3, 9)),
            init_seed=int(g.integers(0, 1000)),
        )
        mode = "attract" if trial % 2 == 0 else "repel"
        side = config.input_side
        img_a = Image(g.uniform(0.05, 0.95, (side, side, 3)))
        img_b = Image(g.uniform(0.05, 0.95, (side, side, 3)))
        enc = init_encoder(config)

        def loss_at(params):
            probe = Encoder(config, params.copy())
            cache = forward_pair(probe, img_a, img_b)
            loss, _, _ = cosine_loss_grad(*cache.features, mode)
            return loss

        cache = forward_pair(enc, img_a, img_b)
        _, ga, gb = cosine_loss_grad(*cache.features, mode)
        analytic = backward(enc, cache, ga, gb)

        coords = g.choice(enc.params.size, size=5, replace=False)
        for c in coords:
            h = 1e-6 * max(1.0, abs(enc.params[c]))
            plus = enc.params.copy()
            plus[c] += h
            minus = enc.params.copy()
            minus[c] -= h
            fd = (loss_at(plus) - loss_at(minus)) / (2.0 * h)
            err = abs(analytic[c] - fd)
            assert err < 1e-4 * max(abs(analytic[c]), abs(fd)) or err < 1e-7
    assert time.perf_counter() - t0 < 60.0


@_gate("training sanity: held-out pair similarity rises over 10 epochs")
def test_training_improves_held_out_pair_similarity():
    t0 = time.perf_counter()
    noise = catalog_by_tag("colorjitter_b0.5_h0.3")
    train = [make_texture(64, 64, seed=5200 + i) for i in range(32)]
    held = [make_texture(64, 64, seed=6100 + i) for i in range(8)]
    cfg = TrainConfig(
        noise=noise,
        epochs=10,
        batch_size=32,
        learning_rate=0.01,
        momentum=0.9,
        seed=2,
        loss_mode="attract",
        encoder=EncoderConfig(
            input_side=16, conv_channels=(4, 8), feature_dim=16, init_seed=2
        ),
    )
    series = train_on_images(train, cfg)
    before = mean_pair_cosine(series.encoder_at(0), held, noise, seed=77)
    after = mean_pair_cosine(series.encoder_at(10), held, noise, seed=77)
    assert after > before
    assert time.perf_counter() - t0 < 300.0


@_gate("rank correlation: closed forms + tie-free formula vs rank Pearson")
def test_rank_correlation_closed_forms():
    x = np.arange(1.0, 21.0)
    assert abs(pcc(2.0 * x + 1.0, x) - 1.0) <= 1e-12
    assert abs(srocc(x**3, x) - 1.0) <= 1e-12
    assert abs(pcc(-x, x) + 1.0) <= 1e-12
    assert abs(srocc(-(x**3), x) + 1.0) <= 1e-12

    g = np.random.default_rng(413)
    for _ in range(100):
        a = g.uniform(0.0, 1.0, 20)
        b = g.uniform(0.0, 1.0, 20)
        ranks_a = np.argsort(np.argsort(a)).astype(np.float64) + 1.0
        ranks_b = np.argsort(np.argsort(b)).astype(np.float64) + 1.0
        assert abs(srocc(a, b) - pcc(ranks_a, ranks_b)) <= 1e-12


@_gate("normalization: literal mode collapses to 0, per-critic moments hold")
def test_normalization_degeneracy_and_per_critic_moments():
    g = np.random.default_rng(414)
    low = g.integers(0, 50, 10).astype(np.float64)
    raw = np.stack([low, low + g.integers(1, 51, 10).astype(np.float64)])
    table = subjective.ScoreTable(
        critics=["c0", "c1"],
        images=[f"img_{j}" for j in range(10)],
        raw=raw,
    )
    collapsed = subjective.aggregate(subjective.normalize(table, "per_image_literal"))
    assert all(s.value == 0.0 for s in collapsed)

    wide = subjective.ScoreTable(
        critics=[f"c{i}" for i in range(5)],
        images=[f"img_{j}" for j in range(40)],
        raw=g.uniform(0.0, 100.0, (5, 40)),
    )
    z = subjective.normalize(wide, "per_critic").values
    assert np.all(np.abs(z.mean(axis=1)) <= 1e-9)
    assert np.all(np.abs(z.std(axis=1, ddof=1) - 1.0) <= 1e-9)


@_gate("end-to-end: severity ladder SROCC >= 0.8 and selected beats epoch 0")
def test_end_to_end_severity_pipeline(severity_run):
    bundle, series, curve = (
        severity_run["bundle"],
        severity_run["series"],
        severity_run["curve"],
    )
    selection = select_si_fid([curve])
    enc_sel = series.encoder_at(selection.epoch)

    scores = []
    subj_means = []
    for group in bundle.groups:
        refs = [bundle.images[i] for i in group.reference_ids]
        sts = [bundle.images[i] for i in group.stitched_ids]
        scores.append(score_stitched(refs, sts, enc_sel))
        subj_means.append(np.mean([bundle.subjective[i] for i in group.stitched_ids]))
    severity_srocc = srocc(-np.asarray(scores), np.asarray(subj_means))
    assert severity_srocc >= 0.8
    assert curve.srocc[selection.epoch] >= curve.srocc[0]
    assert severity_run["elapsed"] < 900.0


def _selection_fixture_curves():
    """14 tracks, 21 entries each; exactly 3 built to classify positive."""
    epochs = np.arange(21, dtype=np.float64)
    curves = []
    for i, spec in enumerate(CATALOG):
        if spec.tag == "colorjitter_b0.5_h0.3":
            track = 0.2 + 0.6 * epochs / 20.0
        elif spec.tag == "hflip_p0.5":
            track = 0.2 + 0.4 * epochs / 20.0
        elif spec.tag == "rrc_100":
            track = 0.2 + 0.5 * epochs / 20.0
            track[3:16:2] += 0.08
        elif i % 2 == 0:
            track = 0.8 - 0.5 * epochs / 20.0 - 0.01 * i
        else:
            track = np.full(21, 0.5 - 0.01 * i)
        curves.append(CorrelationCurve(spec, track, track))
    return curves


@_gate("selection: 3 constructed positives found, winner stable over shuffles")
def test_noise_selection_is_deterministic():
    curves = _selection_fixture_curves()
    positives = {
        c.noise.tag for c in curves if classify_noise(c).positive
    }
    assert positives == {"colorjitter_b0.5_h0.3", "hflip_p0.5", "rrc_100"}

    g = np.random.default_rng(415)
    picks = []
    for _ in range(10):
        shuffled = list(curves)
        g.shuffle(shuffled)
        sel = select_si_fid(shuffled)
        picks.append((sel.noise.tag, sel.epoch, sel.checkpoint_name))
    assert len(set(picks)) == 1
    assert picks[0] == ("colorjitter_b0.5_h0.3", 20, "colorjitter_b0.5_h0.3_020.ckpt")


@_gate("comparison: metrics ranked by mean SROCC, anti-correlated probe last")
def test_indicator_comparison_ranks_anticorrelated_last(severity_run):
    bundle = severity_run["bundle"]
    group_scores = {"mse": {}, "psnr": {}, "dummy": {}}
    group_subj = {}
    for group in bundle.groups:
        mse_vals, psnr_vals, dummy_vals, subj_vals = [], [], [], []
        for sid in group.stitched_ids:
            ref = bundle.images[bundle.source_ids[sid]]
            img = bundle.images[sid]
            mse_vals.append(baselines.mse(ref, img))
            psnr_vals.append(baselines.psnr(ref, img))
            dummy_vals.append(bundle.subjective[sid])
            subj_vals.append(bundle.subjective[sid])
        group_scores["mse"][group.group_id] = mse_vals
        group_scores["psnr"][group.group_id] = psnr_vals
        group_scores["dummy"][group.group_id] = dummy_vals
        group_subj[group.group_id] = subj_vals

    orientations = {"mse": "lower_better", "psnr": "higher_better", "dummy": "lower_better"}
    report = correlation.compare_indicators(group_scores, group_subj, orientations)
    by_rank = sorted(report, key=lambda m: report[m]["rank"])
    sroccs = [report[m]["mean_srocc"] for m in by_rank]
    assert sroccs == sorted(sroccs, reverse=True)
    assert by_rank[-1] == "dummy"
    assert report["dummy"]["mean_srocc"] <= -0.8


@_gate("distortion corpus: 519 sources -> 7266 outputs, byte-reproducible")
def test_distortion_corpus_count_and_reproducibility(tmp_path):
    src = tmp_path / "sources"
    src.mkdir()
    for i in range(519):
        save_image(make_texture(48, 64, seed=30000 + i), src / f"fx_{i:04d}.png")

    def run(out):
        manifest = build_distorted_set(src, CATALOG, 9, out)
        digests = {}
        for entry in manifest:
            p = out / entry["output_path"]
            digests[entry["output_path"]] = hashlib.sha256(p.read_bytes()).hexdigest()
        return manifest, digests

    manifest_a, digests_a = run(tmp_path / "run_a")
    manifest_b, digests_b = run(tmp_path / "run_b")
    assert len(manifest_a) == 519 * 14 == 7266
    assert len(digests_a) == 7266
    assert digests_a == digests_b


@_gate("rating round trip: 10 scores over HTTP -> complete 1x10 score table")
def test_rating_round_trip_http(tmp_path):
    bundle_dir = tmp_path / "imgs"
    bundle_dir.mkdir()
    for i in range(10):
        save_image(make_texture(16, 16, seed=700 + i), bundle_dir / f"img_{i:02d}.png")
    store = RatingStore(tmp_path / "scores.ndjson")
    store.register_bundle("accept", bundle_dir)
    client = TestClient(create_app(store))

    created = client.post("/sessions", json={"critic_id": "scripted", "bundle_id": "accept"})
    assert created.status_code == 201
    sid = created.json()["session_id"]

    submitted = {}
    for k in range(10):
        item = client.get(f"/sessions/{sid}/next").json()
        if k == 2:
            reject = client.post(
                f"/sessions/{sid}/scores",
                json={"image_id": item["image_id"], "score": 100.5},
            )
            assert reject.status_code == 400
            assert reject.json()["error_class"] == "ScoreOutOfRange"
        value = {0: 0.0, 1: 100.0}.get(k, 7.5 * k)
        ack = client.post(
            f"/sessions/{sid}/scores", json={"image_id": item["image_id"], "score": value}
        )
        assert ack.status_code == 200
        submitted[item["image_id"]] = value

    export = client.get("/bundles/accept/export")
    assert export.status_code == 200
    csv_path = tmp_path / "ratings.csv"
    csv_path.write_text(export.text)
    table = subjective.ingest_csv(csv_path)
    assert table.n_critics == 1 and table.n_images == 10
    assert not np.isnan(table.raw).any()
    for j, image_id in enumerate(table.images):
        assert table.raw[0, j] == submitted[image_id]
    store.close()
