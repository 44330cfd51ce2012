import math
import warnings

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import linalg, ndimage

from metamers.image_metrics import (
    DIRECTIONS,
    GaussianSummary,
    MetricWarning,
    clip_iqa,
    evaluate_pairs,
    fid,
    frechet_distance,
    lpips,
    psnr,
    rase,
    scc,
    ssim,
    total_variation,
    vif,
    write_metric_csv,
)
from metamers.image_metrics.suite import normalized_view
from metamers.image_metrics.signal import tabular_psnr


def rand_image(seed, shape=(3, 32, 32)):
    return np.random.default_rng(seed).uniform(0, 1, shape)


def smooth_image(seed, shape=(3, 64, 64)):
    x = ndimage.gaussian_filter(np.random.default_rng(seed).uniform(0, 1, shape), sigma=(0, 2, 2))
    return (x - x.min()) / (x.max() - x.min())


# PSNR


def test_psnr_cases():
    x = np.zeros((3, 8, 8))
    assert psnr(x, x + 0.5) == pytest.approx(10 * math.log10(4.0), abs=1e-12)
    y = rand_image(0) * 0.9
    assert psnr(y, y + 0.1) == pytest.approx(20.0, abs=1e-6)
    assert psnr(y, y) == math.inf
    assert tabular_psnr(psnr(y, y)) == 99.0


def test_psnr_symmetric():
    a, b = rand_image(1), rand_image(2)
    assert psnr(a, b) == psnr(b, a)


# SSIM


def test_ssim_identity_and_symmetry():
    a, b = rand_image(3), rand_image(4)
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-9)
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)


def test_ssim_inverted_is_negative():
    a = rand_image(5)
    assert ssim(a, 1 - a) < 0


def test_ssim_matches_skimage():
    from skimage.metrics import structural_similarity

    a = smooth_image(6, (3, 40, 48))
    b = np.clip(a + np.random.default_rng(7).normal(0, 0.1, a.shape), 0, 1)
    ref = structural_similarity(a, b, gaussian_weights=True, sigma=1.5, use_sample_covariance=False,
                                data_range=1.0, channel_axis=0)
    assert ssim(a, b) == pytest.approx(ref, abs=1e-9)


def test_ssim_too_small():
    with pytest.raises(ValueError, match="smaller than"):
        ssim(np.zeros((1, 8, 8)), np.zeros((1, 8, 8)))


# TV


def test_tv_cases():
    assert total_variation(np.full((3, 16, 16), 0.3)) == 0.0
    assert total_variation(np.array([[[0.0, 1.0]]])) == pytest.approx(0.5)
    a = rand_image(8)
    assert total_variation(a[:, ::-1, ::-1]) == pytest.approx(total_variation(a), abs=1e-12)


def test_tv_concatenation_seam():
    a, b = rand_image(9, (1, 8, 8)), rand_image(10, (1, 8, 8))
    joined = np.concatenate([a, b], axis=2)
    seam = np.abs(a[:, :, -1] - b[:, :, 0]).sum()
    hw = 8 * 8
    unnorm = lambda x: total_variation(x) * x.shape[1] * x.shape[2]  # noqa: E731
    assert unnorm(joined) == pytest.approx(unnorm(a) + unnorm(b) + seam, abs=1e-9)
    assert unnorm(joined) <= unnorm(a) + unnorm(b) + seam + 1e-12
    assert total_variation(a) * hw == pytest.approx(unnorm(a))


# SCC


def test_scc_cases():
    a = rand_image(11)
    assert scc(a, a) == pytest.approx(1.0, abs=1e-12)
    # laplacian is linear: the response of (c - a) is minus that of a
    assert scc(a, 0.7 - a) == pytest.approx(-1.0, abs=1e-12)
    with pytest.raises(ValueError, match="flat high-pass response"):
        scc(np.full((1, 8, 8), 0.4), a[:1, :8, :8])


def test_scc_direct_pearson():
    a, b = rand_image(12, (1, 16, 16)), rand_image(13, (1, 16, 16))
    k = np.array([[0, 1, 0], [1, -4, 1], [0, 1, 0]], dtype=float)
    ra = ndimage.correlate(a[0], k)[1:-1, 1:-1]
    rb = ndimage.correlate(b[0], k)[1:-1, 1:-1]
    assert scc(a, b) == pytest.approx(np.corrcoef(ra.ravel(), rb.ravel())[0, 1], abs=1e-12)


# RASE


def test_rase_cases():
    assert rase(np.full((3, 4, 4), 0.5), np.full((3, 4, 4), 0.6)) == pytest.approx(20.0, abs=1e-6)
    a, b = rand_image(14), rand_image(15)
    assert rase(a, a) == 0.0
    assert rase(2 * a, 2 * b) == pytest.approx(rase(a, b), rel=1e-12)
    with pytest.raises(ValueError):
        rase(np.zeros((1, 4, 4)), a[:1, :4, :4])


# VIF


def test_vif_identity():
    a = smooth_image(16)
    assert vif(a, a) == pytest.approx(1.0, abs=1e-4)


def test_vif_matches_sewar():
    sewar = pytest.importorskip("sewar")
    a = smooth_image(17)
    b = ndimage.gaussian_filter(a, sigma=(0, 1.2, 1.2))
    ours = vif(a, b)
    ref = sewar.full_ref.vifp(a.transpose(1, 2, 0) * 255.0, b.transpose(1, 2, 0) * 255.0)
    assert 0 < ours < 1
    assert ours == pytest.approx(ref, rel=1e-9)


# frozen from the independent pixel-domain implementation in sewar 0.4.8
VIF_BLUR_FROZEN = 0.6461788767889197


def test_vif_blurred_frozen():
    a = smooth_image(17)
    b = ndimage.gaussian_filter(a, sigma=(0, 1.2, 1.2))
    assert vif(a, b) == pytest.approx(VIF_BLUR_FROZEN, rel=1e-9)


def test_vif_monotone_in_noise():
    a = smooth_image(18)
    rng = np.random.default_rng(0)
    mild = np.clip(a + rng.normal(0, 0.05, a.shape), 0, 1)
    strong = np.clip(a + rng.normal(0, 0.3, a.shape), 0, 1)
    assert vif(a, strong) < vif(a, mild)


def test_vif_small_image_flagged():
    a = rand_image(19, (3, 24, 24))
    with pytest.warns(MetricWarning):
        value, used = vif(a, a, return_scales=True)
    assert used < 4 and value == pytest.approx(1.0, abs=1e-4)


# Frechet / FID


def test_frechet_closed_forms():
    I2 = np.eye(2)
    g = GaussianSummary([0.0, 0.0], I2)
    assert frechet_distance(g, g) == pytest.approx(0.0, abs=1e-6)
    assert frechet_distance(GaussianSummary([3.0, 4.0], I2), g) == pytest.approx(25.0, abs=1e-6)
    assert frechet_distance(GaussianSummary([0.0, 0.0], 4 * I2), g) == pytest.approx(2.0, abs=1e-6)


def test_frechet_matches_sqrtm_oracle():
    rng = np.random.default_rng(20)
    A, B = rng.normal(size=(5, 5)), rng.normal(size=(5, 5))
    s1, s2 = A @ A.T + 0.1 * np.eye(5), B @ B.T + 0.1 * np.eye(5)
    m1, m2 = rng.normal(size=5), rng.normal(size=5)
    covmean = linalg.sqrtm(s1 @ s2).real
    ref = np.sum((m1 - m2) ** 2) + np.trace(s1 + s2 - 2 * covmean)
    g1, g2 = GaussianSummary(m1, s1), GaussianSummary(m2, s2)
    assert frechet_distance(g1, g2) == pytest.approx(ref, rel=1e-8)
    assert frechet_distance(g1, g2) == pytest.approx(frechet_distance(g2, g1), abs=1e-8)


def test_gaussian_summary_checks():
    with pytest.raises(ValueError, match="symmetric"):
        GaussianSummary([0, 0], [[1, 0.5], [0, 1]])
    with pytest.raises(ValueError, match="insufficient samples"):
        GaussianSummary.fit(np.zeros((1, 3)))


def test_fid_identity_embedder():
    rng = np.random.default_rng(21)
    a = torch.from_numpy(rng.normal(0, 1, (50, 2, 1, 1)))
    b = torch.from_numpy(rng.normal(1, 2, (50, 2, 1, 1)))
    ident = lambda t: t.reshape(t.shape[0], -1)  # noqa: E731
    expected = frechet_distance(GaussianSummary.fit(a.reshape(50, 2).numpy()),
                                GaussianSummary.fit(b.reshape(50, 2).numpy()))
    assert fid(a, b, ident) == pytest.approx(expected, abs=1e-12)
    assert fid(a, a, ident) == pytest.approx(0.0, abs=1e-6)
    with pytest.raises(ValueError, match="insufficient samples"):
        fid(a[:1], b[:1], ident)


# LPIPS


def test_lpips_hand_value():
    ident = lambda t: t  # noqa: E731
    x = torch.tensor([[[3.0]], [[4.0]]], dtype=torch.float64)  # unit vector (0.6, 0.8)
    y = torch.tensor([[[1.0]], [[0.0]]], dtype=torch.float64)  # unit vector (1, 0)
    expected = (0.6 - 1.0) ** 2 + 0.8 ** 2
    assert float(lpips(x, y, [ident])) == pytest.approx(expected, abs=1e-9)
    assert float(lpips(x, x, [ident])) == pytest.approx(0.0, abs=1e-12)
    assert float(lpips(x, y, [ident], weights=[0.0])) == 0.0


# CLIP-IQA


class ToyProvider:
    def __init__(self, image_vec):
        self.image_vec = torch.tensor(image_vec, dtype=torch.float64)
        self.text = {"pos": torch.tensor([1.0, 0.0]), "neg": torch.tensor([0.0, 1.0])}

    def embed_image(self, image):
        return self.image_vec

    def embed_text(self, text):
        return self.text[text]


def test_clip_iqa_cases():
    img = torch.zeros(3, 4, 4)
    assert clip_iqa(img, [("pos", "neg")], ToyProvider([1.0, 1.0]))[0] == pytest.approx(0.5, abs=1e-12)
    assert clip_iqa(img, [("pos", "neg")], ToyProvider([1.0, 0.0]))[0] > 0.5
    assert clip_iqa(img, [("pos", "neg")], None) is None


# suite


def test_suite_unavailable_and_directions(tmp_path):
    refs = torch.from_numpy(np.stack([smooth_image(k, (3, 32, 32)) for k in range(4)])).float()
    mets = (refs * 0.9 + 0.05).clamp(0, 1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", MetricWarning)
        reports = evaluate_pairs(refs, mets)
    assert not reports["clip_iqa"].available and not reports["fid"].available
    assert reports["ssim"].available and len(reports["ssim"].values) == 4
    for name, rep in reports.items():
        assert rep.direction == DIRECTIONS[name]
    assert any("scales" in f for f in reports["vif"].flags)
    path = tmp_path / "m.csv"
    write_metric_csv(path, ["a", "b", "c", "d"], reports)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("pair,") and lines[-2].startswith("mean,") and lines[-1].startswith("std,")
    assert len(lines) == 1 + 4 + 2


def test_psnr_identical_pairs_capped():
    refs = torch.from_numpy(np.stack([rand_image(k) for k in range(2)]))
    reports = evaluate_pairs(refs, refs.clone(), ["psnr"])
    assert reports["psnr"].tabular() == [99.0, 99.0]
    assert reports["psnr"].flags


def test_normalized_view_peak_is_one():
    refs = torch.from_numpy(np.stack([rand_image(k) for k in range(3)]))
    mets = (refs + 0.05).clamp(0, 1)
    view = normalized_view(evaluate_pairs(refs, mets, ["rase", "tv"]))
    for vals in view.values():
        assert max(abs(v) for v in vals) == pytest.approx(1.0)


# properties


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_property_ideal_values(seed):
    a = rand_image(seed, (3, 16, 16))
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-9)
    assert rase(a, a) == 0.0
    assert scc(a, a) == pytest.approx(1.0, abs=1e-9)
    assert float(lpips(torch.from_numpy(a), torch.from_numpy(a), [lambda t: t])) == pytest.approx(0.0, abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), dim=st.integers(1, 6))
def test_property_frechet_nonnegative_symmetric(seed, dim):
    rng = np.random.default_rng(seed)
    A, B = rng.normal(size=(dim, dim)), rng.normal(size=(dim, dim))
    g1 = GaussianSummary(rng.normal(size=dim), A @ A.T)
    g2 = GaussianSummary(rng.normal(size=dim), B @ B.T)
    d12, d21 = frechet_distance(g1, g2), frechet_distance(g2, g1)
    assert d12 >= 0
    assert d12 == pytest.approx(d21, abs=1e-8 * max(1.0, d12))
