import numpy as np
import pytest
from hypothesis import given, strategies as st

from msfrecon.dataset import dataset_hash, make_dataset, simulate
from msfrecon.errors import ConfigurationError, ContractViolation
from msfrecon.evalbench import psnr, roi_means
from msfrecon.phantom import PHANTOM_KINDS, make_phantom
from msfrecon.tomo_sim import (Sinogram, back_project, default_angles, default_bins, fbp,
                               padded_length, poisson_sample, radon, ramp_filter,
                               ramp_response)


def interior_image(rng, n, margin=2):
    img = np.zeros((n, n))
    img[margin:-margin, margin:-margin] = rng.uniform(0, 1, (n - 2 * margin, n - 2 * margin))
    return img


# -- phantoms ---------------------------------------------------------------

def test_shepp_logan_ignores_seed():
    a = make_phantom("shepp_logan", 128, 0)
    b = make_phantom("shepp_logan", 128, 99)
    np.testing.assert_array_equal(a.image, b.image)
    np.testing.assert_array_equal(a.labels, b.labels)


@pytest.mark.parametrize("kind", PHANTOM_KINDS)
def test_phantoms_are_deterministic_and_in_range(kind):
    a = make_phantom(kind, 64, 7)
    b = make_phantom(kind, 64, 7)
    assert np.array_equal(a.image, b.image) and np.array_equal(a.labels, b.labels)
    assert a.image.shape == (64, 64, 1) and a.labels.shape == (64, 64)
    assert a.image.min() >= 0.0 and a.image.max() <= 1.0


@given(st.sampled_from(PHANTOM_KINDS), st.integers(0, 10_000))
def test_every_label_is_occupied(kind, seed):
    ph = make_phantom(kind, 32, seed)
    k = ph.n_rois
    assert k >= 1
    assert set(range(1, k + 1)) <= set(np.unique(ph.labels).tolist())


@given(st.integers(0, 10_000))
def test_hot_spot_contrast_by_construction(seed):
    ph = make_phantom("hot_spots", 64, seed)
    means = roi_means(ph.image, ph.labels)
    assert 1 <= len(ph.hot_labels) <= 3
    assert max(means.values()) > 2 * means[ph.background_label]
    for roi in ph.hot_labels:
        assert means[roi] > 2 * means[ph.background_label]


def test_phantom_errors():
    with pytest.raises(ConfigurationError):
        make_phantom("shepp_logan", 31)
    with pytest.raises(ConfigurationError):
        make_phantom("cube", 64)


# -- radon / back projection ------------------------------------------------

def test_zero_image_zero_sinogram():
    s = radon(np.zeros((32, 32, 1)), 12)
    assert s.data.shape == (12, default_bins(32))
    assert not np.any(s.data)


def test_centre_pixel_mass_and_peak():
    n = 33
    img = np.zeros((n, n))
    img[n // 2, n // 2] = 1.0
    s = radon(img, 40)
    np.testing.assert_allclose(s.data.sum(axis=1), 1.0, atol=1e-6)
    assert np.all(np.argmax(s.data, axis=1) == (s.n_bins - 1) // 2)


def test_mass_conservation_per_angle(rng):
    img = rng.uniform(0, 1, (64, 64))
    s = radon(img, 90)
    np.testing.assert_allclose(s.data.sum(axis=1), img.sum(), rtol=1e-6)


@given(st.integers(0, 2**32 - 1), st.integers(1, 40))
def test_mass_conservation_interior_supported(seed, n_angles):
    img = interior_image(np.random.default_rng(seed), 32)
    s = radon(img, n_angles)
    np.testing.assert_allclose(s.data.sum(axis=1), img.sum(), rtol=1e-6)


def test_radon_linear_and_monotone(rng):
    u, v = rng.uniform(0, 1, (2, 32, 32))
    s = radon(2 * u + 3 * v, 20).data
    np.testing.assert_allclose(s, 2 * radon(u, 20).data + 3 * radon(v, 20).data, rtol=1e-12, atol=1e-12)
    assert s.min() >= 0


def test_too_few_bins_rejected():
    with pytest.raises(ConfigurationError):
        radon(np.zeros((64, 64)), 10, n_bins=80)


def test_transpose_identity_over_random_pairs(rng):
    for _ in range(20):
        n, k = int(rng.integers(32, 48)), int(rng.integers(5, 50))
        u = rng.standard_normal((n, n))
        s = Sinogram(rng.standard_normal((k, default_bins(n))), default_angles(k))
        lhs = np.vdot(radon(u, k).data, s.data) * (np.pi / k)
        rhs = np.vdot(u, back_project(s, n)[:, :, 0])
        assert abs(lhs - rhs) <= 1e-6 * abs(lhs)


def test_back_project_zero():
    assert not np.any(back_project(Sinogram(np.zeros((8, 47)), default_angles(8)), 32))


def test_single_bin_smears_along_ray():
    # angle 0 projects onto x, so one bin lights up one image column uniformly
    n, k = 32, 4
    data = np.zeros((k, default_bins(n)))
    centre = (default_bins(n) - 1) // 2
    data[0, centre + 3] = 1.0
    img = back_project(Sinogram(data, default_angles(k)), n)[:, :, 0]
    lit = np.nonzero(img.sum(axis=0))[0]
    assert 1 <= len(lit) <= 2 and np.ptp(lit) <= 1
    for c in lit:
        assert np.ptp(img[:, c]) == 0.0  # constant along y
    # image column x sits at bin centre + x - (n - 1) / 2, so bin centre+3 sits near x = 18.5
    assert set(lit) <= {18, 19}


def test_sinogram_validation():
    with pytest.raises(ContractViolation):
        Sinogram(np.zeros((3, 5)), np.array([0.0, 0.5, 0.4]))
    with pytest.raises(ContractViolation):
        Sinogram(np.zeros((2, 5)), np.array([0.0, np.pi]))


# -- poisson ----------------------------------------------------------------

def test_poisson_zero_and_determinism(rng):
    z = Sinogram(np.zeros((4, 9)), default_angles(4))
    for seed in (0, 1, 2):
        assert not np.any(poisson_sample(z, 1e6, seed).data)
    s = radon(rng.uniform(0, 1, (32, 32)), 16)
    a, b = poisson_sample(s, 1e5, 3), poisson_sample(s, 1e5, 3)
    assert np.array_equal(a.data, b.data)
    assert np.array_equal(a.data, np.round(a.data))


def test_poisson_moments_constant_sinogram():
    s = Sinogram(np.ones((100, 101)), default_angles(100))
    out = poisson_sample(s, 1e6, 11).data
    lam = 1e6 / out.size
    assert abs(out.mean() - lam) < 0.01 * lam
    assert abs(out.var() - lam) < 0.05 * lam


def test_poisson_rejects_negative():
    with pytest.raises(ContractViolation):
        poisson_sample(Sinogram(-np.ones((2, 5)), default_angles(2)), 10.0, 0)


# -- ramp filter / fbp ------------------------------------------------------

def test_ramp_zero_and_linear(rng):
    z = Sinogram(np.zeros((3, 45)), default_angles(3))
    assert not np.any(ramp_filter(z).data)
    a, b = rng.standard_normal((2, 5, 45))
    sa, sb = Sinogram(a, default_angles(5)), Sinogram(b, default_angles(5))
    np.testing.assert_allclose(ramp_filter(sa.with_data(a + b)).data,
                               ramp_filter(sa).data + ramp_filter(sb).data, atol=1e-10)


def test_padding_length():
    for n in (5, 64, 65, 91, 181):
        p = padded_length(n)
        assert p >= 2 * n and p & (p - 1) == 0


def test_ramp_kills_dc(rng):
    n_pad = padded_length(91)
    h = ramp_response(n_pad)
    assert h[0] == 0.0
    proj = rng.uniform(0, 5, 91)
    filtered = np.fft.irfft(np.fft.rfft(proj, n_pad) * h, n_pad)
    assert abs(filtered.sum()) < 1e-9
    # a constant over the whole period is annihilated everywhere
    flat = np.fft.irfft(np.fft.rfft(np.full(n_pad, 3.0)) * h, n_pad)
    assert np.abs(flat).max() < 1e-12


def test_constant_projection_roll_off_shrinks_with_width():
    # truncating a constant leaves tails decaying like 1/distance from the edges
    worst = []
    for n in (91, 181, 363):
        out = ramp_filter(Sinogram(np.ones((1, n)), default_angles(1))).data[0]
        worst.append(np.abs(out[n // 4: 3 * n // 4]).max())
    assert worst[0] > worst[1] > worst[2]
    assert worst[2] < 0.5 * worst[0]


def test_fbp_zero():
    assert not np.any(fbp(Sinogram(np.zeros((8, 47)), default_angles(8)), 32))


def test_noiseless_shepp_logan_fbp_psnr():
    ph = make_phantom("shepp_logan", 128)
    img = fbp(radon(ph.image, 180), 128)
    assert psnr(img, ph.image) >= 25.0


def test_more_angles_better_fbp():
    ph = make_phantom("shepp_logan", 128)
    assert psnr(fbp(radon(ph.image, 180), 128), ph.image) > psnr(fbp(radon(ph.image, 30), 128), ph.image)


def test_noise_lowers_fbp_psnr():
    ph = make_phantom("shepp_logan", 64)
    clean = radon(ph.image, 96)
    noisy_img = fbp(poisson_sample(clean, 1e5, 5), 64) * (clean.data.sum() / 1e5)
    assert psnr(noisy_img, ph.image) < psnr(fbp(clean, 64), ph.image)


# -- dataset ----------------------------------------------------------------

def test_dataset_hash_reproducible():
    a = make_dataset(10, 32, seed=4)
    b = make_dataset(10, 32, seed=4)
    assert dataset_hash(a) == dataset_hash(b)
    assert dataset_hash(make_dataset(10, 32, seed=5)) != dataset_hash(a)
    for r in a:
        assert r.input.shape == r.target.shape == (32, 32, 1)


def test_higher_counts_closer_input():
    low = high = 0.0
    for seed in range(3):
        ph = make_phantom("ellipses", 64, seed)
        low += np.mean((simulate(ph, 1e4, seed)[1] - ph.image) ** 2)
        high += np.mean((simulate(ph, 1e8, seed)[1] - ph.image) ** 2)
    assert high < low


def test_mix_selects_kinds():
    recs = make_dataset(6, 32, mix={"hot_spots": 1.0}, seed=0)
    assert {r.kind for r in recs} == {"hot_spots"}
    with pytest.raises(ConfigurationError):
        make_dataset(2, 32, mix={"spheres": 1.0})
    with pytest.raises(ConfigurationError):
        make_dataset(0, 32)
