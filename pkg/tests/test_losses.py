import numpy as np
import pytest

from lite_nvist.autodiff import Tensor, gradcheck
from lite_nvist.common import ConfigError, ContractError, MetricError
from lite_nvist.losses import (PSNR_CAP, LossWeights, distortion_loss, l2_loss, mse_to_psnr, psnr, ssim,
                               total_loss)

EDGES = np.linspace(0.0, 1.0, 9)[None]


# =============================================================================
# Losses
# =============================================================================

def test_l2_is_mean_squared_error(float64):
    assert l2_loss(Tensor(np.array([[1.0, 2.0]])), np.array([[0.0, 0.0]])).item() == pytest.approx(2.5)
    with pytest.raises(ContractError):
        l2_loss(Tensor(np.zeros((2, 3))), np.zeros((3, 2)))


def test_distortion_of_a_single_interval_is_a_third_of_its_width(float64):
    w = np.zeros((1, 8))
    w[0, 3] = 1.0
    assert distortion_loss(w, EDGES).item() == pytest.approx(0.125 / 3.0)


def test_distortion_of_two_separated_modes(float64):
    w = np.zeros((1, 8))
    w[0, [0, 7]] = 0.5
    expected = 2 * 0.25 * 0.875 + (0.25 * 0.125 * 2) / 3.0
    assert distortion_loss(w, EDGES).item() == pytest.approx(expected)


def test_distortion_prefers_compact_weights(float64):
    spread = np.full((1, 8), 1.0 / 8)
    tight = np.zeros((1, 8))
    tight[0, 4] = 1.0
    assert distortion_loss(tight, EDGES).item() < distortion_loss(spread, EDGES).item()


def test_distortion_is_averaged_over_rays(float64, rng):
    w = rng.uniform(size=(3, 8))
    edges = np.tile(EDGES, (3, 1))
    per_ray = [distortion_loss(w[i], edges[i]).item() for i in range(3)]
    assert distortion_loss(w, edges).item() == pytest.approx(np.mean(per_ray))
    with pytest.raises(ContractError):
        distortion_loss(w, edges[:, :-1])


def test_distortion_gradient(rng):
    w = rng.uniform(size=(2, 6))
    edges = np.sort(rng.uniform(size=(2, 7)), axis=1)
    assert gradcheck(lambda t: distortion_loss(t, edges), w) < 1e-6


def test_total_loss_combines_weighted_terms(float64, rng):
    pred = Tensor(rng.uniform(size=(4, 3)), requires_grad=True)
    target = rng.uniform(size=(4, 3))
    weights = Tensor(rng.uniform(size=(4, 8)))
    edges = np.tile(EDGES, (4, 1))
    loss, parts = total_loss(pred, target, weights, edges, LossWeights(beta_dist=0.5))
    assert set(parts) == {"l2", "perceptual", "dist", "loss"}
    assert parts["loss"] == pytest.approx(parts["l2"] + 0.5 * parts["dist"])
    assert loss.item() == pytest.approx(parts["loss"])
    _, no_dist = total_loss(pred, target, weights, edges, LossWeights(beta_dist=0.0))
    assert no_dist["dist"] == 0.0
    assert no_dist["loss"] == pytest.approx(no_dist["l2"])


def test_total_loss_uses_a_plugged_perceptual_term(float64, rng):
    pred = Tensor(rng.uniform(size=(2, 3)))
    weights = Tensor(rng.uniform(size=(2, 8)))
    edges = np.tile(EDGES, (2, 1))

    def perceptual(p, t):
        return Tensor(2.0) + (p - p).sum()

    _, parts = total_loss(pred, pred.data, weights, edges, LossWeights(lambda_lpips=0.1, beta_dist=0.0), perceptual)
    assert parts["perceptual"] == pytest.approx(2.0)
    assert parts["loss"] == pytest.approx(0.2)


def test_loss_weights_must_be_non_negative():
    with pytest.raises(ConfigError):
        LossWeights(lambda_lpips=-0.1).validate()


# =============================================================================
# Metrics
# =============================================================================

def test_psnr_of_known_mse():
    a = np.zeros((4, 4, 3))
    assert psnr(a, a + 0.1) == pytest.approx(20.0)
    assert mse_to_psnr(0.01) == pytest.approx(20.0)


def test_psnr_is_capped_for_identical_images(rng):
    a = rng.uniform(size=(4, 4, 3))
    assert psnr(a, a) == PSNR_CAP == 99.0
    with pytest.raises(MetricError):
        psnr(a, a[:2])


def test_ssim_identity_and_sensitivity(rng):
    a = rng.uniform(size=(16, 16, 3))
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)
    noisy = np.clip(a + rng.normal(0.0, 0.2, size=a.shape), 0.0, 1.0)
    assert ssim(a, noisy) < 0.9
    assert ssim(a[..., 0], a[..., 0]) == pytest.approx(1.0, abs=1e-12)


def test_ssim_needs_at_least_the_window_size(rng):
    with pytest.raises(MetricError):
        ssim(np.zeros((8, 8, 3)), np.zeros((8, 8, 3)))
    with pytest.raises(MetricError):
        ssim(np.zeros((16, 16, 3)), np.zeros((16, 12, 3)))
