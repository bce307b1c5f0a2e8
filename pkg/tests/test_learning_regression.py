"""Recorded outcome of the 64x64 moving-blobs learning check.

The numbers below are the achieved test metrics of the full model under the
default learning-check config (seed 0, plain SGD, 50 epochs). Training is
deterministic, so a drift beyond the tolerance means the numerics changed.
"""
import pytest

import learning_check

FULL_TEST_MSE = 0.016656
FULL_TEST_SSIM = 0.6640
BASELINE_TEST_MSE = 0.021946
BASELINE_TEST_SSIM = 0.7135


@pytest.mark.slow
def test_full_model_regression():
    res = learning_check.run("full")
    assert res["test"]["mse"] == pytest.approx(FULL_TEST_MSE, rel=0.05)
    assert res["test"]["ssim"] == pytest.approx(FULL_TEST_SSIM, abs=0.02)


def test_baseline_regression():
    # persistence needs no training, so this half of the record is checked on every run
    from dynpred.cli import generate_splits
    from dynpred.training import score, split_io

    cfg = learning_check.BASE
    x, y = split_io(generate_splits(cfg)["test"], cfg.steps_in, cfg.steps_out)
    r = score(y, y, x)
    assert r.baseline_mse == pytest.approx(BASELINE_TEST_MSE, rel=1e-4)
    assert r.baseline_ssim == pytest.approx(BASELINE_TEST_SSIM, abs=1e-4)
