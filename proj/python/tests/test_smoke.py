import json

import numpy as np
import pytest

import ssmid

LGSS = json.dumps(
    {
        "F": [[0.7]],
        "G": [[1.0]],
        "Q": [[1.0]],
        "R": [[0.5]],
        "mu": [0.0],
        "P1": [[1.0]],
        "theta": [0.7],
        "dF": [[[1.0]]],
        "dG": [[[0.0]]],
    }
)


def test_simulate_is_seeded():
    x1, y1 = ssmid.simulate("model1", [0.5, 0.3], 100, 7)
    x2, y2 = ssmid.simulate("model1", [0.5, 0.3], 100, 7)
    assert x1.shape == (100,) and y1.shape == (100,)
    np.testing.assert_array_equal(y1, y2)
    _, y3 = ssmid.simulate("model1", [0.5, 0.3], 100, 8)
    assert not np.array_equal(y1, y3)


def test_ekf_matches_kalman_on_linear_model():
    _, y = ssmid.simulate(LGSS, [0.7], 200, 3)
    kf = ssmid.kalman_filter(LGSS, [0.7], y)
    assert kf["smoothed_means"].shape == (200,)
    assert ssmid.ekf_loglik(LGSS, [0.7], y) == pytest.approx(kf["loglik"], abs=1e-10)


def test_particle_weights_normalized():
    _, y = ssmid.simulate("model2", [0.7, 0.5], 50, 1)
    pf = ssmid.bootstrap_pf("model2", [0.7, 0.5], y, 200, 2)
    assert pf["weights"].shape == (200, 50)
    np.testing.assert_allclose(pf["weights"].sum(axis=0), 1.0, atol=1e-12)
    assert np.isfinite(pf["loglik"])


def test_gradient_matches_finite_difference_on_linear_model():
    _, y = ssmid.simulate(LGSS, [0.7], 150, 4)
    d = ssmid.derivatives(LGSS, [0.6], y, method="ALG2")
    h = 1e-5
    fd = (
        ssmid.kalman_filter(LGSS, [0.6 + h], y)["loglik"]
        - ssmid.kalman_filter(LGSS, [0.6 - h], y)["loglik"]
    ) / (2 * h)
    assert d["gradient"][0] == pytest.approx(fd, abs=1e-5)
    assert d["hessian"].shape == (1, 1)


def test_estimate_model1_alg2():
    _, y = ssmid.simulate("model1", [0.5, 0.3], 500, 11)
    out = ssmid.estimate("model1", y, [0.7, 0.0], method="ALG2")
    assert out["converged"]
    assert abs(abs(out["theta"][0]) - 0.5) < 0.1
    assert abs(out["theta"][1] - 0.3) < 0.1
    assert len(out["trace"]["loglik"]) == out["iterations"]
    assert np.all(np.diff(out["trace"]["loglik"]) >= 0)


def test_stochastic_estimate_reproducible():
    _, y = ssmid.simulate("model2", [0.7, 0.5], 100, 5)
    kw = dict(method="ALG3FL", seed=3, particles=100, max_iters=5)
    a = ssmid.estimate("model2", y, [0.5, 0.7], **kw)
    b = ssmid.estimate("model2", y, [0.5, 0.7], **kw)
    np.testing.assert_array_equal(a["theta"], b["theta"])


def test_errors_are_translated():
    with pytest.raises(ssmid.SsmidError):
        ssmid.simulate("model9", [0.5, 0.3], 10, 1)
    with pytest.raises(ssmid.SsmidError):
        ssmid.estimate("model1", np.zeros(20), [0.7, 0.0], method="ALG2", bogus=1)


def test_run_experiment_writes_bundle(tmp_path):
    config = {
        "model": "model1",
        "theta_true": [0.5, 0.3],
        "theta0": [0.7, 0.0],
        "N": 100,
        "replicates": 2,
        "methods": ["ALG2", "NUM"],
        "seed": 5,
    }
    text = ssmid.run_experiment(json.dumps(config), str(tmp_path))
    assert "ALG2" in text and "NUM" in text
    for name in ("estimates.csv", "table.csv", "timing.csv", "metadata.json"):
        assert (tmp_path / name).exists()
