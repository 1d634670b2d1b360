import numpy as np
import pytest
from scipy.linalg import expm

import carrnn

SPEC = """
n_subjects = 40
drift = -0.5, 0.2; 0.1, -0.4
bias = 0.1, -0.2
diffusion_chol = 0.3, 0; 0, 0.3
missing_prob = 0.3, 0.3
horizon = 8
"""


@pytest.fixture(scope="module")
def data():
    csv, truth = carrnn.synth(SPEC, seed=3)
    return csv


def test_car_correct_matches_formula():
    rng = np.random.default_rng(0)
    phi, sigma, v = rng.normal(size=(3, 3)), rng.normal(size=3), rng.normal(size=3)
    out = carrnn.car_correct(phi, sigma, 0.5, v, 1.2)
    np.testing.assert_allclose(out, (np.eye(3) + 0.7 * phi) @ v + 0.7 * sigma, rtol=1e-14)
    np.testing.assert_array_equal(carrnn.car_correct(phi, sigma, 0.5, v, 0.5), v)


def test_transition_matrix_matches_expm():
    phi = np.array([[-0.8, 0.3], [0.1, -0.5]])
    np.testing.assert_allclose(carrnn.transition_matrix(phi, 0.4), expm(0.4 * phi), atol=1e-13)


def test_bin_series_averages_within_bins():
    b = carrnn.bin_series([0.0, 0.1, 1.0, 1.05], [0, 0, 1, 0], [1.0, 3.0, 5.0, 7.0], 2, 0.5)
    assert b["values"].shape == (2, 2)
    assert b["values"][0, 0] == 2.0
    assert b["mask"][0].tolist() == [1.0, 0.0]


def test_synth_is_deterministic():
    a, b = carrnn.synth(SPEC, seed=5), carrnn.synth(SPEC, seed=5)
    assert a == b
    assert a[0].startswith("subject_id,time,feature,value")
    assert a[1].startswith("carrnn-truth 1")


def test_train_eval_predict_round_trip(data):
    r = carrnn.train(data, {"cell": "car_gru", "max_epochs": "3", "seed": "1"})
    assert r["checkpoint"].startswith("carrnn-checkpoint 1")
    assert len(r["history"]) <= 3
    assert carrnn.evaluate(r["checkpoint"], data) == r["metrics"]
    p = carrnn.predict(r["checkpoint"], data, context=2)
    assert p["predictions"].startswith("subject_id,")
    assert p["by_horizon"][0][0] == 1


def test_forward_runs_from_checkpoint(data):
    r = carrnn.train(data, {"cell": "car_lstm", "max_epochs": "1"})
    y = carrnn.forward(r["checkpoint"], np.zeros((4, 2)), [0.3, 0.5, 0.2, 0.9])
    assert y.shape == (4, 2)
    assert np.isfinite(y).all()


def test_gradcheck_passes():
    r = carrnn.gradcheck(["car_rnn", "car_gru"], configs=1)
    assert r["passed"]
    assert r["worst"] < 1e-6


def test_errors_become_value_errors(data):
    with pytest.raises(ValueError, match="learnin_rate"):
        carrnn.train(data, {"learnin_rate": "1"})
    with pytest.raises(ValueError, match="checkpoint"):
        carrnn.evaluate("garbage", data)
    assert "car_gru" in carrnn.CELLS
