import math

import numpy as np
import pytest

import vaebo


@pytest.fixture(scope="module")
def small_model():
    mesh = vaebo.build_grid_mesh(8, 8)
    params = vaebo.ApParams()
    params.n_steps = 120
    return mesh, vaebo.ForwardModel(mesh, params=params, n_leads=16, seed=1)


def test_grid_mesh():
    mesh = vaebo.build_grid_mesh(4, 3)
    assert mesh.n_nodes == 12
    assert len(mesh.edges) == 17
    square = vaebo.build_grid_mesh(4, 4)
    assert vaebo.partition_segments(square, 2).fingerprint() == square.fingerprint()
    assert vaebo.partition_segments(square, 2).n_segments == 4
    again = vaebo.Mesh.from_json(mesh.to_json())
    assert again.fingerprint() == mesh.fingerprint()


def test_forward_model_shapes_and_rest(small_model):
    mesh, fwd = small_model
    y = fwd(np.full(mesh.n_nodes, 0.15))
    assert y.shape == (16, 120)
    assert np.isfinite(y).all()
    assert fwd.mismatch(y, np.full(mesh.n_nodes, 0.15)) == 0.0
    noisy = vaebo.add_noise_snr(y, 20.0, 3)
    snr = 10 * np.log10((y**2).sum() / ((noisy - y) ** 2).sum())
    assert abs(snr - 20.0) < 0.5


def test_metrics():
    truth = np.array([0.15] * 6 + [0.5] * 4)
    assert vaebo.rmse(truth, truth) == 0.0
    report = vaebo.evaluate(truth, truth)
    assert report["dice"] == 1.0
    assert vaebo.dice([1, 2, 3], [2, 3, 4]) == pytest.approx(2 / 3)
    with pytest.raises(vaebo.VaeboError):
        vaebo.otsu_threshold(np.full(5, 0.3))


def test_expected_improvement():
    assert vaebo.expected_improvement(1.0, 1.0, 0.0) == pytest.approx(1.0833, abs=1e-4)
    assert vaebo.log_expected_improvement(1.0, 1.0, 0.0) == pytest.approx(math.log(1.0833), abs=1e-4)


def test_gp_interpolates():
    x = np.array([[0.0, 0.0], [1.0, 0.5], [-1.0, 2.0]])
    y = np.array([0.3, -0.2, 1.0])
    gp = vaebo.GaussianProcess(x, y, 1.0, np.array([1.0, 1.0]))
    mean, std = gp.predict(x[1])
    assert mean == pytest.approx(-0.2, abs=1e-4)
    assert std < 1e-3
    assert math.isfinite(gp.log_marginal_likelihood())


def test_bo_on_quadratic():
    target = np.array([1.0, -0.5])
    res = vaebo.minimize_box(lambda z: -float(((z - target) ** 2).sum()), 2, budget=20, n_init=5,
                             candidate_count=256, seed=2)
    assert res["eval_count"] == 20
    assert len(res["history"]) == 20
    assert res["best_value"] > -0.1


def test_vae_and_prior():
    mesh = vaebo.build_grid_mesh(8, 8)
    data = vaebo.make_dataset(mesh, 40, seed=1)
    assert data.shape == (40, 64)
    model = vaebo.VaeModel(64, [16], 2, seed=3)
    model.scale = (0.15, 0.5)
    model = model.train(data, epochs=2, batch_size=10)
    assert len(model.loss_history) == 2
    recon = model.decode(model.encode(data[0])[0])
    assert recon.shape == (64,)
    assert ((recon > 0.15) & (recon < 0.5)).all()
    agg = vaebo.aggregate_posterior(model, data)
    single = vaebo.moment_match_single(agg)
    assert single.kind == "single"
    reduced, assignment, objective = vaebo.reduce_kmeans(agg, 3, seed=1)
    assert reduced.size == 3
    assert all(b <= a + 1e-12 for a, b in zip(objective, objective[1:]))
    assert vaebo.LatentPrior.from_json(reduced.to_json()).size == 3


def test_config_round_trip():
    cfg = vaebo.RunConfig.from_text("bo.budget = 20\nmesh.width = 8\n")
    assert "bo.budget = 20" in cfg.to_text()
    with pytest.raises(ValueError):
        vaebo.RunConfig.from_text("bo.unknown = 1\n")
