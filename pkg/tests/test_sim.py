import numpy as np
import pytest

from sgmave import sim
from sgmave.sim import (
    MODELS,
    SimConfig,
    covariance,
    gen_predictors,
    gen_response,
    get_model,
    replication_rng,
    run_replications,
)


def make_config(**overrides) -> SimConfig:
    options = {"model": "illus", "n": 40, "p0": 4, "reps": 2, "penalties": ("gmave", "scad"), "seed": 7}
    options.update(overrides)
    return SimConfig(**options)


def test_covariance_families():
    ar = covariance(4, "ar")
    assert ar[0, 2] == pytest.approx(0.25)
    assert ar[1, 3] == pytest.approx(0.25)
    cs = covariance(3, "cs")
    assert np.allclose(np.diag(cs), 1.0)
    assert np.allclose(cs[~np.eye(3, dtype=bool)], 0.5)
    assert np.array_equal(covariance(3, "iid"), np.eye(3))


def test_gen_predictors_matches_covariance_in_large_samples():
    rng = np.random.default_rng(0)
    V = gen_predictors(100_000, 4, "ar", rng)
    assert np.max(np.abs(np.cov(V, rowvar=False) - covariance(4, "ar"))) < 0.02


def test_gen_predictors_rejects_empty_design():
    with pytest.raises(ValueError):
        gen_predictors(10, 0, "ar", np.random.default_rng(0))


def test_gen_response_model_equations_without_noise():
    V = np.zeros((1, 40))
    V[0, :3] = 1.0
    V[0, 20:22] = 1.0
    assert gen_response("m3.1", V, epsilon=np.zeros(1))[0] == pytest.approx(9.0)
    assert gen_response("m3.3", np.zeros((1, 40)), epsilon=np.zeros(1))[0] == pytest.approx(1.0)
    assert gen_response("m3.5", np.zeros((1, 60)), epsilon=np.zeros(1))[0] == pytest.approx(0.0)


def test_gen_response_adds_half_scaled_noise():
    V = np.zeros((3, 20))
    y = gen_response("illus", V, epsilon=np.array([1.0, -2.0, 0.0]))
    assert np.allclose(y, [0.5, -1.0, 0.0])


def test_gen_response_rejects_wrong_width():
    with pytest.raises(ValueError):
        gen_response("m3.5", np.zeros((2, 40)), np.random.default_rng(0))


def test_model_truths_and_supports():
    assert get_model("m3.1").supports() == [(0, 1, 2), (0, 1)]
    assert get_model("m3.4c1").supports() == [(0, 1), (0, 1)]
    assert get_model("m3.4c2").supports() == [(0, 1, 2, 3), (0, 1)]
    assert get_model("m3.6").groups(30).sizes == (30, 30, 30)
    for model in MODELS.values():
        for block in model.truth():
            assert np.allclose(np.linalg.norm(block, axis=0), 1.0)


def test_unknown_model_is_rejected():
    with pytest.raises(ValueError, match="Unknown model"):
        SimConfig(model="m9.9")


def test_config_defaults_follow_the_design():
    config = SimConfig(model="illus")
    assert (config.corr, config.n, config.p0) == ("iid", 150, 10)
    config = SimConfig(model="M3.6", corr="CS", p0=30, penalties=("none", "scad", "gmave"))
    assert (config.model, config.corr, config.n) == ("m3.6", "cs", 200)
    assert config.penalties == ("gmave", "scad")


@pytest.mark.parametrize(
    "overrides",
    [{"reps": 0}, {"corr": "toeplitz"}, {"penalties": ("bridge",)}, {"penalties": ()}, {"p0": 1}],
)
def test_invalid_configs_are_rejected(overrides):
    with pytest.raises(ValueError):
        make_config(**overrides)


def test_replication_streams_are_reproducible_and_distinct():
    first = replication_rng(42, 3).standard_normal(5)
    again = replication_rng(42, 3).standard_normal(5)
    other = replication_rng(42, 4).standard_normal(5)
    assert np.array_equal(first, again)
    assert not np.array_equal(first, other)


def test_run_replications_summarises_every_method():
    summary = run_replications(make_config())
    assert summary.failures == 0
    assert [m.method for m in summary.methods] == ["gmave", "scad"]
    gmave, scad = summary.methods
    assert gmave.n_ok == 2
    assert gmave.exact_rate is None
    assert gmave.groups[0].ms is None
    assert 0.0 <= scad.groups[0].vcc <= 1.0
    assert scad.groups[0].vcc_sd is not None
    assert 0.0 <= scad.exact_rate <= 1.0

    frame = summary.to_frame()
    assert list(frame["method"]) == ["gMAVE", "SgMAVE-SCAD"]
    assert "g2_tcc_sd" in frame.columns
    assert "mean_seconds" not in frame.columns
    assert "mean_seconds" in summary.to_frame(timings=True).columns
    assert summary.unconverged == sum(outcome.gmave_converged is False for outcome in summary.outcomes)
    assert all(outcome.gmave_converged is not None for outcome in summary.outcomes)


def test_run_replications_is_deterministic_and_order_independent():
    config = make_config(penalties=("lasso",))
    serial = run_replications(config)
    again = run_replications(config)
    parallel = run_replications(config, threads=2)
    assert serial.to_frame().equals(again.to_frame())
    assert serial.to_frame().equals(parallel.to_frame())
    assert serial.to_record() == parallel.to_record()


def test_single_replication_has_no_spread():
    summary = run_replications(make_config(reps=1, penalties=("gmave",)))
    assert summary.methods[0].groups[0].vcc_sd is None
    assert len(summary.to_frame()) == 1


def test_failed_replications_are_recorded(monkeypatch):
    def explode(*args, **kwargs):
        raise RuntimeError("boom")

    monkeypatch.setattr(sim, "gmave_fit", explode)
    summary = run_replications(make_config())
    assert summary.failures == 2
    assert summary.methods[0].n_ok == 0
    assert summary.to_record()["errors"] == ["RuntimeError: boom", "RuntimeError: boom"]


def test_model_31_replications_complete_with_non_convex_penalties():
    # relevant coordinates of this design have curvature well above one
    summary = run_replications(SimConfig("m3.1", reps=3, penalties=("scad", "mcp"), seed=20240))
    assert summary.failures == 0
    for method in summary.methods:
        assert method.n_ok == 3
        assert method.groups[0].tpr >= 0.75
