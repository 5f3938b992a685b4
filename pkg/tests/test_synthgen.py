import json

import numpy as np
import pytest

from slopecp.meanmodel import ChangePointConfig
from slopecp.sampler import ModelSpec, run_chain
from slopecp.synthgen import (
    ScenarioError,
    SynthScenario,
    desk_scenario,
    desk_settings,
    generate,
    full_scale_scenario,
    synthetic_spatial_basis,
    truth_to_json,
)


def test_noiseless_matches_mean():
    sc = desk_scenario(0)
    sc.sigma2 = 0.0
    sc.alpha = [0.0] * 4
    panel, truth = generate(sc)
    np.testing.assert_allclose(panel.values + panel.offsets[:, None], truth["mu"], atol=1e-12)


def test_desk_noise_moment():
    sc = desk_scenario(3)
    _, truth = generate(sc)
    assert abs(truth["noise"].var() - sc.sigma2) / sc.sigma2 < 0.05
    assert sc.config == (0, 1, 1, 2)
    for b in sc.beta:
        assert all(abs(x - y) >= 0.5 for x, y in zip(b[1:], b[2:]))


def test_full_scale_shape():
    sc = full_scale_scenario()
    assert (sc.n_days, sc.M, sc.n_temporal, sc.n_spatial) == (22000, 8, 4, 1)
    assert sc.config == (0, 1, 1, 1, 2, 0, 0, 0)


def test_regeneration_is_bit_identical():
    a, _ = generate(desk_scenario(9))
    b, _ = generate(desk_scenario(9))
    assert np.array_equal(a.values, b.values, equal_nan=True)


def test_missing_mask():
    sc = desk_scenario(1)
    sc.missing_fraction = 0.02
    panel, _ = generate(sc)
    assert 0.01 < 1 - panel.observed.mean() < 0.03


def test_validation_messages():
    base = desk_scenario().to_dict()
    with pytest.raises(ScenarioError, match="beta\\[1\\]"):
        SynthScenario.from_dict(base | {"beta": [[0, 1], [0, 1], [0, 1, 2], [0, 0, 3, -1]]})
    with pytest.raises(ScenarioError, match="sigma2"):
        SynthScenario.from_dict({k: v for k, v in base.items() if k != "sigma2"})
    with pytest.raises(ScenarioError, match="prior support"):
        SynthScenario.from_dict(base | {"tau": [[], [100.0], [1200.0], [600.0, 1400.0]]})
    with pytest.raises(ScenarioError, match="colour"):
        SynthScenario.from_dict(base | {"colour": 1})
    with pytest.raises(ScenarioError, match="alpha"):
        SynthScenario.from_dict(base | {"alpha": [1.0]})


def test_json_round_trip(tmp_path):
    sc = desk_scenario(4)
    path = tmp_path / "s.json"
    path.write_text(json.dumps(sc.to_dict()))
    back = SynthScenario.from_json(path)
    assert back.to_dict() == sc.to_dict()
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ScenarioError, match="malformed"):
        SynthScenario.from_json(tmp_path / "bad.json")


def test_panel_basis_source_needs_reference():
    sc = desk_scenario()
    sc.basis_source = "panel"
    with pytest.raises(ScenarioError):
        generate(sc)
    ref, _ = generate(desk_scenario(1))
    panel, truth = generate(sc, reference_panel=ref)
    assert truth["B"].shape == (4, 1)


def test_spatial_basis_orthonormal():
    B = synthetic_spatial_basis(6, 3)
    np.testing.assert_allclose(B.T @ B, np.eye(3), atol=1e-12)


def test_truth_json_is_serialisable():
    _, truth = generate(desk_scenario())
    json.dumps(truth_to_json(truth))


@pytest.mark.slow
def test_slope_calibration():
    """True slopes fall inside their 95% credible intervals for most seeds."""
    inside = []
    st = desk_settings()
    for seed in range(20):
        sc = desk_scenario(500 + seed)
        panel, truth = generate(sc)
        spec = ModelSpec(panel, ChangePointConfig(sc.config), truth["H"], truth["B"], st["priors"])
        s = run_chain(spec, st["protocol"].__class__(4000, 1000, 2, seed))
        lo, hi = np.percentile(s.beta, [2.5, 97.5], axis=0)
        true = np.concatenate([np.r_[b[0] - truth["offsets"][i], b[1:]] for i, b in enumerate(sc.beta)])
        slopes = np.concatenate([np.arange(sl.start + 1, sl.stop) for sl in spec.config.beta_slices()])
        inside.extend(((lo[slopes] <= true[slopes]) & (true[slopes] <= hi[slopes])).tolist())
    assert np.mean(inside) >= 0.9
