import math

import numpy as np
import pytest

import priorforest as pf


MODEL1 = {
    "version": 1,
    "formula": "y ~ x + mc(a) + mc(b)",
    "tree": "s1 = (a, b); s2 = (s1, eps)",
    "priors": {
        "w": {"s1": {"prior": "pcM", "param": [0.7, 0.5]}, "s2": {"prior": "pc0", "param": 0.25}},
        "V": {"s2": {"prior": "pc", "param": [3, 0.05]}},
    },
    "fixed": {"x": {"mean": 0, "sd": 100}},
}


def test_summary_without_data():
    p = pf.make_prior(MODEL1)
    text = p.summary()
    assert "w[a/a_b] ~ PCM(0.7, 0.5)" in text
    assert "w[eps/eps_a_b] ~ PC1(0.75)" in text
    assert "sqrt(V)[eps_a_b] ~ PC0(3, 0.05)" in text


def test_errors_carry_codes():
    bad = dict(MODEL1, formula="y ~ mc(eps)")
    with pytest.raises(pf.PriorForestError, match="reserved_label"):
        pf.make_prior(bad)


def test_pc_stdev_density_closed_form():
    lam = -math.log(0.05) / 3
    for s in (0.0, 0.5, 2.0, 4.5):
        assert pf.pc_stdev_density(s, 3, 0.05) == pytest.approx(lam * math.exp(-lam * s), abs=1e-12)
    assert pf.dirichlet_concentration(2) == pytest.approx(1.0, abs=1e-9)


def test_example_prior_sampling_and_density():
    p = pf.make_prior(pf.example_bundle("model1"))
    draws = p.sample(2000, 3)
    w = draws["w[a/a_b]"]
    assert w.shape == (2000,)
    assert np.all((w > 0) & (w < 1))
    assert abs(np.median(w) - 0.7) < 0.05
    grid = np.linspace(0, 1, 51)
    d = p.density("w[a/a_b]", "tree", grid)
    assert np.all(np.isfinite(d[1:-1])) and d[25:].sum() > 0


def test_short_inference_run():
    p = pf.make_prior(pf.example_bundle("model1"))
    out = pf.infer(p, iter=1500, warmup=500, seed=2)
    assert out["tree"].shape[0] == 1000
    assert 0.05 < out["summary"]["acceptance"][0] < 0.7


def test_find_pc_prior_param():
    r = pf.find_pc_prior_param(0.1, 10, 0.9, 50000, 1)
    assert 3.2 < r["U"] < 3.5
