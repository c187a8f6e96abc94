"""Smoke test for the omt extension module.

Build first: pip install --no-build-isolation -e crates/python
Run: python python/smoke_test.py  (or pytest python/)
"""
import json
import math

import omt


def test_independent_pipeline():
    model = omt.Model.independent(500, 0.2, -2.5)
    assert model.k == 500
    h, z = model.sample(seed=3)
    assert len(h) == len(z) == 500

    t = model.locfdr(z)
    assert all(0.0 <= v <= 1.0 for v in t)

    policy = omt.calibrate(model, alpha=0.05, criterion_name="fdr", n_cal=500, seed=1)
    assert policy.criterion == "FDR"
    assert policy.scalar >= 0.0
    d = policy.decide(t)
    assert len(d) == 500
    # rejections are the hypotheses with the smallest locFDR
    rejected = [v for v, r in zip(t, d) if r]
    kept = [v for v, r in zip(t, d) if not r]
    if rejected and kept:
        assert max(rejected) <= min(kept)

    again = omt.Policy.from_json(policy.to_json())
    assert again.decide(t) == d


def test_block_model_from_json():
    cfg = {"model": {"k": 6, "pi": 0.3,
                     "dependence": {"type": "blocks", "n_blocks": 2, "block_size": 3,
                                    "rho": 0.4, "delta": -2.0}}}
    model = omt.Model.from_json(json.dumps(cfg))
    t = model.locfdr([-3.0, 0.1, -2.2, 0.5, -0.3, -4.1])
    assert len(t) == 6
    try:
        model.locfdr([0.0] * 6, max_block_size=2)
    except ValueError as e:
        assert "block exceeds enumeration limit" in str(e)
    else:
        raise AssertionError("expected a block-size error")


def test_fit_and_baselines():
    _, z = omt.Model.independent(3000, 0.2, -2.5).sample(seed=9)
    fit = omt.fit(z, seed=2)
    assert abs(fit.pi_hat - 0.2) < 0.05
    assert fit.null_assignment[0]
    assert len(fit.locfdr(z)) == 3000

    p = [0.5 * math.erfc(-v / math.sqrt(2.0)) for v in z]
    plain = omt.bh(p, 0.05)
    adaptive = omt.bh(p, 0.05, pi0=1.0 - fit.pi_hat)
    assert sum(adaptive) >= sum(plain) > 0


def test_simulate():
    cfg = {
        "model": {"k": 100, "pi": 0.2,
                  "null": [{"weight": 1.0, "mean": 0.0, "sd": 1.0}],
                  "alt": [{"weight": 1.0, "mean": -2.5, "sd": 1.0}]},
        "variants": ["OMT-FDR", "BH"],
        "n_reps": 20,
        "n_cal": 200,
        "seed": 4,
    }
    first = json.loads(omt.simulate(json.dumps(cfg)))
    second = json.loads(omt.simulate(json.dumps(cfg)))
    first.pop("wall_time_secs")
    second.pop("wall_time_secs")
    assert first == second


if __name__ == "__main__":
    for name, fn in list(globals().items()):
        if name.startswith("test_"):
            fn()
            print("ok", name)
