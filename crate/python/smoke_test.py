"""Smoke test for the `mclp` Python extension.

Build and install the module first, for example:

    pip install --no-build-isolation ./crates/py

or `maturin develop --release -m crates/py/Cargo.toml` inside a virtualenv.

Run with `python python/smoke_test.py` or `pytest python/smoke_test.py`.
"""

import json
import math
import tempfile

import mclp


def test_metrics():
    assert mclp.edit_distance([1, 2, 3], [1, 3]) == 1
    assert mclp.cer([1, 2, 3, 4], [1, 2, 3, 4]) == 0.0
    assert mclp.cer([9, 9], [1, 2, 3, 4]) == 1.0
    try:
        mclp.cer([1], [])
    except mclp.MclpError as e:
        assert "EmptyReference" in str(e)
    else:
        raise AssertionError("empty reference accepted")


def test_reward_gate():
    r = mclp.reward(-4.7, 0.05)
    assert not r["gated"]
    assert math.isclose(r["reward"], 15.0 - 4.7 - 10.0 * 0.05)
    g = mclp.reward(-4.7, 0.25)
    assert g["gated"] and g["reward"] == 0.0
    s = mclp.reward(-4.7, 0.9, lam=0.0, tau=float("inf"))
    assert not s["gated"] and math.isclose(s["reward"], 10.3)


def test_advantages():
    a = mclp.normalize_advantages([1.0, 2.0, 3.0, 6.0])
    assert abs(sum(a)) < 1e-9
    assert abs(sum(x * x for x in a) / len(a) - 1.0) < 1e-9
    assert mclp.normalize_advantages([2.0, 2.0]) == [0.0, 0.0]


def test_world_mclp_prefers_matching_style():
    w = mclp.World(seed=3)
    assert w.n_styles == 2
    same = other = 0.0
    for i in range(200):
        t = w.sample_transcript(10, i)
        gt = w.sample_audio(0, t, 10_000 + i)
        same += w.mclp(t, w.sample_audio(0, t, 20_000 + i), gt)
        other += w.mclp(t, w.sample_audio(1, t, 30_000 + i), gt)
    assert same > other
    again = mclp.World.from_json(w.to_json())
    t = w.sample_transcript(5, 1)
    a = w.sample_audio(1, t, 2)
    assert again.mclp(t, a, a) == w.mclp(t, a, a)


def test_pipeline_stage_and_errors():
    cfg = json.loads(mclp.smoke_config())
    assert cfg["grpo"]["group_size"] == 8
    with tempfile.TemporaryDirectory() as d:
        out = mclp.run_stage("world-gen", d, overrides=["data.sft_scenes=0", "data.test_per_turns=5"])
        assert out == d
        with open(f"{d}/manifest.json") as f:
            manifest = json.load(f)
        assert "world.json" in manifest["artifacts"]
        try:
            mclp.run_stage("train-grpo", d, overrides=["data.sft_scenes=0", "data.test_per_turns=5"])
        except mclp.MclpError as e:
            assert "MissingArtifact" in str(e)
        else:
            raise AssertionError("missing SFT checkpoint not reported")


if __name__ == "__main__":
    for name, fn in list(globals().items()):
        if name.startswith("test_"):
            fn()
            print(f"{name}: ok")
