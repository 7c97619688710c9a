"""Self-improvement pipeline: tags, provenance, manifests, resume."""
import copy
import json

import pytest

from steppref.backends.toy import default_policy
from steppref.core import SamplingParams, Step
from steppref.dpo import DPOConfig
from steppref.errors import ConfigError, PairProvenanceError
from steppref.evalkit import EvalConfig
from steppref.iteration import (
    IterationConfig,
    check_pair_provenance,
    config_hash,
    load_manifest,
    make_tag,
    run_pipeline,
    save_manifest,
    tag_index,
)
from steppref.search import SearchConfig, StepPreferencePair


def _pair(producer):
    return StepPreferencePair("q", (), Step(1, "a"), Step(1, "b"), 1, producer)


def test_make_tag_and_index():
    assert make_tag(1) == "M1"
    assert make_tag(4) == "M4"
    assert tag_index("M3") == 3
    assert tag_index("M12") == 12
    assert tag_index("checkpoint-7") is None
    assert tag_index("M") is None


def test_pair_provenance_guard():
    # pairs produced by the target model must not train that model
    check_pair_provenance([_pair("M1")], "M2")
    check_pair_provenance([_pair("external")], "M2")
    with pytest.raises(PairProvenanceError):
        check_pair_provenance([_pair("M2")], "M2")
    with pytest.raises(PairProvenanceError):
        check_pair_provenance([_pair("M3")], "M2")


def _cfg(run_dir, n_iterations=2, master_seed=7):
    per_iter = (6,) * n_iterations
    return IterationConfig(
        n_iterations=n_iterations,
        questions_per_iteration=per_iter,
        question_source="synth:3:12:3",
        master_seed=master_seed,
        search=SearchConfig(width=4, sampling=SamplingParams(temperature=1.0, top_p=1.0)),
        dpo=DPOConfig(beta=0.5, learning_rate=0.9, epochs=2, batch_size=1),
        eval_suite=EvalConfig(mode="greedy", benchmarks=("synth:3:12:3",)),
        run_dir=str(run_dir),
    )


def test_config_echo_excludes_run_dir(tmp_path):
    a = _cfg(tmp_path / "a").to_dict()
    b = _cfg(tmp_path / "b").to_dict()
    assert a == b
    assert "run_dir" not in json.dumps(a)
    assert config_hash(a) == config_hash(b)


def test_config_validation(tmp_path):
    with pytest.raises(ValueError):
        _cfg(tmp_path, n_iterations=-1)
    with pytest.raises(ValueError):
        IterationConfig(
            n_iterations=2,
            questions_per_iteration=(5,),
            question_source="synth:1:10:3",
        )


def _strip_wall(manifest):
    m = copy.deepcopy(manifest)
    for e in m["entries"]:
        e.pop("wall_time_s", None)
    return m


def test_pipeline_manifest_shape(tmp_path):
    cfg = _cfg(tmp_path / "run")
    manifest = run_pipeline(cfg, default_policy(seed=9), quiet=True)
    assert manifest["schema"] == "manifest"
    assert manifest["config_hash"] == config_hash(cfg.to_dict())
    assert len(manifest["entries"]) == 2
    first = manifest["entries"][0]
    assert first["source_tag"] == "M1" and first["tag"] == "M2"
    assert first["n_questions"] == 6
    assert first["n_pairs"] > 0
    assert set(first["files"]) == {"ppd", "trace", "snapshot", "eval"}
    for info in first["files"].values():
        assert (tmp_path / "run" / info["path"]).exists()
        assert len(info["sha256"]) == 64
    assert manifest["baseline"] is not None
    # the manifest on disk matches the returned one
    assert load_manifest(tmp_path / "run") == manifest


def test_pipeline_reruns_identical_modulo_wall_time(tmp_path):
    m1 = run_pipeline(_cfg(tmp_path / "a"), default_policy(seed=9), quiet=True)
    m2 = run_pipeline(_cfg(tmp_path / "b"), default_policy(seed=9), quiet=True)
    assert _strip_wall(m1) == _strip_wall(m2)


def test_pipeline_refuses_unrequested_resume(tmp_path):
    cfg = _cfg(tmp_path / "run")
    run_pipeline(cfg, default_policy(seed=9), quiet=True)
    with pytest.raises(ConfigError):
        run_pipeline(cfg, default_policy(seed=9), quiet=True, resume=False)


def test_pipeline_refuses_config_drift(tmp_path):
    cfg = _cfg(tmp_path / "run")
    run_pipeline(cfg, default_policy(seed=9), quiet=True)
    drifted = _cfg(tmp_path / "run", master_seed=8)
    with pytest.raises(ConfigError):
        run_pipeline(drifted, default_policy(seed=9), quiet=True, resume=True)


def test_pipeline_resume_is_noop_when_done(tmp_path):
    cfg = _cfg(tmp_path / "run")
    m1 = run_pipeline(cfg, default_policy(seed=9), quiet=True)
    m2 = run_pipeline(cfg, default_policy(seed=9), quiet=True, resume=True)
    assert _strip_wall(m1) == _strip_wall(m2)


def test_pipeline_killed_and_resumed_converges(tmp_path, monkeypatch):
    import steppref.iteration as iteration

    fresh = run_pipeline(_cfg(tmp_path / "a"), default_policy(seed=9), quiet=True)

    orig = iteration.run_iteration
    calls = {"n": 0}

    def interrupted(*args, **kwargs):
        if calls["n"] >= 1:
            raise KeyboardInterrupt
        calls["n"] += 1
        return orig(*args, **kwargs)

    monkeypatch.setattr(iteration, "run_iteration", interrupted)
    with pytest.raises(KeyboardInterrupt):
        run_pipeline(_cfg(tmp_path / "b"), default_policy(seed=9), quiet=True)
    monkeypatch.setattr(iteration, "run_iteration", orig)

    resumed = run_pipeline(_cfg(tmp_path / "b"), default_policy(seed=9), quiet=True, resume=True)
    assert _strip_wall(resumed) == _strip_wall(fresh)


def test_manifest_save_load_round_trip(tmp_path):
    manifest = {"schema": "manifest", "version": 1, "entries": [], "config": {}}
    save_manifest(tmp_path, manifest)
    assert load_manifest(tmp_path) == manifest
    assert load_manifest(tmp_path / "missing") is None
