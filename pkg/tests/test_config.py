"""TOML config loading, env interpolation, and override merging."""
import pytest

from steppref.config import (
    dpo_config,
    eval_config,
    interpolate_env,
    iteration_config,
    judge_config,
    load_config,
    remote_config,
    search_config,
)
from steppref.errors import ConfigError


def test_interpolate_env_substitutes(monkeypatch):
    monkeypatch.setenv("STEPPREF_TEST_HOST", "example.test")
    assert interpolate_env("http://${STEPPREF_TEST_HOST}/v1") == "http://example.test/v1"


def test_interpolate_env_recurses_containers(monkeypatch):
    monkeypatch.setenv("STEPPREF_TEST_VAL", "abc")
    doc = {"a": ["${STEPPREF_TEST_VAL}", 3], "b": {"c": "x${STEPPREF_TEST_VAL}y"}}
    out = interpolate_env(doc)
    assert out == {"a": ["abc", 3], "b": {"c": "xabcy"}}


def test_interpolate_env_missing_var(monkeypatch):
    monkeypatch.delenv("STEPPREF_DEFINITELY_UNSET", raising=False)
    with pytest.raises(ConfigError):
        interpolate_env("${STEPPREF_DEFINITELY_UNSET}")


def test_interpolate_env_leaves_other_values_alone():
    assert interpolate_env(7) == 7
    assert interpolate_env("no placeholders") == "no placeholders"


def test_load_config_round_trip(tmp_path, monkeypatch):
    monkeypatch.setenv("STEPPREF_TEST_URL", "http://127.0.0.1:9")
    path = tmp_path / "run.toml"
    path.write_text(
        '[search]\nwidth = 6\ntemperature = 0.5\n'
        '[dpo]\nbeta = 0.1\nbatch_size = 0\n'
        '[remote]\nbase_url = "${STEPPREF_TEST_URL}"\nmodel_name = "m"\n'
    )
    doc = load_config(path)
    assert doc["search"]["width"] == 6
    assert doc["remote"]["base_url"] == "http://127.0.0.1:9"
    cfg = search_config(doc["search"])
    assert cfg.width == 6 and cfg.sampling.temperature == 0.5


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.toml")


def test_load_config_invalid_toml(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text("[search\nwidth = 1")
    with pytest.raises(ConfigError):
        load_config(path)


def test_search_config_unknown_key():
    with pytest.raises(ConfigError, match="unknown"):
        search_config({"widht": 4})


def test_search_config_defaults_fill_in():
    from steppref.search import SearchConfig

    assert search_config({}) == SearchConfig()


def test_search_config_bad_value_wrapped():
    with pytest.raises(ConfigError):
        search_config({"width": 1})


def test_dpo_config_zero_batch_means_full():
    cfg = dpo_config({"batch_size": 0})
    assert cfg.batch_size is None
    cfg = dpo_config({"batch_size": 3})
    assert cfg.batch_size == 3


def test_dpo_config_unknown_key():
    with pytest.raises(ConfigError):
        dpo_config({"bata": 0.1})


def test_dpo_config_bad_value_wrapped():
    with pytest.raises(ConfigError):
        dpo_config({"epochs": 0})


def test_judge_config_round_trip():
    cfg = judge_config({"accuracy_q": 0.9, "rng_seed": 5})
    assert cfg.accuracy_q == 0.9 and cfg.rng_seed == 5
    with pytest.raises(ConfigError):
        judge_config({"accuracy": 0.9})


def test_eval_config_benchmarks_string_or_list():
    one = eval_config({"benchmarks": "synth:1:5:3"})
    many = eval_config({"benchmarks": ["synth:1:5:3", "synth:2:5:3"]})
    assert one.benchmarks == ("synth:1:5:3",)
    assert many.benchmarks == ("synth:1:5:3", "synth:2:5:3")


def test_eval_config_tts_sampling_keys():
    cfg = eval_config({"mode": "tts", "tts_n": 4, "tts_temperature": 0.7, "tts_top_p": 0.9})
    assert cfg.mode == "tts" and cfg.tts_n == 4
    assert cfg.tts_sampling.temperature == 0.7
    assert cfg.tts_sampling.top_p == 0.9


def test_remote_config_requires_endpoint_and_model():
    with pytest.raises(ConfigError, match="base_url"):
        remote_config({"model_name": "m"})
    with pytest.raises(ConfigError, match="model_name"):
        remote_config({"base_url": "http://127.0.0.1:9"})
    cfg = remote_config({"base_url": "http://127.0.0.1:9", "model_name": "m", "max_retries": 1})
    assert cfg.max_retries == 1


def _iter_table():
    return {
        "n_iterations": 2,
        "questions_per_iteration": 4,
        "question_source": "synth:3:4:3",
        "master_seed": 9,
        "search": {"width": 3},
        "dpo": {"beta": 0.2},
    }


def test_iteration_config_int_qpi_replicated():
    cfg = iteration_config(_iter_table())
    assert cfg.questions_per_iteration == (4, 4)
    assert cfg.search.width == 3
    assert cfg.dpo.beta == 0.2
    assert cfg.master_seed == 9


def test_iteration_config_requires_core_keys():
    for key in ("n_iterations", "questions_per_iteration", "question_source"):
        table = _iter_table()
        del table[key]
        with pytest.raises(ConfigError, match=key):
            iteration_config(table)


def test_iteration_config_overrides_win():
    cfg = iteration_config(_iter_table(), overrides={"master_seed": 11, "run_dir": "out"})
    assert cfg.master_seed == 11 and cfg.run_dir == "out"


def test_iteration_config_none_overrides_skipped():
    cfg = iteration_config(_iter_table(), overrides={"master_seed": None})
    assert cfg.master_seed == 9


def test_iteration_config_nested_merge():
    cfg = iteration_config(
        _iter_table(),
        overrides={"search": {"temperature": 0.5, "width": None}, "judge": {"accuracy_q": 0.8}},
    )
    # width from the file survives; temperature comes from the override
    assert cfg.search.width == 3
    assert cfg.search.sampling.temperature == 0.5
    assert cfg.judge.accuracy_q == 0.8


def test_iteration_config_unknown_key():
    table = _iter_table()
    table["n_iteration"] = 2
    with pytest.raises(ConfigError):
        iteration_config(table)
