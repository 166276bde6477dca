import numpy as np
import pytest

from dialret.config import RunConfig, parse_config_text
from dialret.errors import ConfigError
from dialret.experiments import BackboneCache, Data, ablate, run_pipeline, sweep, table_rows
from dialret.training import MetricsLog

from test_cli import TINY


@pytest.fixture(scope="module")
def cfg():
    return RunConfig().replace(**parse_config_text(TINY))


@pytest.fixture(scope="module")
def data(cfg):
    return Data.from_config(cfg)


def test_cached_backbone_equals_fresh(cfg, data):
    cache = BackboneCache()
    first = run_pipeline(cfg, data, cache)
    again = run_pipeline(cfg, data, cache)  # backbone copied from the cache
    fresh = run_pipeline(cfg, data)
    for a, b, c in zip(first.model.named_parameters(), again.model.named_parameters(),
                       fresh.model.named_parameters()):
        np.testing.assert_array_equal(a[1].data, b[1].data, err_msg=a[0])
        np.testing.assert_array_equal(a[1].data, c[1].data, err_msg=a[0])
    assert first.report == again.report == fresh.report


def test_single_value_sweep_is_plain_run(cfg, data):
    swept = sweep("dom_len", [3], cfg, data)["3"][0]
    plain = run_pipeline(cfg.replace(dom_len=3), data)
    assert swept.report == plain.report


def test_sweep_validation(cfg):
    with pytest.raises(ConfigError):
        sweep("n_layers", [1], cfg)
    with pytest.raises(ConfigError):
        sweep("ctx_len", [], cfg)
    with pytest.raises(ConfigError):
        sweep("ctx_len", [0], cfg)


def test_ablation_variants(cfg, data):
    results = ablate(cfg, data, seeds=(0,), include_random_init=True)
    assert list(results) == ["full", "-CPG", "-Domain", "-MoP", "random-init"]
    assert len(results["-MoP"][0].model.mop.experts) == 1
    no_cpg = results["-CPG"][0].model
    assert not no_cpg.groups()["cpg"]
    assert "stage1" not in results["random-init"][0].model.completed_stages
    assert len(table_rows(results)) == 5
    with pytest.raises(ConfigError):
        ablate(cfg, data, variants=["-Everything"])


def test_metrics_log_is_deterministic(cfg, data, tmp_path):
    paths = [tmp_path / f"run{i}.jsonl" for i in range(2)]
    for p in paths:
        run_pipeline(cfg.replace(eval_every=2), data, metrics=MetricsLog(p))
    assert paths[0].read_bytes() == paths[1].read_bytes()
    assert len(paths[0].read_text().splitlines()) >= 3
