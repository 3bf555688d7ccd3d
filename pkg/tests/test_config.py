"""
test_config.py - layered settings: defaults, environment, config file, overrides.
"""

import pytest

from tubeness.errors import ConfigError
from utils.utils_config import (
    FIELDS,
    Config,
    format_config,
    get_seed,
    get_thread_count,
    load_config_file,
    resolve_config,
)
from utils.utils_logger import get_log_file_path, get_log_level


@pytest.fixture(autouse=True)
def clean_environment(monkeypatch):
    for key in FIELDS:
        monkeypatch.delenv("TUBENESS_" + key.upper(), raising=False)


class TestDefaults:
    def test_cohort_optimum(self):
        cfg = Config()
        assert (cfg.s_min, cfg.s_max, cfg.t1, cfg.t2) == (1.4, 3.2, 0.96, 0.35)
        assert cfg.grid_t2 == (0.05, 0.50, 0.05)

    def test_count_kind_follows_scale(self):
        assert Config(scale="wardlaw").resolved_count_kind() == "slice"
        assert Config(scale="patankar").resolved_count_kind() == "total"
        assert Config(scale="patankar", count_kind="slice").resolved_count_kind() == "slice"

    def test_threads_default_to_every_core(self, monkeypatch):
        monkeypatch.setattr("os.cpu_count", lambda: 6)
        assert resolve_config().threads == 6


class TestLayers:
    def test_precedence(self, tmp_path, monkeypatch):
        monkeypatch.setenv("TUBENESS_S_MIN", "1.0")
        assert resolve_config().s_min == 1.0

        conf = tmp_path / "run.conf"
        conf.write_text("# scales\ns_min = 1.2\n")
        assert resolve_config(config_path=str(conf)).s_min == 1.2
        assert resolve_config({"s_min": 1.6}, str(conf)).s_min == 1.6
        assert resolve_config({"s_min": None}, str(conf)).s_min == 1.2

    def test_ranges_parse_with_commas_or_spaces(self, tmp_path):
        conf = tmp_path / "grid.conf"
        conf.write_text("grid_t2 = 0.1, 0.3, 0.1\ngrid_s_min = 0.5 1.5 0.5\n")
        values = load_config_file(conf)
        assert values["grid_t2"] == (0.1, 0.3, 0.1)
        assert values["grid_s_min"] == (0.5, 1.5, 0.5)

    def test_environment_types(self, monkeypatch):
        monkeypatch.setenv("TUBENESS_THREADS", "3")
        monkeypatch.setenv("TUBENESS_SCALE", "patankar")
        cfg = resolve_config()
        assert cfg.threads == 3
        assert cfg.scale == "patankar"

    def test_format_reads_back(self, tmp_path):
        values = {"s_min": 0.8, "t2": 0.35, "grid_t1": (0.9, 0.95, 0.01), "scale": "wardlaw"}
        conf = tmp_path / "best.conf"
        conf.write_text(format_config(values))
        assert load_config_file(conf) == values


class TestErrors:
    def test_unknown_key_in_file(self, tmp_path):
        conf = tmp_path / "bad.conf"
        conf.write_text("sigma = 2\n")
        with pytest.raises(ConfigError, match="unknown key"):
            load_config_file(conf)

    def test_line_without_equals(self, tmp_path):
        conf = tmp_path / "bad.conf"
        conf.write_text("s_min 2\n")
        with pytest.raises(ConfigError):
            load_config_file(conf)

    def test_bad_number(self, monkeypatch):
        monkeypatch.setenv("TUBENESS_N", "many")
        with pytest.raises(ConfigError, match="bad value for n"):
            resolve_config()

    def test_short_range(self, tmp_path):
        conf = tmp_path / "bad.conf"
        conf.write_text("grid_t1 = 0.9, 0.95\n")
        with pytest.raises(ConfigError):
            load_config_file(conf)

    @pytest.mark.parametrize(
        "overrides",
        [{"s_min": 3.0, "s_max": 2.0}, {"t2": 1.0}, {"scale": "fazekas"}, {"threads": 0}, {"grid_t1": "0.9, 1.0, 0.01"}],
    )
    def test_invalid_values(self, overrides):
        with pytest.raises(ConfigError):
            resolve_config(overrides)

    def test_unknown_override(self):
        with pytest.raises(ConfigError):
            resolve_config({"gamma": 1.0})


class TestEnvGetters:
    def test_thread_count(self, monkeypatch):
        monkeypatch.setenv("TUBENESS_THREADS", "5")
        assert get_thread_count() == 5

    def test_seed(self, monkeypatch):
        monkeypatch.setenv("TUBENESS_SEED", "99")
        assert get_seed() == 99

    def test_resolve_uses_the_getters(self, monkeypatch):
        monkeypatch.setenv("TUBENESS_SEED", "99")
        monkeypatch.setenv("TUBENESS_THREADS", "5")
        cfg = resolve_config()
        assert (cfg.seed, cfg.threads) == (get_seed(), get_thread_count()) == (99, 5)

    def test_seed_default_matches_config(self):
        assert get_seed() == Config.seed == resolve_config().seed

    def test_bad_thread_count(self, monkeypatch):
        monkeypatch.setenv("TUBENESS_THREADS", "all")
        with pytest.raises(ConfigError, match="bad value for threads"):
            get_thread_count()


class TestLogger:
    def test_file_sink_settings(self):
        assert get_log_file_path().name == "tubeness.log"
        assert get_log_level() in ("TRACE", "DEBUG", "INFO", "SUCCESS", "WARNING", "ERROR", "CRITICAL")
