import os

import pytest

from config import DEFAULTS, get_config


@pytest.fixture
def clean_env(monkeypatch):
    for key in DEFAULTS:
        monkeypatch.setenv(key, "")


@pytest.fixture
def small_env(tmp_path):
    path = tmp_path / "small.env"
    path.write_text("FBDP_GRID_POINTS=201\nFBDP_L_MAX=20\nFBDP_EXPECTATION=gauss_hermite\n")
    return str(path)


class TestGetConfig:
    def test_defaults(self, clean_env):
        assert get_config() == DEFAULTS

    def test_environment_values_are_cast(self, clean_env, monkeypatch):
        monkeypatch.setenv("FBDP_GRID_POINTS", "301")
        monkeypatch.setenv("FBDP_V_TOL", "1e-4")
        cfg = get_config()
        assert cfg["FBDP_GRID_POINTS"] == 301
        assert cfg["FBDP_V_TOL"] == 1e-4

    def test_file_beats_environment(self, clean_env, monkeypatch, small_env):
        monkeypatch.setenv("FBDP_GRID_POINTS", "301")
        cfg = get_config(small_env)
        assert cfg["FBDP_GRID_POINTS"] == 201
        assert cfg["FBDP_L_MAX"] == 20.0
        assert cfg["FBDP_EXPECTATION"] == "gauss_hermite"

    def test_file_values_do_not_leak(self, clean_env, small_env):
        get_config(small_env)
        assert os.environ["FBDP_GRID_POINTS"] == ""
        later = get_config()
        assert later["FBDP_GRID_POINTS"] == DEFAULTS["FBDP_GRID_POINTS"]
        assert later["FBDP_EXPECTATION"] == "exact"

    def test_two_files_are_independent(self, clean_env, small_env, tmp_path):
        other = tmp_path / "other.env"
        other.write_text("FBDP_V_STEPS=50\n")
        get_config(small_env)
        cfg = get_config(str(other))
        assert cfg["FBDP_V_STEPS"] == 50
        assert cfg["FBDP_GRID_POINTS"] == DEFAULTS["FBDP_GRID_POINTS"]

    def test_missing_file(self):
        with pytest.raises(FileNotFoundError):
            get_config("does-not-exist.env")
