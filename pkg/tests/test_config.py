"""Tests for run configuration and process settings"""

import json

import pytest

from wfen.config import TINY_PRESET, RunConfig, WFENConfig, WFENSettings
from wfen.errors import ConfigError
from wfen.utils import get_env_value


class TestRunConfig:
    def test_defaults_round_trip(self):
        text = RunConfig.defaults_json()
        assert RunConfig.parse(text) == RunConfig()
        assert json.loads(text)["train"]["lr"] == pytest.approx(2e-4)

    def test_default_architecture(self):
        model = RunConfig().model
        assert model.stage_channels() == [40, 80, 160, 160]
        assert (model.encoder_blocks, model.bottleneck_blocks) == ([2, 1, 1], 6)
        assert model.downsample == "wfd" and model.upsample == "wfu"

    def test_partial_file_fills_defaults(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"train": {"steps": 5}}))
        config = RunConfig.load(path)
        assert config.train.steps == 5
        assert config.train.batch_size == 4

    def test_unknown_keys_rejected(self):
        with pytest.raises(ConfigError, match="learning_rate"):
            RunConfig.parse(json.dumps({"train": {"learning_rate": 0.1}}))

    def test_every_violation_listed(self):
        text = json.dumps(
            {
                "model": {"heads": [3, 2, 4, 4]},
                "train": {"image_size": 36, "dataset": "directory"},
            }
        )
        with pytest.raises(ConfigError) as excinfo:
            RunConfig.parse(text)
        problems = "\n".join(excinfo.value.violations)
        assert "heads[0]" in problems
        assert "multiples of 8" in problems
        assert "sr_factor" in problems
        assert "data_dir" in problems

    def test_schema_errors_name_their_field(self):
        with pytest.raises(ConfigError) as excinfo:
            RunConfig.parse(json.dumps({"train": {"steps": -1, "lr": "fast"}}))
        fields = [v.split(":")[0] for v in excinfo.value.violations]
        assert fields == ["train.steps", "train.lr"]

    def test_malformed_json(self):
        with pytest.raises(ConfigError):
            RunConfig.parse("{not json")

    def test_window_must_tile_stage(self):
        config = RunConfig.model_validate({"model": {"windows": [6, 8, 8, 8]}})
        assert any("windows[0]" in v for v in config.violations())

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            RunConfig.load(tmp_path / "absent.json")

    def test_output_dir_falls_back_to_settings(self, settings):
        assert str(RunConfig().output_dir(settings)) == settings.output_dir
        config = RunConfig.model_validate({"io": {"output_dir": "elsewhere"}})
        assert str(config.output_dir(settings)) == "elsewhere"


class TestTinyPreset:
    def test_preset_fills_sizes(self):
        config = WFENConfig(tiny=True)
        assert config.base_channels == TINY_PRESET["base_channels"]
        assert config.decoder_blocks == [1, 1, 1]

    def test_explicit_sizes_win_over_preset(self):
        config = WFENConfig(tiny=True, base_channels=64)
        assert config.base_channels == 64
        assert config.encoder_blocks == [1, 1, 1]
        assert config.bottleneck_blocks == 2

    def test_explicit_sizes_from_nested_json(self):
        config = RunConfig.model_validate({"model": {"tiny": True, "bottleneck_blocks": 3}})
        assert config.model.bottleneck_blocks == 3
        assert config.model.base_channels == TINY_PRESET["base_channels"]

    def test_preset_keeps_other_fields(self):
        config = WFENConfig(tiny=True, downsample="avgpool")
        assert config.downsample == "avgpool"
        assert config.violations() == []

    def test_cosine_scores_off_by_default(self):
        assert WFENConfig().qk_norm is False
        assert WFENConfig(qk_norm=True).qk_norm is True


class TestSettings:
    def test_environment_values(self, monkeypatch):
        monkeypatch.setenv("WFEN_THREADS", "3")
        monkeypatch.setenv("WFEN_SHOW_PROGRESS", "off")
        assert get_env_value("WFEN_THREADS", 1, int) == 3
        assert get_env_value("WFEN_SHOW_PROGRESS", True, bool) is False

    def test_invalid_environment_value_uses_default(self, monkeypatch):
        monkeypatch.setenv("WFEN_THREADS", "many")
        assert get_env_value("WFEN_THREADS", 1, int) == 1

    def test_threads_floor(self):
        assert WFENSettings(threads=0).threads == 1
