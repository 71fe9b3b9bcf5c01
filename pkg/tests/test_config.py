"""Tests for configuration management."""

import sys
import tempfile
from pathlib import Path

import pytest

from resus.core.config import (
    Config,
    apply_overrides,
    load_config,
    parse_config,
    save_config,
    to_toml,
)
from resus.core.errors import ConfigError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class TestConfig:
    """Tests for Config dataclass."""

    def test_default_config(self):
        """Test defaults follow the published training settings."""
        config = Config()

        assert config.train.lr == 0.001
        assert config.train.batch_size == 1024
        assert config.train.patience == 2
        assert config.train.max_epochs == 10
        assert config.model.embed_dim == 10
        assert config.model.architecture == "deepfm"
        assert config.meta.mode == "rr"
        assert config.meta.support_dist == "uniform"
        assert config.meta.beta_init == 1.0
        assert config.meta.lambda_init == 1.0
        assert config.data.split_ratio == [7.0, 2.0, 1.0]
        assert config.data.rating_threshold == 3.0
        assert config.data.min_item_interactions == 100

    def test_tau_per_dataset(self):
        """Test tau defaults to the dataset preset and honours an override."""
        config = Config()
        assert config.tau == 30
        config.data.preset = "taobao"
        assert config.tau == 150
        config.meta.tau = 12
        assert config.tau == 12

    def test_coldness_presets(self):
        """Test the Taobao preset keeps its stepped sizes."""
        config = Config()
        config.data.preset = "taobao"
        assert config.eval_sizes() == list(range(10, 151, 10))

    def test_custom_tau_thirds(self):
        """Test a custom tau is split into three equal stages."""
        config = Config()
        config.meta.tau = 9
        coldness = config.coldness()
        assert coldness.stage_sizes("I") == [1, 2, 3]
        assert coldness.stage_sizes("III") == [7, 8, 9]

    def test_tiny_tau_rejected(self):
        """Test a tau below three cannot form stages."""
        config = Config()
        config.meta.tau = 2
        with pytest.raises(ConfigError):
            config.coldness()

    @pytest.mark.parametrize(
        ("section", "key", "value"),
        [
            ("model", "architecture", "xdeepfm"),
            ("model", "precision", "float16"),
            ("meta", "mode", "maml"),
            ("meta", "support_dist", "zipf"),
            ("data", "split_ratio", [7.0, 3.0]),
            ("train", "seeds", []),
            ("run", "threads", 0),
        ],
    )
    def test_validate_rejects(self, section, key, value):
        """Test invalid values fail validation."""
        config = Config()
        setattr(getattr(config, section), key, value)
        with pytest.raises(ConfigError):
            config.validate()

    def test_eval_sizes_beyond_tau(self):
        """Test evaluation sizes above tau are rejected."""
        config = Config()
        config.eval.sizes = [5, 40]
        with pytest.raises(ConfigError, match="40"):
            config.validate()


class TestConfigFile:
    """Tests for loading and saving TOML."""

    def test_load_config_nonexistent_file(self):
        """Test an explicitly named missing file is an error."""
        with pytest.raises(ConfigError):
            load_config(Path("/nonexistent/resus.toml"))

    def test_load_partial_file(self):
        """Test values not in the file keep their defaults."""
        with tempfile.TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "resus.toml"
            path.write_text('[meta]\nmode = "nn"\nbeta_per_size = true\n\n[train]\nlr = 1\n')
            config = load_config(path)
            assert config.meta.mode == "nn"
            assert config.meta.beta_per_size is True
            assert config.train.lr == 1.0
            assert config.train.batch_size == 1024

    def test_unknown_key(self):
        """Test unknown keys are reported."""
        with pytest.raises(ConfigError, match="unknown keys in \\[meta\\]"):
            parse_config({"meta": {"moed": "nn"}})

    def test_unknown_section(self):
        """Test unknown sections are reported."""
        with pytest.raises(ConfigError, match="sections"):
            parse_config({"display": {}})

    def test_wrong_type(self):
        """Test a string where a number belongs is reported."""
        with pytest.raises(ConfigError, match="train.batch_size"):
            parse_config({"train": {"batch_size": "big"}})

    def test_bool_is_not_int(self):
        """Test booleans are not accepted for integer settings."""
        with pytest.raises(ConfigError):
            parse_config({"run": {"threads": True}})

    def test_malformed_toml(self):
        """Test unparsable TOML raises ConfigError."""
        with tempfile.TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "bad.toml"
            path.write_text("[meta\nmode = ")
            with pytest.raises(ConfigError, match="cannot read"):
                load_config(path)

    def test_save_and_reload(self):
        """Test a saved configuration loads back unchanged."""
        with tempfile.TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "nested" / "config.toml"
            config = Config()
            config.meta.mode = "mus"
            config.model.mlp_widths = [16, 8]
            config.data.source = 'C:\\data\\"quoted"'
            save_config(config, path)
            assert load_config(path) == config

    def test_to_toml_lists_every_key(self):
        """Test the TOML echo contains every section and key."""
        data = tomllib.loads(to_toml(Config()))
        assert set(data) == {"data", "model", "meta", "train", "eval", "run"}
        assert data["eval"]["sizes"] == []
        assert data["meta"]["joint_shared"] is False


class TestOverrides:
    """Tests for apply_overrides."""

    def test_dotted_override(self):
        """Test dotted keys replace values and None is skipped."""
        config = apply_overrides(Config(), {"meta.mode": "nn", "meta.tau": 12, "run.out": None})
        assert config.meta.mode == "nn"
        assert config.tau == 12
        assert config.run.out == "runs/default"

    def test_original_untouched(self):
        """Test overrides return a copy."""
        original = Config()
        apply_overrides(original, {"model.architecture": "fm"})
        assert original.model.architecture == "deepfm"

    def test_unknown_override(self):
        """Test overriding a missing key is an error."""
        with pytest.raises(ConfigError):
            apply_overrides(Config(), {"meta.nope": 1})

    def test_invalid_override(self):
        """Test overrides are validated."""
        with pytest.raises(ConfigError):
            apply_overrides(Config(), {"meta.mode": "maml"})
