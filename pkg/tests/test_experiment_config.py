import pytest

from conftest import CONFIGS_DIR, SMALL_CONFIG
from core.errors import ConfigError
from core.experiment_config import (
    build_method_config,
    build_operator,
    build_prior,
    build_schedule,
    load_experiment,
    parse_seeds,
)
from tools.baseline_tool import BaselineConfig
from tools.operator_tool import OperatorKind
from tools.vipaint_tool import VipaintConfig


def line_of(text: str, needle: str) -> int:
    return next(i for i, line in enumerate(text.splitlines(), start=1) if needle in line)


class TestParseSeeds:
    @pytest.mark.parametrize(
        "value,expected",
        [(3, [3]), ([0, 2], [0, 2]), ("0..3", [0, 1, 2, 3]), ("1,4,7", [1, 4, 7]), (" 2 .. 2 ", [2])],
    )
    def test_forms(self, value, expected):
        assert parse_seeds(value) == expected

    @pytest.mark.parametrize("value", ["3..1", "a,b", "", [1, 1], True, 1.5, [0, "1"]])
    def test_invalid(self, value):
        with pytest.raises(ValueError):
            parse_seeds(value)


class TestShippedConfigs:
    @pytest.mark.parametrize("path", sorted(CONFIGS_DIR.glob("*.yaml")), ids=lambda p: p.stem)
    def test_loads(self, path):
        config = load_experiment(path)
        schedule = build_schedule(config.schedule)
        for method, settings in config.methods.items():
            build_method_config(method, schedule, settings)
        assert len(config.problem_hash) == 64

    def test_bimodal_contents(self, bimodal_config_path):
        config = load_experiment(bimodal_config_path)
        assert config.seeds == list(range(10))
        assert config.method == "vipaint"
        op = build_operator(config.operator, 2)
        assert op.kind is OperatorKind.MASK and op.out_dim == 1
        assert build_prior(config.prior).n_components == 2


class TestValidation:
    def test_defaults(self, write_config):
        config = load_experiment(write_config())
        assert config.name == "small_bimodal"
        assert config.schedule == {"kind": "VE", "T": 1.0, "sigma_min": 0.002, "sigma_max": 50.0}
        assert config.denoiser == {"kind": "exact"}
        assert config.seeds == [0, 1]

    def test_locates_bad_value(self, write_config):
        text = SMALL_CONFIG.replace("sigma_v: 0.05", "sigma_v: -0.05")
        with pytest.raises(ConfigError) as info:
            load_experiment(write_config(text))
        assert info.value.field == "operator.sigma_v"
        assert info.value.line == line_of(text, "sigma_v")
        assert "operator.sigma_v" in str(info.value)

    def test_missing_schema_version(self, write_config):
        with pytest.raises(ConfigError) as info:
            load_experiment(write_config(SMALL_CONFIG.replace("schema_version: 1\n", "")))
        assert info.value.field == "schema_version"

    def test_wrong_schema_version(self, write_config):
        with pytest.raises(ConfigError) as info:
            load_experiment(write_config(SMALL_CONFIG.replace("schema_version: 1", "schema_version: 2")))
        assert info.value.line == 1

    def test_unknown_method(self, write_config):
        text = SMALL_CONFIG.replace("  blended:", "  ddrm:")
        with pytest.raises(ConfigError) as info:
            load_experiment(write_config(text))
        assert info.value.field == "methods.ddrm"
        assert info.value.line == line_of(text, "ddrm") + 1

    def test_mask_size(self, write_config):
        with pytest.raises(ConfigError) as info:
            load_experiment(write_config(SMALL_CONFIG.replace("mask: [0, 1]", "mask: [0, 1, 1]")))
        assert info.value.field == "operator.mask"

    def test_observation_size(self, write_config):
        with pytest.raises(ConfigError) as info:
            load_experiment(write_config(SMALL_CONFIG.replace("y: [0.0]", "y: [0.0, 1.0]")))
        assert info.value.field == "observation.y"

    def test_bad_prior(self, write_config):
        with pytest.raises(ConfigError) as info:
            load_experiment(write_config(SMALL_CONFIG.replace("weights: [0.5, 0.5]", "weights: [0.5, 0.6]")))
        assert info.value.field == "prior"

    def test_invalid_yaml(self, write_config):
        with pytest.raises(ConfigError) as info:
            load_experiment(write_config(SMALL_CONFIG + "methods: [unclosed\n"))
        assert info.value.line is not None

    def test_missing_mask_file(self, write_config):
        text = SMALL_CONFIG.replace("mask: [0, 1]", "mask_file: nowhere.csv")
        with pytest.raises(ConfigError) as info:
            load_experiment(write_config(text))
        assert info.value.field == "operator.mask_file"

    def test_mask_file(self, write_config, tmp_path):
        (tmp_path / "mask.csv").write_text("0,1\n")
        config = load_experiment(write_config(SMALL_CONFIG.replace("mask: [0, 1]", "mask_file: mask.csv")))
        assert build_operator(config.operator, 2).out_dim == 1

    def test_bad_seeds(self, write_config):
        with pytest.raises(ConfigError) as info:
            load_experiment(write_config(SMALL_CONFIG.replace('seeds: "0..1"', 'seeds: "3..1"')))
        assert info.value.field == "seeds"

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_experiment(tmp_path / "absent.yaml")


class TestProblemHash:
    def test_stable_across_loads(self, write_config):
        assert load_experiment(write_config()).problem_hash == load_experiment(write_config()).problem_hash

    def test_ignores_method_settings(self, write_config):
        a = load_experiment(write_config(name="a.yaml"))
        b = load_experiment(write_config(SMALL_CONFIG.replace("steps: 5\n  dps", "steps: 7\n  dps"), name="b.yaml"))
        assert a.problem_hash == b.problem_hash

    def test_changes_with_observation(self, write_config):
        a = load_experiment(write_config(name="a.yaml"))
        b = load_experiment(write_config(SMALL_CONFIG.replace("y: [0.0]", "y: [0.5]"), name="b.yaml"))
        assert a.problem_hash != b.problem_hash


class TestMethodConfigs:
    def test_vipaint_settings(self, ve):
        config = build_method_config("vipaint", ve, {"preset": "vipaint-4", "n_mc": 2})
        assert isinstance(config, VipaintConfig)
        assert (config.k, config.n_mc) == (4, 2)

    def test_baseline_settings(self, ve):
        config = build_method_config("dps", ve, {"steps": 10})
        assert isinstance(config, BaselineConfig)
        assert (config.steps, config.zeta) == (10, 5.0)

    def test_unknown_setting(self, ve):
        with pytest.raises(ConfigError) as info:
            build_method_config("vipaint", ve, {"learning_rate": 0.1})
        assert info.value.field == "methods.vipaint"

    def test_invalid_setting(self, vp):
        with pytest.raises(ConfigError):
            build_method_config("vipaint", vp, {"eta": 0.0})
