import pytest

import run_config
from errors import SchemaError
from evolution import EvolutionConfig
from run_config import (SECTION_DEFAULTS, load_experiment_config, parse_overrides, parse_value, read_config_file,
                        resolve_sections)


def write_ini(tmp_path, text, name="run.ini"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


class TestValues:
    """Value parsing and overrides"""

    @pytest.mark.parametrize("text,expected", [
        ("2", 2),
        ("2.5", 2.5),
        ("[1, 2]", [1, 2]),
        ("true", True),
        ("dirichlet", "dirichlet"),
        ("  40.0 ", 40.0),
    ])
    def test_parse_value(self, text, expected):
        """JSON literals first, raw strings otherwise"""
        assert parse_value(text) == expected

    def test_parse_overrides(self):
        """section.key=value splits on the first '=' only"""
        parsed = parse_overrides(["grid.N=5", "run.label=a=b"])
        assert parsed == {"grid": {"N": "5"}, "run": {"label": "a=b"}}

    @pytest.mark.parametrize("item", ["gridN=5", "grid.N"])
    def test_malformed_override(self, item):
        """Overrides need a dotted key and a value"""
        with pytest.raises(SchemaError):
            parse_overrides([item])


class TestSections:
    """Defaults, layering and type checks"""

    def test_defaults_per_experiment(self):
        """Each experiment only receives its own sections"""
        sections = resolve_sections("soliton")
        assert set(sections) == {"run", "grid", "nonlinearity", "soliton", "tolerances"}
        assert sections["grid"] == SECTION_DEFAULTS["grid"]

    def test_defaults_are_copied(self):
        """Changing a resolved section leaves the defaults alone"""
        sections = resolve_sections("soliton")
        sections["nonlinearity"]["F"].append([4, 1.0])
        assert SECTION_DEFAULTS["nonlinearity"]["F"] == [[1, -1.0]]

    def test_override_beats_file(self):
        """The file layer is applied before --set"""
        sections = resolve_sections("soliton", {"grid": {"N": "4"}}, ["grid.N=6"])
        assert sections["grid"]["N"] == 6

    def test_integer_promoted_to_float(self):
        """Integer literals are accepted for float keys"""
        sections = resolve_sections("soliton", overrides=["grid.L=20"])
        assert sections["grid"]["L"] == 20.0 and isinstance(sections["grid"]["L"], float)

    @pytest.mark.parametrize("override", [
        "grid.N=2.5",
        "grid.L=abc",
        "tolerances.fatal_hypothesis=1",
        "resolvent.k_jost=0.5",
        "soliton.method=3",
    ])
    def test_type_errors(self, override):
        """Mistyped values are schema errors"""
        experiment = "jost" if override.startswith("resolvent") else "soliton"
        with pytest.raises(SchemaError):
            resolve_sections(experiment, overrides=[override])

    def test_unknown_key(self):
        """Keys outside the schema are rejected"""
        with pytest.raises(SchemaError, match="Unknown key"):
            resolve_sections("soliton", overrides=["grid.edges=3"])

    def test_section_not_accepted(self):
        """The soliton experiment has no [evolution] section"""
        with pytest.raises(SchemaError, match="not accepted"):
            resolve_sections("soliton", overrides=["evolution.dt=0.1"])

    def test_unknown_experiment(self):
        """Only registered experiments resolve"""
        with pytest.raises(SchemaError):
            resolve_sections("fourier")


class TestConfigFile:
    """INI files"""

    def test_read(self, tmp_path):
        """Keys keep their case and values stay raw text"""
        path = write_ini(tmp_path, "[grid]\nN = 4\nL = 12.5\n")
        assert read_config_file(path) == {"grid": {"N": "4", "L": "12.5"}}

    def test_missing_file(self, tmp_path):
        """A path that does not exist is a schema error"""
        with pytest.raises(SchemaError):
            read_config_file(tmp_path / "absent.ini")

    @pytest.mark.parametrize("text", ["", "[grid]\n"])
    def test_empty_file(self, tmp_path, text):
        """Files without any key are rejected"""
        with pytest.raises(SchemaError, match="empty"):
            read_config_file(write_ini(tmp_path, text))

    def test_unparseable_file(self, tmp_path):
        """Keys outside a section do not parse"""
        with pytest.raises(SchemaError):
            read_config_file(write_ini(tmp_path, "N = 4\n"))


class TestExperimentConfig:
    """Seeds, output directories and derived objects"""

    def test_seed_precedence(self, tmp_path):
        """CLI seed, then [run] seed, then the environment default"""
        path = write_ini(tmp_path, "[run]\nseed = 11\n")
        assert load_experiment_config("soliton", path).seed == 11
        assert load_experiment_config("soliton", path, seed="12").seed == 12

    def test_environment_seed(self, monkeypatch):
        """STARWAVE_SEED fills in when nothing else does"""
        monkeypatch.setitem(run_config.RUN_DEFAULTS, "seed", "7")
        assert load_experiment_config("soliton").seed == 7

    @pytest.mark.parametrize("seed", ["-1", str(2 ** 64), "abc"])
    def test_invalid_seed(self, seed):
        """Seeds are unsigned 64-bit integers"""
        with pytest.raises(SchemaError):
            load_experiment_config("soliton", seed=seed)

    def test_output_directory(self, tmp_path, monkeypatch):
        """--out wins over STARWAVE_OUT"""
        monkeypatch.setitem(run_config.RUN_DEFAULTS, "out", str(tmp_path / "env"))
        assert load_experiment_config("soliton").out_dir == tmp_path / "env"
        assert load_experiment_config("soliton", out_dir=tmp_path / "cli").out_dir == tmp_path / "cli"

    def test_derived_objects(self):
        """Grid, boundary and evolution settings come from the sections"""
        cfg = load_experiment_config("evolve", overrides=[
            "grid.M=101", "grid.L=10.0", "evolution.boundary=absorbing", "evolution.absorbing_width=0.2",
            "evolution.T=1.0",
        ])
        assert cfg.grid().samples_per_edge == 101
        boundary = cfg.boundary()
        assert boundary.kind == "absorbing" and boundary.width == 0.2
        ecfg = cfg.evolution_config()
        assert isinstance(ecfg, EvolutionConfig) and ecfg.n_steps == 100
        assert ecfg.mass_guard == SECTION_DEFAULTS["tolerances"]["mass_guard"]

    def test_malformed_nonlinearity(self):
        """F must hold [degree, coefficient] pairs"""
        cfg = load_experiment_config("soliton", overrides=["nonlinearity.F=[1, 2]"])
        with pytest.raises(SchemaError):
            cfg.nonlinearity()

    def test_as_dict(self):
        """The manifest view carries experiment, seed and sections"""
        cfg = load_experiment_config("soliton", seed="3")
        assert cfg.as_dict()["seed"] == 3
        assert cfg.as_dict()["sections"]["grid"]["N"] == 3
