"""Run configuration: environment defaults, the config file grammar and per-experiment schemas."""
import configparser
import copy
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from errors import SchemaError
from evolution import EvolutionConfig
from graph_core import BoundarySpec, build_star_grid
from soliton import SolitonParams, make_nonlinearity

# Environment defaults
RUN_DEFAULTS = {
    'out': os.environ.get('STARWAVE_OUT', 'starwave-out'),
    'seed': os.environ.get('STARWAVE_SEED', '0'),
    'log_level': os.environ.get('STARWAVE_LOG_LEVEL'),
}

# Section defaults; a value of None accepts any type
SECTION_DEFAULTS = {
    'run': {'label': '', 'seed': None},
    'grid': {'N': 3, 'L': 40.0, 'M': 401},
    'nonlinearity': {'F': [[1, -1.0]], 'allow_low_degree': True},
    'soliton': {
        'alpha': 2.0, 'beta': 0.0, 'b': 0.0, 'v': 0.0, 'method': 'auto',
        'epsilon': 0.0, 'bump_center': 3.0, 'bump_width': 1.0,
    },
    'evolution': {
        'dt': 0.01, 'T': 10.0, 'boundary': 'dirichlet', 'absorbing_width': 0.1,
        'absorbing_strength': 1.0, 'record_stride': 10, 'snapshot_stride': 0,
    },
    'linearized': {
        'sector': 'symmetric', 'n_shifts': 40, 'cluster_radius': 0.25,
        'T': 50.0, 'dt': 0.02, 'record_stride': 25, 'fit_window': [5.0, 50.0],
        'free_T': 50.0, 'free_samples': 40,
    },
    'resolvent': {
        'n_random': 20, 'k_values': [0.5], 'k_born': 6.0, 'n_max': 8, 'eta': 1e-4,
        'born_free': 'discrete', 'k_jost': [0.1, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0],
        'k_jump': [0.5, 0.7, 1.0], 'jump_points': [0.0, 1.0, 2.5], 'x_max': 10.0,
        'k_probe': 0.01, 'coupling': 1.0,
    },
    'modulation': {
        'epsilons': [0.01, 0.005], 'fit_fraction': 0.5, 'limit_dt': 0.02,
    },
    'tolerances': {
        'newton': 1e-10, 'kirchhoff': 1e-6, 'mass_guard': 1e-3, 'resolvent_residual': 1e-10,
        'resolvent_identity': 1e-8, 'born_defect': 1e-4, 'free_defect': 1e-2, 'scattering_defect': 1e-3,
        'unitarity': 1e-6, 'jump': 1e-4, 'hypothesis_c': 1e-6, 'fatal_hypothesis': False,
    },
    'sweep': {'experiment': 'spectrum', 'overrides': [], 'workers': 2},
}

BASE_SECTIONS = ('run', 'grid', 'nonlinearity', 'soliton', 'tolerances')

EXPERIMENT_SECTIONS = {
    'soliton': BASE_SECTIONS,
    'evolve': BASE_SECTIONS + ('evolution',),
    'spectrum': BASE_SECTIONS + ('linearized',),
    'resolvent-check': BASE_SECTIONS + ('resolvent',),
    'jost': BASE_SECTIONS + ('resolvent',),
    'dispersive': BASE_SECTIONS + ('linearized', 'evolution'),
    'modulate': BASE_SECTIONS + ('evolution', 'modulation'),
    'limit': BASE_SECTIONS + ('evolution', 'modulation', 'linearized'),
    'sweep': tuple(SECTION_DEFAULTS),
}


def parse_value(text):
    """JSON literal when possible (numbers, lists, true/false/null), otherwise the raw string."""
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _check_type(section, key, value, default):
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise SchemaError(f"[{section}] {key} must be true or false, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise SchemaError(f"[{section}] {key} must be a number, got {value!r}")
        return float(value)
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise SchemaError(f"[{section}] {key} must be an integer, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise SchemaError(f"[{section}] {key} must be a list, got {value!r}")
        return value
    if isinstance(default, str) and not isinstance(value, str):
        raise SchemaError(f"[{section}] {key} must be a string, got {value!r}")
    return value


def read_config_file(path):
    """Parse an INI-style file into {section: {key: raw text}}."""
    path = Path(path)
    if not path.is_file():
        raise SchemaError(f"Config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(path.read_text(encoding='utf-8'), source=str(path))
    except configparser.Error as exc:
        raise SchemaError(f"Cannot parse {path}: {exc}") from exc
    raw = {section: dict(parser.items(section)) for section in parser.sections()}
    if not raw or not any(raw.values()):
        raise SchemaError(f"Config file {path} is empty")
    return raw


def parse_overrides(overrides):
    """['section.key=value', ...] -> {section: {key: raw text}}."""
    parsed = {}
    for item in overrides or ():
        if '=' not in item or '.' not in item.split('=', 1)[0]:
            raise SchemaError(f"Override must look like section.key=value, got '{item}'")
        target, text = item.split('=', 1)
        section, key = target.strip().split('.', 1)
        parsed.setdefault(section, {})[key.strip()] = text
    return parsed


def resolve_sections(experiment, raw=None, overrides=None):
    """Defaults for the experiment's sections, updated by the file and then by the overrides."""
    if experiment not in EXPERIMENT_SECTIONS:
        raise SchemaError(f"Unknown experiment '{experiment}', expected one of {sorted(EXPERIMENT_SECTIONS)}")
    allowed = EXPERIMENT_SECTIONS[experiment]
    sections = {name: copy.deepcopy(SECTION_DEFAULTS[name]) for name in allowed}
    for layer in (raw or {}, parse_overrides(overrides)):
        for section, values in layer.items():
            if section not in sections:
                raise SchemaError(f"Section [{section}] is not accepted by experiment '{experiment}'")
            for key, text in values.items():
                if key not in SECTION_DEFAULTS[section]:
                    raise SchemaError(f"Unknown key '{key}' in [{section}]")
                value = parse_value(text) if isinstance(text, str) else text
                sections[section][key] = _check_type(section, key, value, SECTION_DEFAULTS[section][key])
    return sections


@dataclass
class ExperimentConfig:
    """Validated settings for one experiment run."""

    experiment: str
    sections: dict
    seed: int = 0
    out_dir: Path = field(default_factory=lambda: Path(RUN_DEFAULTS['out']))

    def __getitem__(self, section):
        return self.sections[section]

    def as_dict(self):
        return {'experiment': self.experiment, 'seed': self.seed, 'sections': self.sections}

    def grid(self):
        g = self.sections['grid']
        return build_star_grid(g['N'], g['L'], g['M'])

    def nonlinearity(self):
        n = self.sections['nonlinearity']
        try:
            pairs = [(int(d), float(c)) for d, c in n['F']]
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"[nonlinearity] F must be a list of [degree, coefficient] pairs, got {n['F']!r}") from exc
        return make_nonlinearity(pairs, allow_low_degree=n['allow_low_degree'])

    def soliton_params(self):
        s = self.sections['soliton']
        return SolitonParams(beta=s['beta'], b=s['b'], v=s['v'], alpha=s['alpha'])

    def boundary(self):
        e = self.sections['evolution']
        if e['boundary'] == 'dirichlet':
            return BoundarySpec()
        return BoundarySpec(kind=e['boundary'], width=e['absorbing_width'], strength=e['absorbing_strength'])

    def evolution_config(self, T=None, record_stride=None):
        e = self.sections['evolution']
        t = self.sections['tolerances']
        return EvolutionConfig(
            dt=e['dt'], T=e['T'] if T is None else T, nonlinearity=self.nonlinearity(),
            boundary=self.boundary(), record_stride=record_stride or e['record_stride'],
            snapshot_stride=e['snapshot_stride'], mass_guard=t['mass_guard'], kirchhoff_tol=t['kirchhoff'],
        )


def _seed(value):
    try:
        seed = int(value)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"Seed must be an unsigned 64-bit integer, got {value!r}") from exc
    if not 0 <= seed < 2 ** 64:
        raise SchemaError(f"Seed must be an unsigned 64-bit integer, got {seed}")
    return seed


def load_experiment_config(experiment, config_path=None, overrides=None, seed=None, out_dir=None):
    """
    Build an ExperimentConfig from an optional file, --set overrides and CLI values.

    Args:
        experiment: Experiment name
        config_path: INI file; an empty file is rejected
        overrides: ['section.key=value', ...] applied after the file
        seed: CLI seed; falls back to [run] seed, then STARWAVE_SEED
        out_dir: CLI output directory; falls back to STARWAVE_OUT

    Returns:
        ExperimentConfig
    """
    raw = read_config_file(config_path) if config_path else None
    sections = resolve_sections(experiment, raw, overrides)
    if seed is None:
        seed = sections['run']['seed'] if sections['run']['seed'] is not None else RUN_DEFAULTS['seed']
    return ExperimentConfig(experiment, sections, _seed(seed), Path(out_dir or RUN_DEFAULTS['out']))
