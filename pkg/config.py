import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Union

from dynamics import ScenarioConfig, Variant
from errors import ConfigError, InvalidParameter
from material import MaterialParams, Scales

logger = logging.getLogger(__name__)


class Config:
    """Process-level settings read from the environment (and .env via python-dotenv)"""

    def __init__(self):
        # Sweep worker pool
        self.THREADS = int(os.environ.get('GELSIM_THREADS', os.cpu_count() or 1))

        # Logging
        self.LOG_DIR = os.environ.get('GELSIM_LOG_DIR', 'logs')
        self.LOG_LEVEL = os.environ.get('GELSIM_LOG_LEVEL', 'INFO')

        # Outputs
        self.OUTPUT_DIR = os.environ.get('GELSIM_OUTPUT_DIR', 'output')

        # Mesh level above which the Krylov fallback replaces sparse LU
        self.KRYLOV_LEVEL = int(os.environ.get('GELSIM_KRYLOV_LEVEL', 7))

        self.CONSOLE_ONLY = False


class DevelopmentConfig(Config):
    DEBUG = True


class TestingConfig(Config):
    DEBUG = True

    def __init__(self):
        super().__init__()
        self.CONSOLE_ONLY = True
        self.THREADS = min(self.THREADS, 2)


class ProductionConfig(Config):
    DEBUG = False


# Configuration mapping
config = {
    'development': DevelopmentConfig,
    'testing': TestingConfig,
    'production': ProductionConfig,
    'default': DevelopmentConfig
}


def get_config(name: Optional[str] = None) -> Config:
    name = name or os.environ.get('GELSIM_ENV', 'default')
    if name not in config:
        raise ConfigError(f"unknown environment '{name}'", key='GELSIM_ENV')
    settings = config[name]()
    if settings.THREADS < 1:
        raise ConfigError("GELSIM_THREADS must be at least 1", key='GELSIM_THREADS')
    return settings


# Scenario inputs, SI units. None means "derived from other keys".
DEFAULTS: Dict[str, Any] = {
    'preset': None,
    'variant': None,
    'level': 5,
    'dt': 0.01,
    'n_steps': 100,
    'P0': 1.0e4,
    'f0_override': None,
    'snapshot_every': 0,
    'chi': 0.5,
    'N1': 100.0,
    'N2': 1.0,
    'a': None,
    'b': None,
    'c': None,
    'fh_scale': 1.0e5,
    'mu_E': 1.0e9,
    'a1': 1.0,
    'a3': 1.0,
    'alpha': 1.0,
    's': 3.0,
    'q_exp': 1.5,
    'r': 4.0,
    'phi_I': 0.5,
    'eta1': 1.0e8,
    'eta2': None,
    'mu1': None,
    'mu2': None,
    'beta_drag': None,
    'length_scale': 0.01,
}

PRESETS: Dict[str, Dict[str, Any]] = {
    'fig1': {'s': 3.0, 'q_exp': 1.5, 'r': 4.0, 'fh_scale': 1.0e5},
    'fig2': {'s': 1.0, 'q_exp': 1.5, 'r': 1.1, 'fh_scale': 1.0e7, 'variant': 'inviscid-permeable'},
}

# Descriptive names for the presets
PRESET_ALIASES: Dict[str, str] = {
    'stiff': 'fig1',
    'soft-permeable': 'fig2',
}

_INTEGER_KEYS = ('level', 'n_steps', 'snapshot_every')
_TEXT_KEYS = ('preset', 'variant')

ConfigSource = Union[None, str, Path, Mapping[str, Any]]


def _key_line(text: str, key: str) -> Optional[int]:
    marker = f'"{key}"'
    for number, line in enumerate(text.splitlines(), start=1):
        if marker in line:
            return number
    return None


def load_config_file(path: Union[str, Path]) -> Tuple[Dict[str, Any], str]:
    try:
        text = Path(path).read_text(encoding='utf8')
    except OSError as e:
        raise ConfigError(f"cannot read config file '{path}': {e}") from e
    try:
        data = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON in '{path}': {e.msg} at column {e.colno}", line=e.lineno) from e
    if not isinstance(data, dict):
        raise ConfigError(f"config file '{path}' must hold a JSON object")
    return data, text


def _check_keys(data: Mapping[str, Any], text: str = "") -> None:
    for key in data:
        if key not in DEFAULTS:
            raise ConfigError("unknown config key", key=key, line=_key_line(text, key) if text else None)


def _coerce(raw: Dict[str, Any]) -> Dict[str, Any]:
    out = dict(raw)
    for key, value in raw.items():
        if value is None or key in _TEXT_KEYS:
            continue
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}", key=key)
        if key in _INTEGER_KEYS:
            if float(value) != int(value):
                raise ConfigError(f"expected an integer, got {value!r}", key=key)
            out[key] = int(value)
        else:
            out[key] = float(value)
    return out


def resolve(source: ConfigSource = None, overrides: Optional[Mapping[str, Any]] = None,
            preset: Optional[str] = None) -> Dict[str, Any]:
    """Merged dimensional inputs: defaults, then preset, then file keys, then overrides"""
    text = ""
    if source is None:
        data: Dict[str, Any] = {}
    elif isinstance(source, Mapping):
        data = dict(source)
    else:
        data, text = load_config_file(source)
    _check_keys(data, text)
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    _check_keys(overrides)

    name = overrides.get('preset') or data.get('preset') or preset
    merged = dict(DEFAULTS)
    if name is not None:
        name = PRESET_ALIASES.get(name, name)
        if name not in PRESETS:
            choices = sorted(PRESETS) + sorted(PRESET_ALIASES)
            raise ConfigError(f"unknown preset '{name}' (choose from {choices})", key='preset')
        merged.update(PRESETS[name])
        merged['preset'] = name
    merged.update(data)
    merged.update(overrides)
    if name is not None:
        merged['preset'] = name
    return _coerce(merged)


def material_from_config(raw: Mapping[str, Any]) -> Tuple[MaterialParams, Scales]:
    """Dimensional inputs to nondimensional MaterialParams plus the scales used"""
    try:
        scales = Scales.from_dimensional(raw['mu_E'], raw['eta1'], raw['length_scale'])
        eta1 = raw['eta1']
        a = raw['a'] if raw['a'] is not None else 1.0 / raw['N1']
        b = raw['b'] if raw['b'] is not None else 1.0 / raw['N2']
        c = raw['c'] if raw['c'] is not None else raw['chi'] / 2.0
        dimensional = MaterialParams(
            a=a, b=b, c=c, chi=raw['chi'], fh_scale=raw['fh_scale'], mu_E=raw['mu_E'],
            a1=raw['a1'], a3=raw['a3'], alpha=raw['alpha'],
            s=raw['s'], q_exp=raw['q_exp'], r=raw['r'], phi_I=raw['phi_I'],
            eta1=eta1,
            eta2=raw['eta2'] if raw['eta2'] is not None else 0.1 * eta1,
            mu1=raw['mu1'] if raw['mu1'] is not None else eta1,
            mu2=raw['mu2'] if raw['mu2'] is not None else 0.1 * eta1,
            beta_drag=raw['beta_drag'] if raw['beta_drag'] is not None else eta1 / raw['length_scale'] ** 2,
        )
    except (InvalidParameter, ZeroDivisionError) as e:
        raise ConfigError(f"invalid material parameters: {e}") from e
    return dimensional.nondimensional(scales), scales


def parse_config(source: ConfigSource = None, overrides: Optional[Mapping[str, Any]] = None,
                 preset: Optional[str] = None, require_variant: bool = True,
                 krylov_level: int = 7) -> ScenarioConfig:
    """Validated ScenarioConfig from a JSON file (or mapping) plus CLI overrides"""
    raw = resolve(source, overrides, preset)
    params, scales = material_from_config(raw)
    variant = None
    if raw['variant'] is None:
        if require_variant:
            raise ConfigError("a variant is required", key='variant')
    else:
        variant = Variant.parse(raw['variant'])
    f0_override = raw['f0_override']
    scenario = ScenarioConfig(
        variant=variant,
        params=params,
        level=raw['level'],
        dt=raw['dt'],
        n_steps=raw['n_steps'],
        P0=raw['P0'],
        f0_override=f0_override,
        snapshot_every=raw['snapshot_every'],
        scales=scales,
        preset=raw['preset'],
        krylov_level=krylov_level,
        raw=raw,
    )
    logger.debug(f"Resolved scenario: preset={raw['preset']}, variant={raw['variant']}, level={raw['level']}")
    return scenario
