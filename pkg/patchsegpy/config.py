"""### Run configuration

`RunConfig` holds every setting a command uses, each with a default. A run
starts from the defaults, applies an optional JSON config file and then the
command line flags that were given explicitly. Every output directory gets a
`config.json` echo of the settings used.
"""
__all__ = [
    'RunConfig',
    'read_config',
    'merge_config',
    'write_config_echo',
    'CONFIG_ECHO',
    ]

from dataclasses import dataclass, asdict, fields, replace
import json
import logging
from pathlib import Path
import warnings
from . import io
from .data import PHANTOM_LAYOUTS
from .inference import BBOX_MODES
from .tools import UsageError

LOGGER = logging.getLogger(__name__)

CONFIG_ECHO = 'config.json'


@dataclass(frozen=True)
class RunConfig:
    """Settings shared by the commands.

    Defaults follow the 33 x 33 x 7 patch network trained with ADADELTA
    (lr 1.0, rho 0.95, epsilon 1e-6) and dropout 0.5.
    """
    omega: int = 33
    slices: int = 7
    reduction: int = 2
    bottleneck_channels: int = 1
    classes: int = 4
    kernels: tuple = (32, 32, 32, 64, 64, 64)
    hidden: tuple = (64, 32)
    dropout: float = 0.5
    se_enabled: bool = True
    batch_size: int = 32
    epochs: int = 20
    patches_per_class: int = 320
    border_fraction: float = 0.5
    border_margin: int = 3
    seed: int = 0
    learning_rate: float = 1.0
    rho: float = 0.95
    epsilon: float = 1e-6
    bbox_mode: str = 'flair_threshold'
    bbox_margin: int = 3
    bbox_k: float = 1.5
    bbox_largest_component: bool = False
    workers: int = 1
    chunk_size: int = 64
    precision: str = 'float32'
    dims: tuple = (48, 48, 48)
    spacing_mm: tuple = (1.0, 1.0, 1.0)
    phantom_layout: str = 'rim'

    def __post_init__(self):
        for name in ('kernels', 'hidden', 'dims', 'spacing_mm'):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        self.validate()

    def validate(self):
        """Raises UsageError for settings no command can run with."""
        if self.omega < 1 or self.omega % 2 == 0 \
                or self.slices < 1 or self.slices % 2 == 0:
            raise UsageError(f'omega and slices must be odd and positive, got '
                             f'{self.omega} and {self.slices}')
        if not 0 <= self.border_fraction <= 1:
            raise UsageError(f'border_fraction must be in [0, 1], got '
                             f'{self.border_fraction}')
        if not 0 <= self.dropout < 1:
            raise UsageError(f'dropout must be in [0, 1), got {self.dropout}')
        if self.bbox_mode not in BBOX_MODES:
            raise UsageError(f'bbox_mode must be one of {BBOX_MODES}, got '
                             f'{self.bbox_mode!r}')
        if self.phantom_layout not in PHANTOM_LAYOUTS:
            raise UsageError(f'phantom_layout must be one of {PHANTOM_LAYOUTS}'
                             f', got {self.phantom_layout!r}')
        if self.precision not in ('float32', 'float64'):
            raise UsageError(f'unknown precision {self.precision!r}')
        for name in ('batch_size', 'workers', 'chunk_size', 'classes',
                     'reduction', 'bottleneck_channels'):
            if getattr(self, name) < 1:
                raise UsageError(f'{name} must be >= 1, got '
                                 f'{getattr(self, name)}')
        for name in ('epochs', 'patches_per_class', 'border_margin',
                     'bbox_margin'):
            if getattr(self, name) < 0:
                raise UsageError(f'{name} must be >= 0, got '
                                 f'{getattr(self, name)}')

    def to_dict(self):
        settings = asdict(self)
        for name in ('kernels', 'hidden', 'dims', 'spacing_mm'):
            settings[name] = list(settings[name])
        return settings


def _no_duplicates(pairs):
    settings = {}
    for key, value in pairs:
        if key in settings:
            warnings.warn(f'config key {key!r} given twice, using the last '
                          'value', RuntimeWarning)
        settings[key] = value
    return settings


def read_config(path, base=None):
    """Applies the settings of a JSON config file.

    Args:
        path (str/pathlib.Path): JSON object of RunConfig field -> value.
        base (RunConfig): (default: defaults) Settings to start from.

    Returns:
        (RunConfig): The combined settings.

    Raises:
        UsageError: Unreadable file, unknown keys or invalid values.

    Examples:
        ```python
        config = read_config('experiment.json')
        config.epochs  # value from the file, 20 if it has none
        ```
    """
    try:
        with open(path) as config_file:
            settings = json.load(config_file, object_pairs_hook=_no_duplicates)
    except OSError as error:
        raise UsageError(f'{path}: cannot read config ({error.strerror})')
    except ValueError as error:
        raise UsageError(f'{path}: config is not valid JSON ({error})')
    if not isinstance(settings, dict):
        raise UsageError(f'{path}: config must be a JSON object')
    if 'command' in settings and isinstance(settings.get('config'), dict):
        # A config echo
        settings = settings['config']
    LOGGER.info('Read config %s', path)
    return merge_config(RunConfig() if base is None else base, settings)


def merge_config(config, overrides):
    """Returns `config` with the overrides that are not None applied.

    Raises:
        UsageError: For keys that are not RunConfig fields.
    """
    known = {field.name for field in fields(RunConfig)}
    unknown = sorted(set(overrides) - known)
    if unknown:
        raise UsageError(f'unknown config keys {unknown}')
    given = {key: value for key, value in overrides.items()
             if value is not None}
    try:
        return replace(config, **given)
    except TypeError as error:
        raise UsageError(f'invalid config value ({error})')


def _plain(value):
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, (list, tuple)):
        return [_plain(item) for item in value]
    return value


def write_config_echo(config, directory, command, **arguments):
    """Writes `config.json` so the command can be re-run from it.

    Args:
        config (RunConfig): Settings used.
        directory (str/pathlib.Path): Output directory.
        command (str): Subcommand name.
        **arguments: Paths and other command arguments.
    """
    path = Path(directory) / CONFIG_ECHO
    io.write_json(path, {
        'command': command,
        'arguments': {key: _plain(value) for key, value in arguments.items()},
        'config': config.to_dict(),
        })
    return path
