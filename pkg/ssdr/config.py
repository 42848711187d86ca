"""Experiment configuration"""
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import yaml

from ssdr.model import DataError, HyperParams, SsdrError

logger = logging.getLogger(__name__)

CONFIG_KEYS = (
    'data', 'mode', 'view_split', 'label_fraction', 'trials', 'seed', 'alpha', 'beta',
    'lambda', 'gamma', 'xi', 'z', 'neighborhood', 'inference', 'max_iters', 'tol',
    'cp_grid', 'embed_dim', 'out', 'degree_scope',
)
DATA_KEYS = ('path', 'label_columns', 'delimiter', 'normalize', 'standardize')
GRID_KEYS = ('alpha', 'beta', 'lambda')


class ConfigError(SsdrError):
    """Malformed or inconsistent experiment configuration"""


@dataclass
class DataSource:
    """Where the table comes from. Several paths are read as one view per file."""
    path: List[str]
    label_columns: List[int] = field(default_factory=lambda: [-1])
    delimiter: Optional[str] = ","
    normalize: bool = False
    standardize: bool = False

    @classmethod
    def from_value(cls, value: Any) -> 'DataSource':
        if isinstance(value, str):
            return cls(path=[value])
        if not isinstance(value, dict):
            raise ConfigError(f"data must be a path or a mapping, got {type(value).__name__}")
        unknown = sorted(set(value) - set(DATA_KEYS))
        if unknown:
            raise ConfigError(f"unknown data keys: {', '.join(unknown)}")
        if 'path' not in value:
            raise ConfigError("data.path is required")
        paths = value['path'] if isinstance(value['path'], list) else [value['path']]
        columns = value.get('label_columns', [-1])
        if isinstance(columns, int):
            columns = [columns]
        return cls(
            path=[str(p) for p in paths],
            label_columns=[int(c) for c in columns],
            delimiter=value.get('delimiter', ","),
            normalize=bool(value.get('normalize', False)),
            standardize=bool(value.get('standardize', False)),
        )

    def resolved(self, base_dir: Path) -> List[Path]:
        return [p if p.is_absolute() else base_dir / p for p in map(Path, self.path)]


def _parse_gamma(value) -> float:
    if isinstance(value, str):
        if value.strip().lower() in ('inf', 'infinity', '.inf'):
            return math.inf
        raise ConfigError(f"gamma must be a number or 'inf', got {value!r}")
    return float(value)


def _weights(value, name: str) -> Optional[List[float]]:
    if value is None:
        return None
    if isinstance(value, (int, float)):
        return [float(value)]
    try:
        return [float(v) for v in value]
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{name} must be a number or a list of numbers: {e}") from e


@dataclass
class ExperimentConfig:
    """One experiment: data source, protocol and learner settings"""
    data: DataSource
    mode: str = "multiview"
    view_split: Union[str, List[str]] = "halves"
    label_fraction: float = 0.1
    trials: int = 1
    seed: int = 0
    alpha: Optional[List[float]] = None
    beta: Optional[List[float]] = None
    lam: float = 0.1
    gamma: float = math.inf
    xi: float = 1e-4
    z: int = 2
    neighborhood: Union[str, int] = "full"
    inference: str = "batch"
    max_iters: int = 20
    tol: float = 1e-6
    degree_scope: str = "labeled"
    cp_grid: List[Dict[str, Any]] = field(default_factory=list)
    embed_dim: Optional[int] = None
    out: str = "results"
    base_dir: Path = field(default=Path('.'), repr=False, compare=False)

    def __post_init__(self):
        if self.mode not in ('multiview', 'multitask'):
            raise ConfigError(f"mode must be 'multiview' or 'multitask', got {self.mode!r}")
        if not 0 < self.label_fraction < 1:
            raise ConfigError(f"label_fraction must lie in (0, 1), got {self.label_fraction}")
        if self.trials < 1:
            raise ConfigError(f"trials must be at least 1, got {self.trials}")
        if self.embed_dim is not None and self.embed_dim < 1:
            raise ConfigError(f"embed_dim must be positive, got {self.embed_dim}")
        if self.mode == 'multiview' and len(self.data.label_columns) != 1:
            raise ConfigError("multiview experiments take exactly one label column")
        if isinstance(self.view_split, str) and self.view_split not in ('halves', 'joined'):
            raise ConfigError(f"view_split must be 'halves', 'joined' or a list of ranges, got {self.view_split!r}")
        for point in self.cp_grid:
            if not isinstance(point, dict) or not point:
                raise ConfigError(f"cp_grid entries must be non-empty mappings, got {point!r}")
            unknown = sorted(set(point) - set(GRID_KEYS))
            if unknown:
                raise ConfigError(f"unknown cp_grid keys: {', '.join(unknown)}")
        # Surface learner-setting errors at load time
        try:
            self.hyper_params()
        except DataError as e:
            raise ConfigError(f"Invalid learner settings: {e}") from e

    @classmethod
    def from_dict(cls, data: Dict[str, Any], base_dir: Union[str, Path] = '.') -> 'ExperimentConfig':
        if not isinstance(data, dict):
            raise ConfigError("config must be a mapping at the top level")
        unknown = sorted(set(data) - set(CONFIG_KEYS))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        if 'data' not in data:
            raise ConfigError("config key 'data' is required")
        try:
            kwargs = dict(
                data=DataSource.from_value(data['data']),
                mode=data.get('mode', 'multiview'),
                view_split=data.get('view_split', 'halves'),
                label_fraction=float(data.get('label_fraction', 0.1)),
                trials=int(data.get('trials', 1)),
                seed=int(data.get('seed', 0)),
                alpha=_weights(data.get('alpha'), 'alpha'),
                beta=_weights(data.get('beta'), 'beta'),
                lam=float(data.get('lambda', 0.1)),
                gamma=_parse_gamma(data.get('gamma', 'inf')),
                xi=float(data.get('xi', 1e-4)),
                z=int(data.get('z', 2)),
                neighborhood=data.get('neighborhood', 'full'),
                inference=data.get('inference', 'batch'),
                max_iters=int(data.get('max_iters', 20)),
                tol=float(data.get('tol', 1e-6)),
                degree_scope=data.get('degree_scope', 'labeled'),
                cp_grid=[dict(point) if isinstance(point, dict) else point
                         for point in data.get('cp_grid') or []],
                embed_dim=None if data.get('embed_dim') is None else int(data['embed_dim']),
                out=str(data.get('out', 'results')),
                base_dir=Path(base_dir),
            )
        except (TypeError, ValueError) as e:
            raise ConfigError(f"Invalid config value: {e}") from e
        return cls(**kwargs)

    @classmethod
    def load(cls, path: Union[str, Path]) -> 'ExperimentConfig':
        """Load a YAML (or JSON) experiment file; relative data paths resolve against its directory"""
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            with open(path, 'r') as f:
                data = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigError(f"Failed to parse config {path}: {e}") from e
        logger.debug("Loaded config %s", path)
        return cls.from_dict(data or {}, base_dir=path.parent)

    def to_dict(self) -> Dict[str, Any]:
        source = asdict(self.data)
        return {
            'data': source,
            'mode': self.mode,
            'view_split': self.view_split,
            'label_fraction': self.label_fraction,
            'trials': self.trials,
            'seed': self.seed,
            'alpha': self.alpha,
            'beta': self.beta,
            'lambda': self.lam,
            'gamma': 'inf' if math.isinf(self.gamma) else self.gamma,
            'xi': self.xi,
            'z': self.z,
            'neighborhood': self.neighborhood,
            'inference': self.inference,
            'max_iters': self.max_iters,
            'tol': self.tol,
            'degree_scope': self.degree_scope,
            'cp_grid': self.cp_grid,
            'embed_dim': self.embed_dim,
            'out': self.out,
        }

    def save(self, path: Union[str, Path]) -> None:
        """Write the configuration as YAML"""
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, 'w') as f:
                yaml.safe_dump(self.to_dict(), f, sort_keys=False)
        except OSError as e:
            raise ConfigError(f"Failed to save config: {e}") from e

    def data_paths(self) -> List[Path]:
        return self.data.resolved(self.base_dir)

    def output_dir(self) -> Path:
        out = Path(self.out)
        return out if out.is_absolute() else self.base_dir / out

    def hyper_params(self, n_views: Optional[int] = None, n_tasks: Optional[int] = None,
                     workers: int = 1) -> HyperParams:
        """Learner settings; missing alpha/beta default to 1 for every view/task"""
        alphas = self.alpha if self.alpha is not None else [1.0] * (n_views or 1)
        betas = self.beta if self.beta is not None else [1.0] * (n_tasks or 1)
        return HyperParams(
            alphas=tuple(alphas),
            betas=tuple(betas),
            lam=self.lam,
            gamma=self.gamma,
            xi=self.xi,
            z=self.z,
            neighborhood=self.neighborhood,
            mode=self.inference,
            max_iters=self.max_iters,
            tol=self.tol,
            degree_scope=self.degree_scope,
            workers=workers,
        )
