"""
Experiment configuration for tapstab.

Configs are JSON or YAML documents (YAML is a JSON superset, so one loader
reads both).  Values resolve with priority: CLI flag > env var > config file >
default.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import yaml

from .errors import TapInputError
from .rng import derive_seed

WORKERS_ENV = "TAPSTAB_WORKERS"


def load_config(path: str | Path | None) -> dict:
    """Load a config document. Returns empty dict when no path is given."""
    if path is None:
        return {}
    path = Path(path)
    if not path.exists():
        raise TapInputError(f"config file not found: {path}")
    try:
        with open(path) as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise TapInputError(f"{path}: not valid JSON/YAML: {e}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise TapInputError(f"{path}: config must be a mapping at top level")
    return data


def save_config(data: dict, path: str | Path) -> Path:
    """Write a config document; JSON for .json paths, YAML otherwise."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        if path.suffix == ".json":
            json.dump(data, f, indent=2, sort_keys=True)
        else:
            yaml.safe_dump(data, f, default_flow_style=False, sort_keys=True)
    return path


def resolve_setting(
    cli_value: Any, env_var: Optional[str], config: dict, key: str, default: Any = None
) -> Any:
    """Resolve a setting with priority: CLI flag > env var > config file > default."""
    if cli_value is not None:
        return cli_value
    if env_var:
        env_value = os.environ.get(env_var)
        if env_value:
            return env_value
    if key in config and config[key] is not None:
        return config[key]
    return default


@dataclass
class ExperimentConfig:
    graph: Dict[str, Any] = field(default_factory=lambda: {"kind": "er", "n": 1000})
    influence: Dict[str, Any] = field(default_factory=lambda: {"model": "ic", "ip_max": 1.0})
    stab: Dict[str, Any] = field(default_factory=dict)
    thresholds: List[float] = field(default_factory=list)
    ep_max_sweep: List[float] = field(default_factory=lambda: [0.0])
    output_dir: str = "tapstab-out"
    seed: int = 0
    workers: int = field(default_factory=lambda: os.cpu_count() or 1)
    eval_samples: int = 10_000
    celf_samples: int = 1_000

    @classmethod
    def from_document(cls, doc: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise TapInputError(f"unknown experiment config keys: {sorted(unknown)}")
        cfg = cls(**doc)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path | None) -> "ExperimentConfig":
        return cls.from_document(load_config(path))

    def validate(self) -> "ExperimentConfig":
        if any(float(t) <= 0 for t in self.thresholds or []):
            raise TapInputError("thresholds must be positive")
        if not self.ep_max_sweep:
            raise TapInputError("ep_max_sweep must not be empty")
        if int(self.workers) < 1:
            raise TapInputError(f"workers must be >= 1, got {self.workers}")
        if int(self.eval_samples) < 1 or int(self.celf_samples) < 1:
            raise TapInputError("sample counts must be >= 1")
        return self

    def require_thresholds(self) -> List[float]:
        if not self.thresholds:
            raise TapInputError("no thresholds given (use --threshold or 'thresholds' in the config)")
        return [float(t) for t in self.thresholds]

    # every random stream of an experiment hangs off the master seed
    def stream_seeds(self) -> Dict[str, int]:
        return {
            "master": int(self.seed),
            "graph": derive_seed(self.seed, "graph"),
            "params": int(self.influence.get("param_seed", derive_seed(self.seed, "params"))),
            "worlds": derive_seed(self.seed, "worlds"),
            "ranks": derive_seed(self.seed, "ranks"),
            "eval": derive_seed(self.seed, "eval"),
            "celf": derive_seed(self.seed, "celf"),
        }

    def echo(self) -> Dict[str, Any]:
        doc = asdict(self)
        doc["stream_seeds"] = self.stream_seeds()
        return doc
