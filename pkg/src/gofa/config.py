"""Run configuration: one structured JSON file plus command-line overrides.

Unknown keys are rejected so typos fail loudly; the effective config is
echoed into every output directory together with seed, version and a
content-derived build id.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

from . import __version__
from .compressor import ModelConfig
from .corpus import CorpusConfig
from .training import TrainConfig, train_config_dict


class ConfigError(ValueError):
    pass


def default_config() -> dict:
    return {
        "seed": 0,
        "model": ModelConfig().to_dict(),
        "corpus": CorpusConfig().to_dict(),
        "train": train_config_dict(TrainConfig()),
        "pretrain": {"steps": 200, "batch_size": 16, "text_low": 2, "text_high": 8, "alphabet": "ab"},
        "eval": {"kind": "auto", "batch_size": 8, "max_new_tokens": 96, "delta_profile_n": 100},
        "gen": {"test_fraction": 0.2},
    }


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = dict(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key: {where}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{where} must be an object")
            out[key] = _merge(base[key], value, where)
        else:
            out[key] = value
    return out


def load_config(path: str | None, overrides: list[str] | None = None) -> dict:
    cfg = default_config()
    if path is not None:
        try:
            user = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        cfg = _merge(cfg, user)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key.path=value")
        key_path, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node: dict = cfg
        parts = key_path.split(".")
        for part in parts[:-1]:
            if part not in node or not isinstance(node[part], dict):
                raise ConfigError(f"unknown config key: {key_path}")
            node = node[part]
        if parts[-1] not in node:
            raise ConfigError(f"unknown config key: {key_path}")
        node[parts[-1]] = value
    return cfg


def build_id(cfg: dict) -> str:
    blob = json.dumps({"config": cfg, "version": __version__}, sort_keys=True).encode("utf-8")
    return hashlib.sha1(blob).hexdigest()[:12]


def write_run_meta(out_dir: Path, cfg: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    meta = {
        "config": cfg,
        "seed": cfg.get("seed", 0),
        "version": __version__,
        "build_id": build_id(cfg),
    }
    (out_dir / "run_meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True), encoding="utf-8")
