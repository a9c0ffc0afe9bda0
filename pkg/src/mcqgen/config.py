"""Run configuration: one YAML (or JSON) file drives every stage.

Precedence is command-line flags > config file > built-in defaults.
Relative paths in the file are resolved against the file's directory.
"""

from __future__ import annotations

import copy
from pathlib import Path
from typing import Any, Optional

import yaml

from .core import FilterStage, PipelineConfig, ShuffleScope
from .errors import ConfigError
from .kg import TrainConfig

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "workers": 1,
    "fail_fast": False,
    "audit_log": None,
    "pipeline": {
        "fillmask_top_k": 20,
        "embedding_top_k": 10,
        "distractor_count": 3,
        "shuffle_seed_scope": "per_item_id",
        "relaxation_policy": ["POS", "NER"],
        "fusion_weights": [0.5, 0.5],
        "keep_incomplete": False,
        "bypass_question_gen": True,
    },
    "qgen": {"backend": "template", "sep_token": "[SEP]"},
    "answer_sentence": {"backend": "template"},
    "fillmask": [],
    "embeddings": [],
    "tagger": {"backend": "lexicon", "path": None},
    "ner": {"backend": "lexicon", "path": None},
    "encoder": {"backend": "hashing", "dim": 64},
    "kg": {"embeddings": None},
    "taxonomy": {"lexicon": "en", "prompt": None, "llm": None, "max_in_flight": 4},
    "train": {"dim": 50, "learning_rate": 0.05, "epochs": 100, "negatives_per_positive": 5,
              "l2_lambda": 1e-3, "batch_size": 1, "seed": None},
}

_PATH_KEYS = {"path", "words", "predictions", "embeddings", "prompt", "lexicon"}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _resolve_paths(node, root: Path):
    if isinstance(node, dict):
        return {k: (str((root / v).resolve()) if k in _PATH_KEYS and isinstance(v, str)
                    and v not in ("en", "fa") else _resolve_paths(v, root))
                for k, v in node.items()}
    if isinstance(node, list):
        return [_resolve_paths(v, root) for v in node]
    return node


def load_config(path: Optional[str] = None, overrides: Optional[dict] = None) -> dict:
    """Defaults, then the file (if any), then ``overrides`` (flag values, None skipped)."""
    cfg = copy.deepcopy(DEFAULTS)
    if path:
        p = Path(path)
        try:
            raw = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"config {path} must be a mapping")
        cfg = _merge(cfg, _resolve_paths(raw, p.parent))
    for key, value in (overrides or {}).items():
        if value is not None:
            cfg[key] = value
    return cfg


def pipeline_config(cfg: dict) -> PipelineConfig:
    p = cfg["pipeline"]
    try:
        scope = ShuffleScope(p["shuffle_seed_scope"])
        return PipelineConfig(
            fillmask_top_k=int(p["fillmask_top_k"]),
            embedding_top_k=int(p["embedding_top_k"]),
            distractor_count=int(p["distractor_count"]),
            shuffle_seed_scope=scope,
            shuffle_seed=int(cfg["seed"]),
            relaxation_policy=tuple(FilterStage(s) for s in p["relaxation_policy"]),
            fusion_weights=tuple(float(w) for w in p["fusion_weights"]),
        )
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"invalid pipeline settings: {exc}") from None


def train_config(cfg: dict) -> TrainConfig:
    t = dict(cfg["train"])
    if t.get("seed") is None:
        t["seed"] = cfg["seed"]
    try:
        return TrainConfig(dim=int(t["dim"]), learning_rate=float(t["learning_rate"]),
                           epochs=int(t["epochs"]), negatives_per_positive=int(t["negatives_per_positive"]),
                           l2_lambda=float(t["l2_lambda"]), batch_size=int(t["batch_size"]),
                           seed=int(t["seed"]))
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"invalid training settings: {exc}") from None
