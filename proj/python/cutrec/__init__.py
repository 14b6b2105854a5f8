"""Cross-domain recommendation with a user transformation layer and a
contrastive similarity regularizer. Thin wrapper over the C++ core."""

import json
import os

from . import _core
from ._core import (
    ConfigError,
    OutputExistsError,
    contrastive_loss,
    cosine,
    hr_at_k,
    ndcg_at_k,
    rank_items,
    recall_at_k,
    similar_pairs,
    total_loss,
)

__all__ = [
    "ConfigError",
    "OutputExistsError",
    "contrastive_loss",
    "cosine",
    "generate",
    "hr_at_k",
    "load_config",
    "ndcg_at_k",
    "rank_items",
    "read_checkpoint",
    "recall_at_k",
    "resolve_config",
    "run_experiment",
    "similar_pairs",
    "total_loss",
]


def _config_arg(config):
    """Accepts a dict or a path to a JSON file; returns (json text, base dir)."""
    if isinstance(config, (str, os.PathLike)):
        path = os.fspath(config)
        with open(path, encoding="utf-8") as f:
            return f.read(), os.path.dirname(os.path.abspath(path))
    return json.dumps(config), os.getcwd()


def resolve_config(config):
    """Validated config with every default filled in."""
    text, base = _config_arg(config)
    return json.loads(_core.resolve_config(text, base))


load_config = resolve_config


def run_experiment(config, out_dir, force=False, parallel_seeds=1):
    """Runs every seed and variant; returns the metrics.json content."""
    text, base = _config_arg(config)
    return json.loads(_core.run_experiment(text, base, os.fspath(out_dir), force, parallel_seeds))


def generate(synth):
    """(source, target) lists of (user, item) tokens from a synth config dict."""
    return _core.generate(json.dumps(synth))


def read_checkpoint(path):
    c = _core.read_checkpoint(os.fspath(path))
    c["meta"] = json.loads(c["meta"])
    return c
