"""Rollout orchestration, training-sample forge and data suite (native core)."""

import json
import os
from pathlib import Path

_lexicons = Path(__file__).with_name("lexicons")
if _lexicons.is_dir():
    os.environ.setdefault("ROLLFORGE_LEXICON_DIR", str(_lexicons))

from . import _rollforge  # noqa: E402
from ._rollforge import ConfigError, ValidationError, apportion, grpo_advantage, luhn_valid, reverse_kl  # noqa: E402

__all__ = [
    "Buffer",
    "ConfigError",
    "ValidationError",
    "apportion",
    "audit",
    "build_group_samples",
    "default_run_config",
    "grpo_advantage",
    "luhn_valid",
    "opd_loss",
    "pack",
    "paint_mask",
    "reverse_kl",
    "run",
    "unpack",
]


def paint_mask(trajectory: dict) -> dict:
    return json.loads(_rollforge.paint_mask(json.dumps(trajectory)))


def build_group_samples(group: dict) -> list:
    return json.loads(_rollforge.build_group_samples(json.dumps(group)))


def opd_loss(samples: list, kl_weight: float = 0.0) -> dict:
    return json.loads(_rollforge.opd_loss(json.dumps(samples), kl_weight))


def pack(samples: list, max_len: int) -> list:
    return json.loads(_rollforge.pack(json.dumps(samples), max_len))


def unpack(packs: list) -> list:
    return json.loads(_rollforge.unpack(json.dumps(packs)))


def audit(dataset, config=None) -> dict:
    """Safety audit of a JSONL dataset; `config` is an optional audit YAML path."""
    return json.loads(_rollforge.audit(str(dataset), None if config is None else str(config)))


def default_run_config() -> str:
    return _rollforge.default_run_config()


def run(config_yaml: str) -> dict:
    """Runs one orchestration job in-process; returns {dir, summary, windows}."""
    return json.loads(_rollforge.run(config_yaml))


class Buffer:
    """In-process sample buffer with group completeness and staleness guards."""

    def __init__(self, group_size: int, off_by_n: int, global_batch_size: int):
        self._impl = _rollforge.Buffer(group_size, off_by_n, global_batch_size)

    def submit(self, group: dict):
        admitted, reason, missing = self._impl.submit(json.dumps(group))
        return {"admitted": admitted, "reason": reason, "missing": missing}

    def dequeue(self, current: int, num_groups: int, timeout_ms: int = 0) -> dict:
        return json.loads(self._impl.dequeue(current, num_groups, timeout_ms))

    def announce_version(self, current: int) -> int:
        return self._impl.announce_version(current)

    def stats(self) -> dict:
        return json.loads(self._impl.stats())

    def close(self) -> None:
        self._impl.close()
