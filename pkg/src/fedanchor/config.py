"""Experiment configuration: flat key=value files, defaults, validation.

Every run is fully described by one small text file (plus CLI overrides).
Unknown or duplicate keys are rejected with the offending key and line.
An empty file yields the documented defaults.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, replace
from typing import Iterable

from .errors import ConfigError
from .model import NetworkShape

MODES = ("full", "no_erpa", "no_apud", "neither")

# accepted spellings for each ablation mode, lowercase, spaces collapsed
_MODE_ALIASES = {
    "full": "full",
    "no_erpa": "no_erpa",
    "w/o erpa": "no_erpa",
    "no_apud": "no_apud",
    "w/o apud": "no_apud",
    "neither": "neither",
    "w/o apud & erpa": "neither",
    "w/o erpa & apud": "neither",
}


def canonical_mode(raw: str) -> str:
    text = " ".join(str(raw).strip().lower().split())
    try:
        return _MODE_ALIASES[text]
    except KeyError:
        raise ConfigError(
            f"unknown mode {raw!r}; expected one of {', '.join(MODES)}", key="mode"
        ) from None


def mode_uses_anchors(mode: str) -> bool:
    """Whether this mode runs the prototype/anchor channel."""
    return mode in ("full", "no_apud")


def mode_forces_dense(mode: str) -> bool:
    """Whether this mode uploads every adapter coordinate."""
    return mode in ("no_apud", "neither")


@dataclass
class ExperimentConfig:
    """All knobs of one experiment. Field order is the documented key order."""

    input_dim: int = 16
    hidden_dim: int = 32
    embed_dim: int = 16
    num_classes: int = 10
    num_clients: int = 10
    client_fraction: float = 1.0
    rounds: int = 50
    local_epochs: int = 1
    batch_size: int = 64
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    lam: float = 1.0  # config key "lambda"
    k_budget: str = "0.1"
    alpha: float = 0.5
    train_per_class: int = 600
    test_per_class: int = 100
    center_radius: float = 4.0
    noise_std: float = 0.5
    public_coverage: float = 0.5
    public_classes: str = ""  # explicit comma list; overrides public_coverage
    public_per_class: int = 16
    mode: str = "full"
    seed: int = 0

    def network_shape(self) -> NetworkShape:
        return NetworkShape(self.input_dim, self.hidden_dim, self.embed_dim, self.num_classes)

    @property
    def adapter_size(self) -> int:
        return self.network_shape().adapter_size

    def covered_classes(self) -> frozenset[int]:
        """Classes present in the public dataset."""
        if self.public_classes.strip():
            return frozenset(int(tok) for tok in self.public_classes.split(","))
        count = min(self.num_classes, math.ceil(self.public_coverage * self.num_classes))
        return frozenset(range(count))

    def resolve_k(self, d: int) -> list[int]:
        """Per-client top-k budgets for adapter size d."""
        raw = self.k_budget.strip().lower()
        if raw == "all":
            return [d] * self.num_clients
        if "," in raw:
            budgets = [_parse_k_token(tok, d) for tok in raw.split(",")]
            if len(budgets) != self.num_clients:
                raise ConfigError(
                    f"k_budget lists {len(budgets)} entries for {self.num_clients} clients",
                    key="k_budget",
                )
            return budgets
        return [_parse_k_token(raw, d)] * self.num_clients

    def validate(self) -> None:
        def require(cond: bool, message: str, key: str) -> None:
            if not cond:
                raise ConfigError(message, key=key)

        for key in ("input_dim", "hidden_dim", "embed_dim", "num_classes", "num_clients",
                    "rounds", "batch_size", "train_per_class", "test_per_class",
                    "public_per_class"):
            require(getattr(self, key) >= 1, f"{key} must be >= 1", key)
        require(self.local_epochs >= 0, "local_epochs must be >= 0", "local_epochs")
        require(0.0 < self.client_fraction <= 1.0,
                f"client_fraction must be in (0, 1], got {self.client_fraction}",
                "client_fraction")
        require(self.lr > 0.0, "lr must be > 0", "lr")
        require(0.0 <= self.momentum < 1.0, "momentum must be in [0, 1)", "momentum")
        require(self.weight_decay >= 0.0, "weight_decay must be >= 0", "weight_decay")
        require(self.lam >= 0.0, "lambda must be >= 0", "lambda")
        require(self.alpha > 0.0, "alpha must be > 0", "alpha")
        require(self.center_radius > 0.0, "center_radius must be > 0", "center_radius")
        require(self.noise_std >= 0.0, "noise_std must be >= 0", "noise_std")
        require(0.0 <= self.public_coverage <= 1.0,
                "public_coverage must be in [0, 1]", "public_coverage")
        require(self.seed >= 0, "seed must be >= 0", "seed")
        require(self.mode in MODES, f"mode must be one of {MODES}", "mode")
        covered = self.covered_classes()
        require(all(0 <= c < self.num_classes for c in covered),
                f"public_classes {sorted(covered)} outside [0, {self.num_classes})",
                "public_classes")
        self.resolve_k(self.adapter_size)  # surfaces bad budgets with the real d

    def with_overrides(
        self,
        seed: int | None = None,
        mode: str | None = None,
        rounds: int | None = None,
    ) -> "ExperimentConfig":
        out = replace(self)
        if seed is not None:
            out.seed = seed
        if mode is not None:
            out.mode = canonical_mode(mode)
        if rounds is not None:
            out.rounds = rounds
        out.validate()
        return out

    def as_dict(self) -> dict[str, object]:
        """Canonical key -> value map (the trace header's config block)."""
        out: dict[str, object] = {}
        for key, field_name in _KEY_TO_FIELD.items():
            out[key] = getattr(self, field_name)
        return out


def _parse_k_token(tok: str, d: int) -> int:
    tok = tok.strip()
    try:
        if "." in tok or "e" in tok or "E" in tok:
            frac = float(tok)
            if not 0.0 < frac <= 1.0:
                raise ConfigError(
                    f"fractional k_budget must be in (0, 1], got {tok}", key="k_budget"
                )
            return math.ceil(frac * d)
        k = int(tok)
    except ValueError:
        raise ConfigError(f"k_budget entry {tok!r} is not a number", key="k_budget") from None
    if k < 0:
        raise ConfigError(f"k_budget must be >= 0, got {k}", key="k_budget")
    if k > d:
        raise ConfigError(f"k_budget {k} exceeds adapter size {d}", key="k_budget")
    return k


def _conv_int(text: str) -> int:
    return int(text)


def _conv_float(text: str) -> float:
    return float(text)


def _conv_str(text: str) -> str:
    return text


_KEY_TO_FIELD = {
    "input_dim": "input_dim",
    "hidden_dim": "hidden_dim",
    "embed_dim": "embed_dim",
    "num_classes": "num_classes",
    "num_clients": "num_clients",
    "client_fraction": "client_fraction",
    "rounds": "rounds",
    "local_epochs": "local_epochs",
    "batch_size": "batch_size",
    "lr": "lr",
    "momentum": "momentum",
    "weight_decay": "weight_decay",
    "lambda": "lam",
    "k_budget": "k_budget",
    "alpha": "alpha",
    "train_per_class": "train_per_class",
    "test_per_class": "test_per_class",
    "center_radius": "center_radius",
    "noise_std": "noise_std",
    "public_coverage": "public_coverage",
    "public_classes": "public_classes",
    "public_per_class": "public_per_class",
    "mode": "mode",
    "seed": "seed",
}

_CONVERTERS = {
    "input_dim": _conv_int,
    "hidden_dim": _conv_int,
    "embed_dim": _conv_int,
    "num_classes": _conv_int,
    "num_clients": _conv_int,
    "client_fraction": _conv_float,
    "rounds": _conv_int,
    "local_epochs": _conv_int,
    "batch_size": _conv_int,
    "lr": _conv_float,
    "momentum": _conv_float,
    "weight_decay": _conv_float,
    "lambda": _conv_float,
    "k_budget": _conv_str,
    "alpha": _conv_float,
    "train_per_class": _conv_int,
    "test_per_class": _conv_int,
    "center_radius": _conv_float,
    "noise_std": _conv_float,
    "public_coverage": _conv_float,
    "public_classes": _conv_str,
    "public_per_class": _conv_int,
    "mode": canonical_mode,
    "seed": _conv_int,
}


def parse_config_lines(lines: Iterable[str]) -> ExperimentConfig:
    cfg = ExperimentConfig()
    seen: set[str] = set()
    for lineno, raw in enumerate(lines, start=1):
        text = raw.strip()
        if not text or text.startswith("#"):
            continue
        if "=" not in text:
            raise ConfigError(f"expected key=value, got {text!r}", line=lineno)
        key, _, value = text.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _KEY_TO_FIELD:
            raise ConfigError(f"unknown key {key!r}", key=key, line=lineno)
        if key in seen:
            raise ConfigError(f"duplicate key {key!r}", key=key, line=lineno)
        seen.add(key)
        try:
            parsed = _CONVERTERS[key](value)
        except ConfigError:
            raise
        except ValueError:
            raise ConfigError(
                f"could not parse value {value!r}", key=key, line=lineno
            ) from None
        setattr(cfg, _KEY_TO_FIELD[key], parsed)
    if "public_classes" in seen and "public_coverage" in seen:
        raise ConfigError(
            "public_classes and public_coverage are mutually exclusive",
            key="public_classes",
        )
    cfg.validate()
    return cfg


def parse_config(path: str) -> ExperimentConfig:
    """Parse a key=value config file, applying defaults for absent keys."""
    if not os.path.exists(path):
        raise ConfigError(f"no such config file: {path}")
    with open(path) as fh:
        return parse_config_lines(fh)
