"""
YAML parser for run and synthetic-corpus configurations.
"""

import logging
from dataclasses import fields, replace
from pathlib import Path
from typing import Any, Iterable

import yaml

from .errors import ConfigError
from .models import AuxMode, CoreOrder, RuleSpec, RunConfig, SynthConfig

logger = logging.getLogger(__name__)

_CHOICES = {
    "gcn_aggregation": ("mean", "sum"),
    "score_aggregation": ("max", "logsumexp"),
    "mixture_space": ("probability", "logit"),
    "optimizer": ("adam", "sgd"),
}

_POSITIVE = (
    "predicate_dim", "entity_dim", "time_dim", "lstm_hidden", "lstm_layers", "mlp_hidden",
    "max_steps", "history_window", "beam_size", "valid_beam_size", "batch_size", "eval_every",
)

_NON_NEGATIVE = ("gcn_layers", "action_cap", "max_time_gap", "epochs", "threads", "max_grad_norm",
                 "entropy_coef")

_RULE_KEYS = {"body", "head", "gap", "confidence", "core_order", "aux_mode"}


def load_yaml_file(path: str | Path) -> dict:
    """Load a single YAML file; an empty file is an empty mapping."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a mapping, got {type(data).__name__}")
    return data


def _coerce(key: str, value: Any, default: Any) -> Any:
    """Check a value against the type of the key's default."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be true or false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} must be an integer, got {value!r}")
        return value
    if isinstance(default, float):
        # YAML 1.1 reads exponents without a dot (1e-3) as strings
        if isinstance(value, str):
            try:
                return float(value)
            except ValueError:
                raise ConfigError(f"{key} must be a number, got {value!r}") from None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{key} must be a string, got {value!r}")
        return value
    return value


def parse_override(text: str) -> tuple[str, Any]:
    """Split ``key=value``; the value is read as YAML so numbers and booleans keep their type."""
    key, sep, raw = text.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"override {text!r} is not of the form key=value")
    try:
        value = yaml.safe_load(raw) if raw.strip() else ""
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse value of override {text!r}: {exc}") from exc
    return key.strip(), value


class ConfigParser:
    """Builds validated configs from YAML mappings."""

    def parse_run_config(self, data: dict | None, base: RunConfig | None = None) -> RunConfig:
        """Merge ``data`` over ``base`` (defaults when omitted); unknown keys are rejected."""
        base = base or RunConfig()
        data = dict(data or {})
        known = {f.name: getattr(base, f.name) for f in fields(RunConfig)}
        unknown = sorted(set(data) - set(known))
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        values = {key: _coerce(key, value, known[key]) for key, value in data.items()}
        config = replace(base, **values)
        self.validate_run_config(config)
        return config

    def validate_run_config(self, config: RunConfig) -> None:
        for key in _POSITIVE:
            if getattr(config, key) <= 0:
                raise ConfigError(f"{key} must be positive, got {getattr(config, key)}")
        for key in _NON_NEGATIVE:
            if getattr(config, key) < 0:
                raise ConfigError(f"{key} must not be negative, got {getattr(config, key)}")
        for key, choices in _CHOICES.items():
            if getattr(config, key) not in choices:
                raise ConfigError(f"{key} must be one of {', '.join(choices)}, got {getattr(config, key)!r}")
        if not 0.0 < config.mix_weight < 1.0:
            raise ConfigError(f"mix_weight must lie strictly inside (0, 1), got {config.mix_weight}")
        if config.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {config.learning_rate}")
        if config.dirichlet_alpha <= 0:
            raise ConfigError(f"dirichlet_alpha must be positive, got {config.dirichlet_alpha}")
        if not config.active_branches:
            raise ConfigError("no_pp, no_cp and no_fp together drop every policy branch")

    def load_run_config(self, path: str | Path | None, overrides: Iterable[str] = (),
                        **flags: Any) -> RunConfig:
        """Defaults, then the YAML file, then ``key=value`` overrides, then explicit flags."""
        data = load_yaml_file(path) if path else {}
        for text in overrides:
            key, value = parse_override(text)
            data[key] = value
        data.update({key: value for key, value in flags.items() if value is not None})
        config = self.parse_run_config(data)
        logger.debug("resolved run config: %s", config.to_dict())
        return config

    def _parse_rule(self, rule_data: dict) -> RuleSpec:
        if not isinstance(rule_data, dict):
            raise ConfigError(f"a rule must be a mapping, got {rule_data!r}")
        unknown = sorted(set(rule_data) - _RULE_KEYS)
        if unknown:
            raise ConfigError(f"unknown rule key(s): {', '.join(unknown)}")
        if "body" not in rule_data or "head" not in rule_data:
            raise ConfigError("a rule needs a body and a head predicate")
        try:
            core_order = CoreOrder(rule_data.get("core_order", "same"))
            aux_mode = AuxMode(rule_data.get("aux_mode", "noise"))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return RuleSpec(
            body=str(rule_data["body"]),
            head=str(rule_data["head"]),
            gap=_coerce("gap", rule_data.get("gap", 1), 1),
            confidence=_coerce("confidence", rule_data.get("confidence", 1.0), 1.0),
            core_order=core_order,
            aux_mode=aux_mode,
        )

    def parse_synth_config(self, data: dict | None) -> SynthConfig:
        data = dict(data or {})
        defaults = SynthConfig()
        known = {f.name for f in fields(SynthConfig)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown synth config key(s): {', '.join(unknown)}")
        rules = [self._parse_rule(r) for r in data.pop("rules", []) or []]
        values = {key: _coerce(key, value, getattr(defaults, key)) for key, value in data.items()}
        config = replace(defaults, rules=rules, **values)
        self.validate_synth_config(config)
        return config

    def validate_synth_config(self, config: SynthConfig) -> None:
        for key in ("num_entities", "num_timestamps", "facts_per_snapshot"):
            if getattr(config, key) <= 0:
                raise ConfigError(f"{key} must be positive, got {getattr(config, key)}")
        for key in ("num_noise_predicates", "max_aux_pairs", "decoys_per_body"):
            if getattr(config, key) < 0:
                raise ConfigError(f"{key} must not be negative, got {getattr(config, key)}")
        if config.num_entities < 2:
            raise ConfigError("num_entities must be at least 2")
        needs_aux = config.max_aux_pairs > 0 or any(r.aux_mode is AuxMode.SIGNAL for r in config.rules)
        if config.num_roles < (3 if needs_aux else 2):
            raise ConfigError(f"num_roles={config.num_roles} leaves no role for auxiliary pairs")
        for key in ("test_fraction", "valid_fraction"):
            if not 0.0 <= getattr(config, key) < 1.0:
                raise ConfigError(f"{key} must lie in [0, 1), got {getattr(config, key)}")
        if config.test_fraction + config.valid_fraction >= 1.0:
            raise ConfigError("test_fraction + valid_fraction leaves no training timestamps")
        if not config.rules and config.num_noise_predicates == 0:
            raise ConfigError("a corpus needs at least one noise predicate or one rule")
        noise = {f"noise_{i}" for i in range(config.num_noise_predicates)}
        for rule in config.rules:
            if rule.gap < 1:
                raise ConfigError(f"rule {rule.body}->{rule.head}: gap must be at least 1")
            if not 0.0 < rule.confidence <= 1.0:
                raise ConfigError(f"rule {rule.body}->{rule.head}: confidence must lie in (0, 1]")
            if rule.body == rule.head:
                raise ConfigError(f"rule {rule.body}->{rule.head}: body and head must differ")
            if rule.body in noise or rule.head in noise:
                raise ConfigError(f"rule {rule.body}->{rule.head} reuses a noise predicate name")

    def load_synth_config(self, path: str | Path, seed: int | None = None) -> SynthConfig:
        data = load_yaml_file(path)
        if seed is not None:
            data["seed"] = seed
        return self.parse_synth_config(data)
