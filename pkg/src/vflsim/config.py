"""Experiment configuration: schema, YAML loading, dotted-path overrides.

A config is a tree of dataclass sections. Every field has a default, so an
empty file is a valid config. Unknown keys are rejected with the nearest
valid key suggested, and values are checked against the field's type before
any work starts. ``dump`` produces the fully resolved tree; ``config_hash``
is the SHA-256 of its canonical JSON form.
"""

from __future__ import annotations

import dataclasses
import difflib
import hashlib
import json
import os
import types
import typing
from dataclasses import dataclass, field
from typing import Any, Union

import yaml

from .attacks import AttackConfig
from .data import SyntheticSpec
from .defenses import DefenseConfig
from .errors import ConfigError, VFLError

ENV_OUTPUT_ROOT = "VFLSIM_OUTPUT_ROOT"
ENV_SEED = "VFLSIM_SEED"


@dataclass
class DatasetConfig:
    """Where the samples come from.

    ``source`` is ``synthetic`` (the generator knobs below) or ``tabular``
    (``path``, ``label_column``, ``boundaries``). ``seed: null`` draws the
    synthetic dataset and the tabular split from each run's seed.
    """

    source: str = "synthetic"
    n: int = 4000
    n_classes: int = 10
    dims: list[int] = field(default_factory=lambda: [8, 8])
    informativeness: list[float] = field(default_factory=lambda: [1.0, 1.0])
    class_separation: float = 8.0
    noise_std: float = 1.0
    coarse_parties: list[int] = field(default_factory=lambda: [2])
    confound: float = 3.0
    confound_dims: int = 8
    confound_visibility: float = 6.0
    synergy: float = 0.0
    synergy_levels: int = 2
    synergy_dims: int = 2
    nuisance_dims: int = 0
    test_fraction: float = 0.2
    seed: int | None = None
    path: str | None = None
    label_column: str = "label"
    boundaries: list[int] = field(default_factory=list)

    def synthetic_spec(self, run_seed: int) -> SyntheticSpec:
        return SyntheticSpec(
            n=self.n, n_classes=self.n_classes, dims=tuple(self.dims),
            informativeness=tuple(self.informativeness), class_separation=self.class_separation,
            noise_std=self.noise_std, synergy=self.synergy, synergy_levels=self.synergy_levels,
            synergy_dims=self.synergy_dims, nuisance_dims=self.nuisance_dims,
            coarse_parties=tuple(self.coarse_parties), confound=self.confound,
            confound_dims=self.confound_dims, confound_visibility=self.confound_visibility,
            test_fraction=self.test_fraction, seed=run_seed if self.seed is None else self.seed)


@dataclass
class ModelConfig:
    """Per-party extractor ``[d_k, extractor_hidden, rep_dim]`` and the head
    ``[K * rep_dim, head_hidden, C]``."""

    extractor_hidden: int = 32
    rep_dim: int = 16
    rep_activation: str = "relu"
    head_hidden: int = 64


@dataclass
class TrainConfig:
    """``dropout_p`` is one probability for every passive party or a list
    with one entry per passive party."""

    epochs: int = 60
    batch_size: int = 32
    lr: float = 0.01
    dropout_p: Union[float, list[float]] = 0.0
    multi_head: bool = False


@dataclass
class DimipConfig:
    """The mutual-information defense on party 2. ``lambda: null`` disables
    it; ``0`` runs its bookkeeping without touching the gradients."""

    lam: float | None = None
    aux_hidden: int = 64
    aux_lr: float = 0.03
    aux_steps: int = 1
    use_lr_term: bool = True


@dataclass
class EvalConfig:
    """Reference models and per-epoch attack tracking.

    ``track_attack`` runs a full-label completion attack on party 2's
    extractor after every epoch; the floor used to summarize that curve is
    ``1/C + floor_margin``.
    """

    standalone: bool = True
    scratch_passive: bool = True
    track_attack: bool = False
    track_attack_epochs: int = 10
    floor_margin: float = 0.05
    checkpoints: bool = True
    round_trace: bool = True


def _default_attacks() -> list[AttackConfig]:
    return [
        AttackConfig(kind="pmc", head="mlp", labeled_budget=0.01, epochs=100),
        AttackConfig(kind="pmc", head="mlp", labeled_budget="all", epochs=30),
    ]


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    seeds: list[int] = field(default_factory=lambda: [0])
    output_dir: str = "results"
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    defense: DefenseConfig = field(default_factory=DefenseConfig)
    dimip: DimipConfig = field(default_factory=DimipConfig)
    attacks: list[AttackConfig] = field(default_factory=_default_attacks)
    evaluate: EvalConfig = field(default_factory=EvalConfig)

    def validate(self) -> "ExperimentConfig":
        if self.dataset.source not in ("synthetic", "tabular"):
            raise ConfigError("dataset.source must be 'synthetic' or 'tabular'")
        if self.dataset.source == "tabular" and not self.dataset.path:
            raise ConfigError("dataset.path is required when dataset.source is 'tabular'")
        if self.dataset.source == "synthetic":
            try:
                self.dataset.synthetic_spec(0).validate()
            except VFLError as e:
                raise ConfigError(f"dataset: {e}") from e
        if self.defense.kind == "dimip":
            raise ConfigError("enable the MI defense with dimip.lambda, not defense.kind")
        if self.dimip.lam is not None:
            if not 0.0 <= self.dimip.lam <= 1.0:
                raise ConfigError("dimip.lambda must lie in [0, 1]")
            if self.defense.kind != "none":
                raise ConfigError("dimip.lambda and defense.kind cannot both be set")
        for key in ("epochs", "batch_size"):
            if getattr(self.train, key) < (0 if key == "epochs" else 1):
                raise ConfigError(f"train.{key} is out of range")
        if self.train.lr < 0:
            raise ConfigError("train.lr must be nonnegative")
        p = self.train.dropout_p
        for v in (p if isinstance(p, list) else [p]):
            if not 0.0 <= v < 1.0:
                raise ConfigError("train.dropout_p entries must lie in [0, 1)")
        if not self.seeds:
            raise ConfigError("seeds must list at least one seed")
        return self


# YAML/CLI spelling -> attribute name, per section type
_ALIASES = {DimipConfig: {"lambda": "lam"}}


def _aliases(cls) -> dict[str, str]:
    return _ALIASES.get(cls, {})


def _key_names(cls) -> list[str]:
    inverse = {v: k for k, v in _aliases(cls).items()}
    return [inverse.get(f.name, f.name) for f in dataclasses.fields(cls)]


def _unknown(key: str, cls, path: str) -> ConfigError:
    names = _key_names(cls)
    close = difflib.get_close_matches(key, names, n=1, cutoff=0.0)
    where = f"{path}.{key}" if path else key
    hint = f"; did you mean {(path + '.' if path else '') + close[0]!r}?" if close else ""
    return ConfigError(f"unknown config key {where!r}{hint}")


def _type_name(hint) -> str:
    return getattr(hint, "__name__", None) or str(hint).replace("typing.", "")


def _coerce(value: Any, hint, path: str):
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin in (Union, types.UnionType):
        # try the non-None members in declaration order
        if value is None:
            if type(None) in args:
                return None
            raise ConfigError(f"{path}: null is not allowed")
        for member in args:
            if member is type(None):
                continue
            try:
                return _coerce(value, member, path)
            except ConfigError:
                pass
        raise ConfigError(f"{path}: {value!r} does not match {_type_name(hint)}")
    if origin in (list, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list, got {value!r}")
        inner = args[0] if args else Any
        out = [_coerce(v, inner, f"{path}.{i}") for i, v in enumerate(value)]
        return tuple(out) if origin is tuple else out
    if dataclasses.is_dataclass(hint):
        return from_dict(hint, value, path)
    if hint is Any:
        return value
    if hint is bool:
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{path}: expected true/false, got {value!r}")
    if hint is int:
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        raise ConfigError(f"{path}: expected an integer, got {value!r}")
    if hint is float:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        if isinstance(value, str):
            # YAML 1.1 reads exponent forms without a dot, like 1e-3, as strings
            try:
                return float(value)
            except ValueError:
                pass
        raise ConfigError(f"{path}: expected a number, got {value!r}")
    if hint is str:
        if isinstance(value, str):
            return value
        raise ConfigError(f"{path}: expected a string, got {value!r}")
    raise ConfigError(f"{path}: unsupported field type {_type_name(hint)}")


def _hints(cls) -> dict[str, Any]:
    return typing.get_type_hints(cls)


def from_dict(cls, data: Any, path: str = ""):
    """Build dataclass ``cls`` from a mapping, validating keys and types."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping, got {data!r}")
    alias = _aliases(cls)
    hints = _hints(cls)
    valid = set(_key_names(cls))
    kwargs = {}
    for key, value in data.items():
        if key not in valid:
            raise _unknown(str(key), cls, path)
        attr = alias.get(key, key)
        sub = f"{path}.{key}" if path else key
        kwargs[attr] = _coerce(value, hints[attr], sub)
    try:
        return cls(**kwargs)
    except VFLError as e:
        raise ConfigError(f"{path or 'config'}: {e}") from e


def to_dict(obj) -> Any:
    """Plain nested dict/list form using the YAML key spellings."""
    if dataclasses.is_dataclass(obj):
        inverse = {v: k for k, v in _aliases(type(obj)).items()}
        return {inverse.get(f.name, f.name): to_dict(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [to_dict(v) for v in obj]
    return obj


def dump(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=False, default_flow_style=None)


def canonical(cfg: ExperimentConfig) -> str:
    """Canonical text of everything that shapes a run's results.

    ``seeds`` and ``output_dir`` are left out: a record carries its own seed,
    and where results are written does not change them.
    """
    tree = to_dict(cfg)
    tree.pop("seeds")
    tree.pop("output_dir")
    return json.dumps(tree, sort_keys=True, separators=(",", ":"))


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(canonical(cfg).encode()).hexdigest()


def parse_value(text: str) -> Any:
    """Parse an override's right-hand side as a YAML scalar or flow sequence."""
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse value {text!r}: {e}") from None


def _resolve_parent(tree: Any, parts: list[str], schema, full: str):
    """Walk the plain-dict tree alongside the schema.

    Returns ``(container, key, field type)`` for the last path element.
    """
    node = tree
    for depth, part in enumerate(parts):
        last = depth == len(parts) - 1
        where = ".".join(parts[:depth]) or "config"
        if typing.get_origin(schema) is list:
            if not part.isdigit() or int(part) >= len(node):
                raise ConfigError(f"{full!r}: index {part!r} out of range for {where!r} (length {len(node)})")
            key, hint = int(part), typing.get_args(schema)[0]
        elif dataclasses.is_dataclass(schema):
            if part not in _key_names(schema):
                raise _unknown(part, schema, ".".join(parts[:depth]))
            key, hint = part, _hints(schema)[_aliases(schema).get(part, part)]
        else:
            raise ConfigError(f"{full!r}: {where!r} is a value, not a section")
        if last:
            return node, key, hint
        node, schema = node[key], hint
    raise ConfigError(f"empty config path {full!r}")


def field_type(cfg: ExperimentConfig, path: str):
    """Type hint of the field a dotted path names (validates the path)."""
    tree = to_dict(cfg)
    parts = path.split(".")
    _, _, hint = _resolve_parent(tree, parts, ExperimentConfig, path)
    return hint


def is_scalar_type(hint) -> bool:
    if typing.get_origin(hint) in (Union, types.UnionType):
        return any(is_scalar_type(a) for a in typing.get_args(hint) if a is not type(None))
    return hint in (int, float, str, bool)


def apply_overrides(cfg: ExperimentConfig, overrides: dict[str, Any] | list[str]) -> ExperimentConfig:
    """Return a new config with ``path=value`` overrides applied.

    ``overrides`` is a list of ``"a.b=value"`` strings (values parsed as
    YAML) or a mapping from path to already-parsed value.
    """
    if isinstance(overrides, list):
        pairs = {}
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"override {item!r} must look like path=value")
            k, v = item.split("=", 1)
            pairs[k.strip()] = parse_value(v)
        overrides = pairs
    tree = to_dict(cfg)
    for path, value in overrides.items():
        container, key, _ = _resolve_parent(tree, path.split("."), ExperimentConfig, path)
        container[key] = value
    return from_dict(ExperimentConfig, tree).validate()


def load(path: str | None = None, overrides=None, env: dict[str, str] | None = None) -> ExperimentConfig:
    """Defaults, then the YAML file, then environment, then overrides."""
    env = os.environ if env is None else env
    data: dict = {}
    if path:
        try:
            with open(path) as fh:
                data = yaml.safe_load(fh) or {}
        except OSError as e:
            raise ConfigError(f"cannot read config {path!r}: {e.strerror}") from None
        except yaml.YAMLError as e:
            raise ConfigError(f"{path}: invalid YAML: {e}") from None
    try:
        cfg = from_dict(ExperimentConfig, data)
    except ConfigError as e:
        raise ConfigError(f"{path}: {e}" if path else str(e)) from None
    env_over: dict[str, Any] = {}
    if env.get(ENV_SEED):
        try:
            env_over["seeds"] = [int(env[ENV_SEED])]
        except ValueError:
            raise ConfigError(f"{ENV_SEED} must be an integer, got {env[ENV_SEED]!r}") from None
    if env_over:
        cfg = apply_overrides(cfg, env_over)
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    return cfg.validate()


def output_root(cfg: ExperimentConfig, env: dict[str, str] | None = None) -> str:
    """Results directory: ``output_dir``, under ``$VFLSIM_OUTPUT_ROOT`` when set."""
    env = os.environ if env is None else env
    root = env.get(ENV_OUTPUT_ROOT)
    return os.path.join(root, cfg.output_dir) if root else cfg.output_dir
