"""Run configuration: an INI-style document of flat ``key = value`` lines.

Grammar
-------
* UTF-8 text; blank lines and lines starting with ``#`` or ``;`` are ignored.
* ``key = value`` lines may appear before any section header or inside one
  of the sections ``[model]``, ``[data]``, ``[plan]``, ``[pruning]``,
  ``[training]``, ``[run]``. Keys are unique across sections; a key placed
  under the wrong section header is rejected, as is any unknown key.
* Values: integers, floats, ``true``/``false``, enum names in lower case
  (``whole_column``, ``adaptive_budget`` ...), comma-separated integer lists
  (``hidden_widths = 16,16,8``), or bare strings (``output_dir``).

Every key has a default, so ``target_sparsity = 0.5`` alone is a complete
configuration. ``render_config`` writes the fully resolved document back
out, and ``parse_config(render_config(c)) == c``.
"""
from __future__ import annotations

import configparser
import dataclasses
import enum
from dataclasses import dataclass, fields
from typing import Any

from .data import Generator, Partition, SynthSpec, gen_synthetic, partition_clients
from .importance import Method, Norm
from .masks import Pattern
from .model import Activation, Mlp, MlpConfig
from .rng import derive_rng
from .schedule import Allocation, Schedule, SparsityPlan


class ConfigError(ValueError):
    pass


_ROOT = "__root__"


@dataclass(frozen=True)
class RunConfig:
    # model
    hidden_widths: tuple[int, ...] = (16, 16, 8)
    activation: Activation = Activation.RELU
    prune_head: bool = False
    # data
    generator: Generator = Generator.GAUSSIAN_CLUSTERS
    n_examples: int = 4000
    n_eval: int = 1000
    n_classes: int = 4
    input_dim: int = 32
    noise: float = 1.0
    partition: Partition = Partition.DIRICHLET
    alpha: float = 1.0
    n_clients: int = 16
    # plan
    target_sparsity: float = 0.0
    delta_r: int = 10
    ramp_steps: int = 5
    r_finetune: int = 200
    r_end: int = 300
    schedule: Schedule = Schedule.CONSTANT
    allocation: Allocation = Allocation.UNIFIED
    d_min: float = 0.05
    mask_refinement: bool = True
    # pruning
    pattern: Pattern = Pattern.WHOLE_COLUMN
    method: Method = Method.WEIGHT
    norm: Norm = Norm.L1
    momentum_beta: float = 0.9
    # training
    clients_per_round: int = 8
    local_steps: int = 4
    batch_size: int = 16
    client_lr: float = 0.1
    server_lr: float = 1.0
    # run
    seed: int = 0
    threads: int = 0
    record_wall_time: bool = False
    output_dir: str = "runs/default"

    def __post_init__(self):
        try:
            self.model_config()
            self.synth_spec()
            self.plan()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.clients_per_round > self.n_clients:
            raise ConfigError(f"clients_per_round ({self.clients_per_round}) exceeds n_clients ({self.n_clients})")
        for name in ("clients_per_round", "local_steps", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.client_lr < 0 or self.server_lr < 0:
            raise ConfigError("learning rates must be nonnegative")
        if not 0.0 < self.momentum_beta < 1.0:
            raise ConfigError("momentum_beta must lie in (0, 1)")
        if self.threads < 0:
            raise ConfigError("threads must be >= 0 (0 = use FEDPRUNE_THREADS)")

    def model_config(self) -> MlpConfig:
        return MlpConfig((self.input_dim, *self.hidden_widths, self.n_classes), self.activation, self.prune_head)

    def synth_spec(self) -> SynthSpec:
        return SynthSpec(
            seed=self.seed,
            n_examples=self.n_examples,
            n_eval=self.n_eval,
            n_classes=self.n_classes,
            input_dim=self.input_dim,
            generator=self.generator,
            noise=self.noise,
            partition=self.partition,
            alpha=self.alpha,
            n_clients=self.n_clients,
        )

    def plan(self) -> SparsityPlan:
        return SparsityPlan(
            target_sparsity=self.target_sparsity,
            delta_r=self.delta_r,
            ramp_steps=self.ramp_steps,
            r_finetune=self.r_finetune,
            r_end=self.r_end,
            schedule=self.schedule,
            allocation=self.allocation,
            d_min=self.d_min,
            mask_refinement=self.mask_refinement,
        )

    def replace(self, **changes) -> RunConfig:
        return dataclasses.replace(self, **changes)


SECTIONS: dict[str, tuple[str, ...]] = {
    "model": ("hidden_widths", "activation", "prune_head"),
    "data": ("generator", "n_examples", "n_eval", "n_classes", "input_dim", "noise", "partition", "alpha", "n_clients"),
    "plan": ("target_sparsity", "delta_r", "ramp_steps", "r_finetune", "r_end", "schedule", "allocation", "d_min", "mask_refinement"),
    "pruning": ("pattern", "method", "norm", "momentum_beta"),
    "training": ("clients_per_round", "local_steps", "batch_size", "client_lr", "server_lr"),
    "run": ("seed", "threads", "record_wall_time", "output_dir"),
}
_SECTION_OF = {key: sec for sec, keys in SECTIONS.items() for key in keys}
_FIELDS = {f.name: f for f in fields(RunConfig)}
_DEFAULTS = RunConfig()


def _convert(key: str, raw: str) -> Any:
    default = getattr(_DEFAULTS, key)
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise ValueError(raw)
        if isinstance(default, enum.Enum):
            return type(default)(raw.lower())
        if isinstance(default, tuple):
            return tuple(int(p) for p in raw.split(",") if p.strip())
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, enum.Enum):
        return value.value
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def config_from_mapping(values: dict[str, str], base: RunConfig | None = None) -> RunConfig:
    unknown = sorted(set(values) - set(_FIELDS))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    changes = {k: _convert(k, v) for k, v in values.items()}
    base = base or _DEFAULTS
    try:
        return dataclasses.replace(base, **changes)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def parse_config(text: str) -> RunConfig:
    parser = configparser.ConfigParser(
        interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"), default_section="__defaults__"
    )
    parser.optionxform = str
    try:
        parser.read_string(f"[{_ROOT}]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    values: dict[str, str] = {}
    for section in parser.sections():
        if section != _ROOT and section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in _FIELDS:
                raise ConfigError(f"unknown config key: {key}")
            if section != _ROOT and _SECTION_OF[key] != section:
                raise ConfigError(f"key {key} belongs in [{_SECTION_OF[key]}], not [{section}]")
            if key in values:
                raise ConfigError(f"duplicate key {key}")
            values[key] = raw
    return config_from_mapping(values)


def render_config(config: RunConfig) -> str:
    lines = []
    for section, keys in SECTIONS.items():
        lines.append(f"[{section}]")
        lines.extend(f"{key} = {_format(getattr(config, key))}" for key in keys)
        lines.append("")
    return "\n".join(lines)


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as f:
        return parse_config(f.read())


def parse_overrides(args: list[str]) -> dict[str, str]:
    """``--key=value`` flags to a mapping of raw values."""
    out = {}
    for arg in args:
        if not arg.startswith("--") or "=" not in arg:
            raise ConfigError(f"override must look like --key=value, got {arg!r}")
        key, value = arg[2:].split("=", 1)
        out[key.replace("-", "_")] = value
    return out


@dataclass
class Run:
    """Everything a run needs, materialised from a config."""

    config: RunConfig
    model: Mlp
    store: Any
    task: Any
    clients: list
    hyper: Any
    setup: Any


def build_run(config: RunConfig) -> Run:
    from .engine import PruningSetup, TrainHyper, make_clients, resolve_threads

    model = Mlp(config.model_config())
    store = model.init_store(derive_rng(config.seed, "init"))
    spec = config.synth_spec()
    task = gen_synthetic(spec)
    shards = partition_clients(task.train, spec)
    clients = make_clients(task.train.x, task.train.y, shards)
    hyper = TrainHyper(
        clients_per_round=config.clients_per_round,
        local_steps=config.local_steps,
        batch_size=config.batch_size,
        client_lr=config.client_lr,
        server_lr=config.server_lr,
        threads=resolve_threads(config.threads or None),
    )
    setup = PruningSetup(config.plan(), config.pattern, config.method, config.norm, config.momentum_beta)
    return Run(config, model, store, task, clients, hyper, setup)


__all__ = [
    "ConfigError",
    "RunConfig",
    "SECTIONS",
    "build_run",
    "config_from_mapping",
    "load_config",
    "parse_config",
    "parse_overrides",
    "render_config",
]
