"""Run configuration: nested dataclasses addressed by flat dotted keys.

A run is described by one RunConfig tree.  On disk and on the command line
the tree is always spelled flat ("mo2.alpha", "transfer.gamma"), which keeps
configs greppable and makes overrides one string each.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field, fields, is_dataclass
from pathlib import Path

from .objectives import Mo2Config


class ConfigError(ValueError):
    """Invalid configuration; `field` names the offending dotted key."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class DataConfig:
    n_transitions: int = 200_000
    noise_std: float = 0.1
    chunk: int = 800


@dataclass
class PolicyConfig:
    hidden: tuple = (64, 64)
    std_floor: float = 1e-2
    term_bias: float = -2.0


@dataclass
class ModelConfig:
    n_components: int = 4
    hidden: tuple = (64, 64)
    sigma: float = 1e-3
    sigma_is_std: bool = False
    learning_rate: float = 3e-4
    samples_per_window: int = 4


@dataclass
class OfflineConfig:
    steps: int = 1500
    model_warmup: int = 100  # model-only steps before the policy moves
    pred_ramp: int = 0       # linear alpha ramp-in over this many steps
    log_every: int = 25
    eval_every: int = 250
    holdout_frac: float = 0.1
    max_grad_norm: float = 10.0


@dataclass
class TransferConfig:
    mode: str = "semi"              # "semi" or "mdp"
    episodes: int = 300
    max_env_steps: int = 200_000
    gamma: float = 0.99
    replay_capacity: int = 100_000
    batch_size: int = 256
    target_period: int = 100
    learning_rate: float = 1e-3
    hidden: tuple = (64, 64)
    kl_budget: float = 1.0          # eta dual constraint for controller improvement
    improve_steps: int = 50         # M-step gradient budget per refit
    epsilon_greedy: float = 0.0     # fallback exploration; 0 disables
    improve_every: int = 10         # episodes between controller refits
    warmup_tuples: int = 500
    steps_per_gradient: int = 50    # env steps collected per TD update
    eval_every: int = 20            # episodes between evaluation blocks
    eval_episodes: int = 10
    sync: bool = True               # single-thread actor/learner interleave


@dataclass
class RunConfig:
    env: str = "maze2d"
    seed: int = 0
    out_dir: str = "runs/out"
    dataset: str = ""
    preset: str = "mo2"
    mo2: Mo2Config = field(default_factory=Mo2Config)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    data: DataConfig = field(default_factory=DataConfig)
    offline: OfflineConfig = field(default_factory=OfflineConfig)
    transfer: TransferConfig = field(default_factory=TransferConfig)


# preset name -> overrides applied on top of the defaults
PRESETS = {
    "mo2": {"mo2.alpha": 1.0, "mo2.switch_penalty": 0.0},
    "ho2-offline": {"mo2.alpha": 0.0, "mo2.switch_penalty": 0.0},
    "ho2-lim": {"mo2.alpha": 0.0, "mo2.switch_penalty": 0.1},
}
HO2_LIM_SWEEP = (0.01, 0.1, 1.0)


def flatten(cfg) -> dict:
    """RunConfig tree -> {dotted key: plain JSON value}."""
    out = {}
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if is_dataclass(v):
            for k, sub in flatten(v).items():
                out[f"{f.name}.{k}"] = sub
        elif isinstance(v, tuple):
            out[f.name] = list(v)
        else:
            out[f.name] = v
    return out


def _resolve(cfg, dotted: str):
    """Walk to (owner dataclass, leaf field name); raises ConfigError."""
    obj = cfg
    parts = dotted.split(".")
    for part in parts[:-1]:
        if not is_dataclass(obj) or part not in {f.name for f in fields(obj)}:
            raise ConfigError(dotted, "unknown config key")
        obj = getattr(obj, part)
    leaf = parts[-1]
    if not is_dataclass(obj) or leaf not in {f.name for f in fields(obj)}:
        raise ConfigError(dotted, "unknown config key")
    return obj, leaf


def _coerce(dotted: str, current, value):
    """Parse `value` (JSON value or raw string) to the type of `current`."""
    if isinstance(value, str):
        try:
            value = json.loads(value)
        except json.JSONDecodeError:
            pass  # bare strings stay strings
    if isinstance(current, bool):
        if isinstance(value, bool):
            return value
        raise ConfigError(dotted, f"expected true/false, got {value!r}")
    if isinstance(current, int) and not isinstance(current, bool):
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        if isinstance(value, float) and value.is_integer():
            return int(value)
        raise ConfigError(dotted, f"expected an integer, got {value!r}")
    if isinstance(current, float):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        raise ConfigError(dotted, f"expected a number, got {value!r}")
    if isinstance(current, tuple):
        if isinstance(value, (list, tuple)) and all(
                isinstance(x, int) and not isinstance(x, bool) for x in value):
            return tuple(value)
        raise ConfigError(dotted, f"expected a list of integers, got {value!r}")
    if isinstance(current, str):
        if isinstance(value, str):
            return value
        raise ConfigError(dotted, f"expected a string, got {value!r}")
    raise ConfigError(dotted, f"unsupported field type {type(current).__name__}")


def set_key(cfg: RunConfig, dotted: str, value) -> None:
    owner, leaf = _resolve(cfg, dotted)
    setattr(owner, leaf, _coerce(dotted, getattr(owner, leaf), value))


def apply_overrides(cfg: RunConfig, pairs) -> None:
    """Apply KEY=VALUE strings in order; later wins.

    preset=NAME expands to the preset's keys at its position in the list,
    so an explicit key after it still wins.
    """
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(pair, "override must look like key=value")
        key, _, raw = pair.partition("=")
        key = key.strip()
        if key == "preset":
            apply_preset(cfg, _coerce("preset", cfg.preset, raw.strip()))
        else:
            set_key(cfg, key, raw.strip())


def apply_preset(cfg: RunConfig, name: str) -> None:
    if name not in PRESETS:
        raise ConfigError("preset", f"unknown preset {name!r}; "
                          f"choose from {sorted(PRESETS)}")
    cfg.preset = name
    for key, value in PRESETS[name].items():
        set_key(cfg, key, value)


def validate(cfg: RunConfig) -> None:
    """Cross-field checks beyond what the dataclasses enforce."""
    if cfg.mo2.sequence_length < 2:
        raise ConfigError("mo2.sequence_length", "need at least 2 steps per window")
    if cfg.mo2.batch_size < 1:
        raise ConfigError("mo2.batch_size", "must be positive")
    if not 0.0 <= cfg.offline.holdout_frac < 1.0:
        raise ConfigError("offline.holdout_frac", "must lie in [0, 1)")
    if cfg.transfer.mode not in ("semi", "mdp"):
        raise ConfigError("transfer.mode", "must be 'semi' or 'mdp'")
    if not 0.0 < cfg.transfer.gamma <= 1.0:
        raise ConfigError("transfer.gamma", "must lie in (0, 1]")
    if cfg.transfer.kl_budget <= 0.0:
        raise ConfigError("transfer.kl_budget", "must be positive")
    if not 0.0 <= cfg.transfer.epsilon_greedy <= 1.0:
        raise ConfigError("transfer.epsilon_greedy", "must lie in [0, 1]")
    if cfg.transfer.steps_per_gradient < 1:
        raise ConfigError("transfer.steps_per_gradient", "must be at least 1")


def load_config(path, overrides=()) -> RunConfig:
    """Build a RunConfig from a flat JSON file plus in-order overrides.

    The file's preset (if any) is applied first so explicit keys win.
    """
    cfg = RunConfig()
    flat = {}
    if path is not None:
        try:
            flat = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(str(path), f"not valid JSON ({e})") from e
        if not isinstance(flat, dict):
            raise ConfigError(str(path), "top level must be a JSON object")
    if "preset" in flat:
        apply_preset(cfg, _coerce("preset", cfg.preset, flat["preset"]))
    for key, value in flat.items():
        if key != "preset":
            set_key(cfg, key, value)
    apply_overrides(cfg, overrides)
    validate(cfg)
    return cfg


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(json.dumps(flatten(cfg), indent=2, sort_keys=True) + "\n")


def derive_seed(root: int, component: str) -> int:
    """Stable per-component stream seed: sha256(name) prefix XOR root."""
    digest = hashlib.sha256(component.encode("utf-8")).digest()
    return (int.from_bytes(digest[:8], "big") ^ root) & 0x7FFF_FFFF_FFFF_FFFF


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(path, cfg: RunConfig, artifacts: dict) -> dict:
    """Record the resolved config plus digests of every artifact involved.

    artifacts maps role names ("dataset", "policy_checkpoint", ...) to paths.
    The manifest alone is enough to rerun the job and check its inputs.
    """
    entry = {
        "format": "mo2lab-manifest-1",
        "config": flatten(cfg),
        "artifacts": {
            name: {"path": str(p), "sha256": file_digest(p)}
            for name, p in sorted(artifacts.items())
        },
    }
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(entry, indent=2, sort_keys=True) + "\n")
    return entry


def config_from_manifest(path) -> RunConfig:
    entry = json.loads(Path(path).read_text())
    if entry.get("format") != "mo2lab-manifest-1":
        raise ConfigError(str(path), "not a run manifest")
    cfg = RunConfig()
    for key, value in entry["config"].items():
        set_key(cfg, key, value)
    validate(cfg)
    return cfg


def thread_cap(default: int = 4) -> int:
    """Worker cap from MO2LAB_THREADS; always at least 1."""
    raw = os.environ.get("MO2LAB_THREADS", "")
    if not raw:
        return max(1, min(default, os.cpu_count() or 1))
    try:
        n = int(raw)
    except ValueError as e:
        raise ConfigError("MO2LAB_THREADS", f"not an integer: {raw!r}") from e
    if n < 1:
        raise ConfigError("MO2LAB_THREADS", "must be at least 1")
    return n
