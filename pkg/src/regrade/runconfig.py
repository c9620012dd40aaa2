"""Flat key-value run configuration shared by all CLI commands.

Format: one `section.key = value` per line, `#` comments and blank lines
ignored. Unknown keys, unparsable values, and cross-field violations are
all collected and reported together, not first-failure. The effective
config (defaults applied) can be serialized back out; every command drops
that file into its output directory so a run can be reproduced from the
artifacts alone.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError

_BOOL_WORDS = {"true": True, "yes": True, "1": True, "false": False, "no": False, "0": False}


def _parse_bool(text: str) -> bool:
    try:
        return _BOOL_WORDS[text.strip().lower()]
    except KeyError:
        raise ValueError(f"not a boolean: {text!r}") from None


@dataclass
class RunConfig:
    seed: int = None  # type: ignore[assignment]  # mandatory; validated below

    data_dir: str = "data"
    checkpoint: str = "out/checkpoint.bin"
    run_dir: str = "out/run"
    eval_dir: str = "out/eval"
    report_dir: str = "out/report"

    image_size: int = 64
    per_grade_train: int = 30
    per_grade_eval: int = 10
    vessel_count: int = 7
    disc_radius: int = 6

    patch_size: int = 8
    dim: int = 64
    layers: int = 2
    heads: int = 4
    tau_init: float = 5.0

    epochs: int = 800
    batch_size: int = 16
    learning_rate: float = 0.001
    optimizer: str = "adam"
    augment: str = "basic"
    warmup_epochs: int = 400

    max_iterations: int = 10
    dilate_mask: bool = True
    vessel_source: str = "truth"
    inpaint_backend: str = "auto"
    external_command: str = ""
    external_timeout: float = 60.0
    workers: int = 1

    beta_dark: float = 0.7
    gamma_distance: float = 0.5
    delta_noise: float = 0.1
    alpha_vessel: float = 0.35
    alpha_inter: float = 0.8

    descriptions_file: str = ""


# flat key -> (attribute, caster)
KEY_SCHEMA: dict[str, tuple[str, type | object]] = {
    "run.seed": ("seed", int),
    "paths.data_dir": ("data_dir", str),
    "paths.checkpoint": ("checkpoint", str),
    "paths.run_dir": ("run_dir", str),
    "paths.eval_dir": ("eval_dir", str),
    "paths.report_dir": ("report_dir", str),
    "data.image_size": ("image_size", int),
    "data.per_grade_train": ("per_grade_train", int),
    "data.per_grade_eval": ("per_grade_eval", int),
    "data.vessel_count": ("vessel_count", int),
    "data.disc_radius": ("disc_radius", int),
    "encoder.patch_size": ("patch_size", int),
    "encoder.dim": ("dim", int),
    "encoder.layers": ("layers", int),
    "encoder.heads": ("heads", int),
    "encoder.tau_init": ("tau_init", float),
    "train.epochs": ("epochs", int),
    "train.batch_size": ("batch_size", int),
    "train.learning_rate": ("learning_rate", float),
    "train.optimizer": ("optimizer", str),
    "train.augment": ("augment", str),
    "train.warmup_epochs": ("warmup_epochs", int),
    "loop.max_iterations": ("max_iterations", int),
    "loop.dilate_mask": ("dilate_mask", _parse_bool),
    "loop.vessel_source": ("vessel_source", str),
    "loop.inpaint_backend": ("inpaint_backend", str),
    "loop.external_command": ("external_command", str),
    "loop.external_timeout": ("external_timeout", float),
    "loop.workers": ("workers", int),
    "color.beta_dark": ("beta_dark", float),
    "color.gamma_distance": ("gamma_distance", float),
    "color.delta_noise": ("delta_noise", float),
    "color.alpha_vessel": ("alpha_vessel", float),
    "color.alpha_inter": ("alpha_inter", float),
    "descriptions.file": ("descriptions_file", str),
}

_ATTR_TO_KEY = {attr: key for key, (attr, _) in KEY_SCHEMA.items()}


def parse_config_text(text: str) -> dict[str, str]:
    """Raw key -> value strings; syntax and unknown-key problems collected."""
    entries: dict[str, str] = {}
    problems: list[str] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            problems.append(f"line {lineno}: expected 'section.key = value', got {line!r}")
            continue
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in KEY_SCHEMA:
            problems.append(f"line {lineno}: unknown key {key!r}")
            continue
        entries[key] = value.strip()
    if problems:
        raise ConfigError(problems)
    return entries


def _cross_checks(cfg: RunConfig) -> list[str]:
    problems = []
    if cfg.seed is None:
        problems.append("run.seed is mandatory (set it in the config or pass --seed)")
    if cfg.image_size < 64:
        problems.append("data.image_size must be at least 64")
    if cfg.patch_size < 1 or cfg.image_size % cfg.patch_size != 0:
        problems.append("encoder.patch_size must divide data.image_size")
    if cfg.dim < 1 or cfg.heads < 1 or cfg.dim % cfg.heads != 0:
        problems.append("encoder.dim must be a positive multiple of encoder.heads")
    if cfg.layers < 1:
        problems.append("encoder.layers must be >= 1")
    if cfg.tau_init <= 0:
        problems.append("encoder.tau_init must be positive")
    if cfg.epochs < 0:
        problems.append("train.epochs must be >= 0")
    if cfg.batch_size < 1:
        problems.append("train.batch_size must be >= 1")
    if cfg.learning_rate <= 0:
        problems.append("train.learning_rate must be positive")
    if cfg.optimizer not in ("sgd", "adam"):
        problems.append("train.optimizer must be 'sgd' or 'adam'")
    if cfg.augment not in ("off", "basic"):
        problems.append("train.augment must be 'off' or 'basic'")
    if cfg.warmup_epochs < 0:
        problems.append("train.warmup_epochs must be >= 0")
    if cfg.max_iterations < 1:
        problems.append("loop.max_iterations must be >= 1")
    if cfg.vessel_source not in ("truth", "ridge"):
        problems.append("loop.vessel_source must be 'truth' or 'ridge'")
    if cfg.inpaint_backend not in ("auto", "python", "compiled"):
        problems.append("loop.inpaint_backend must be auto, python, or compiled")
    if cfg.external_timeout <= 0:
        problems.append("loop.external_timeout must be positive")
    if cfg.workers < 1:
        problems.append("loop.workers must be >= 1")
    if cfg.per_grade_train < 0 or cfg.per_grade_eval < 0:
        problems.append("per-grade sample counts must be >= 0")
    if cfg.vessel_count < 0 or cfg.disc_radius < 1:
        problems.append("data.vessel_count must be >= 0 and data.disc_radius >= 1")
    if not 0.0 < cfg.beta_dark <= 1.0:
        problems.append("color.beta_dark must be in (0, 1]")
    if not 0.0 <= cfg.gamma_distance <= 1.0:
        problems.append("color.gamma_distance must be in [0, 1]")
    if cfg.delta_noise < 0.0:
        problems.append("color.delta_noise must be >= 0")
    if not 0.0 <= cfg.alpha_vessel <= cfg.alpha_inter <= 1.0:
        problems.append("need 0 <= color.alpha_vessel <= color.alpha_inter <= 1")
    if cfg.descriptions_file and not Path(cfg.descriptions_file).is_file():
        problems.append(f"descriptions.file does not exist: {cfg.descriptions_file}")
    return problems


def build_config(entries: dict[str, str], overrides: dict[str, object] | None = None) -> RunConfig:
    """Apply raw entries over defaults, then overrides (CLI flags), then
    run every validation at once."""
    cfg = RunConfig()
    problems: list[str] = []
    for key, raw in entries.items():
        attr, caster = KEY_SCHEMA[key]
        try:
            setattr(cfg, attr, caster(raw))
        except (ValueError, TypeError) as exc:
            problems.append(f"{key}: {exc}")
    for attr, value in (overrides or {}).items():
        if value is not None:
            setattr(cfg, attr, value)
    problems.extend(_cross_checks(cfg))
    if problems:
        raise ConfigError(problems)
    return cfg


def load_config(path, overrides: dict[str, object] | None = None) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError([f"config file not found: {path}"])
    return build_config(parse_config_text(path.read_text()), overrides)


def config_to_text(cfg: RunConfig) -> str:
    lines = ["# effective configuration (defaults applied)"]
    for key in sorted(KEY_SCHEMA):
        attr, _ = KEY_SCHEMA[key]
        value = getattr(cfg, attr)
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def write_effective_config(cfg: RunConfig, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "effective_config.txt"
    path.write_text(config_to_text(cfg))
    return path


def _unused_field_guard() -> None:
    # Every RunConfig field must be reachable from a config key, or the
    # round-trip guarantee silently breaks.
    missing = [f.name for f in fields(RunConfig) if f.name not in _ATTR_TO_KEY]
    assert not missing, f"config fields without keys: {missing}"


_unused_field_guard()
