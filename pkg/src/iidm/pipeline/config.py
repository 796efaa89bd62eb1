"""Run configuration: INI-style sections of ``key = value`` lines, unknown keys rejected."""
from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, fields, replace

from ..carbon import CarbonParams
from ..distill.vgg import SLIM_WIDTHS


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunSection:
    seed: int = 1
    size: int = 32
    n_scenes: int = 3          # the last scene is held out
    n_patches: int = 8


@dataclass(frozen=True)
class DistillSection:
    widths: str = ",".join(str(c) for c in SLIM_WIDTHS)   # or "auto"
    target: float = 0.85
    teacher_steps: int = 20
    pair_steps: int = 30
    batch_size: int = 8
    epochs: int = 5
    lr: float = 1e-3
    prose_target: bool = False


@dataclass(frozen=True)
class DiffusionSection:
    T: int = 50
    beta_start: float = 1e-4
    beta_end: float = 0.2
    widths: str = "16,32,64"
    steps: int = 1500
    lr: float = 1e-3
    batch_size: int = 4
    n_samples: int = 8


@dataclass(frozen=True)
class ModuleSection:
    mask: bool = True
    vgg: bool = False
    kd_vgg: bool = True
    attention_mlp: bool = True


@dataclass(frozen=True)
class AblationSection:
    steps: int = 150


@dataclass(frozen=True)
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    carbon: CarbonParams = field(default_factory=CarbonParams)
    distill: DistillSection = field(default_factory=DistillSection)
    diffusion: DiffusionSection = field(default_factory=DiffusionSection)
    modules: ModuleSection = field(default_factory=ModuleSection)
    ablation: AblationSection = field(default_factory=AblationSection)

    def __post_init__(self):
        validate(self)

    def with_modules(self, **toggles):
        return replace(self, modules=replace(self.modules, **toggles))

    def with_values(self, section, **values):
        return replace(self, **{section: replace(getattr(self, section), **values)})


SECTIONS = {f.name: f.default_factory for f in fields(RunConfig)}


def int_list(text):
    try:
        return tuple(int(v) for v in str(text).split(","))
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from None


def validate(cfg: RunConfig):
    r, d, m = cfg.run, cfg.diffusion, cfg.modules
    if r.size < 16:
        raise ConfigError("run.size must be at least 16")
    if r.n_scenes < 2:
        raise ConfigError("run.n_scenes must be at least 2 (one is held out)")
    if r.n_patches < 1:
        raise ConfigError("run.n_patches must be positive")
    if m.vgg and m.kd_vgg:
        raise ConfigError("modules.vgg and modules.kd_vgg are mutually exclusive")
    if len(int_list(d.widths)) != 3:
        raise ConfigError("diffusion.widths needs three values")
    if cfg.distill.widths != "auto" and len(int_list(cfg.distill.widths)) != 4:
        raise ConfigError("distill.widths needs four values or 'auto'")
    for name, val in (("diffusion.steps", d.steps), ("diffusion.batch_size", d.batch_size),
                      ("diffusion.n_samples", d.n_samples), ("distill.batch_size", cfg.distill.batch_size),
                      ("distill.epochs", cfg.distill.epochs)):
        if val < 1:
            raise ConfigError(f"{name} must be positive")
    if not 0 < d.beta_start < d.beta_end < 1:
        raise ConfigError("need 0 < diffusion.beta_start < diffusion.beta_end < 1")


def _coerce(kind, text, where):
    text = text.strip()
    try:
        if kind is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        return kind(text)
    except ValueError:
        raise ConfigError(f"{where}: cannot read {text!r} as {kind.__name__}") from None


def _section_types(factory):
    proto = factory()
    return {f.name: type(getattr(proto, f.name)) for f in fields(proto)}


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    sections = {name: getattr(base, name) if base else factory() for name, factory in SECTIONS.items()}
    for sec in parser.sections():
        if sec not in SECTIONS:
            raise ConfigError(f"unknown section [{sec}]")
        types = _section_types(SECTIONS[sec])
        values = {}
        for key, raw in parser.items(sec):
            if key not in types:
                raise ConfigError(f"unknown key {sec}.{key}")
            values[key] = _coerce(types[key], raw, f"{sec}.{key}")
        try:
            sections[sec] = replace(sections[sec], **values)
        except ValueError as exc:
            raise ConfigError(f"[{sec}]: {exc}") from None
    return RunConfig(**sections)


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None


def apply_overrides(cfg: RunConfig, **flags) -> RunConfig:
    """CLI flag overrides: seed, size, steps (diffusion), out is handled by the caller."""
    run = {k: v for k, v in (("seed", flags.get("seed")), ("size", flags.get("size"))) if v is not None}
    if run:
        cfg = cfg.with_values("run", **run)
    if flags.get("steps") is not None:
        cfg = cfg.with_values("diffusion", steps=flags["steps"])
    return cfg


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for name in SECTIONS:
        lines.append(f"[{name}]")
        for key, val in asdict(getattr(cfg, name)).items():
            lines.append(f"{key} = {str(val).lower() if isinstance(val, bool) else val}")
        lines.append("")
    return "\n".join(lines)
