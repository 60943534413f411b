"""Experiment configuration: INI sections of ``key = value`` with a schema version.

Schema (version 1)::

    [experiment]  schema_version (required, = 1), name, seed
    [scene]       source ("toy" or a scene-file path), toy_seed, toy_bs_site ("corner" | "centre"),
                  max_bounces, reflection_coeff
    [data]        profile ("desk" | "full"), cell_size, ue_height, max_samples (int | none),
                  test_fraction, stratify
    [train]       epochs, batch_size, learning_rate, schedule, optimizer, momentum,
                  augment_snr_db (float | none), augment_domain, w_rec, weighted_bce, val_fraction
    [classic]     svm_kernel, svm_c (float | auto), svm_gamma (float | auto | scale), svm_tol,
                  rf_trees, rf_max_depth, rf_min_leaf, cv_folds, mpc_max_paths, mpc_threshold_db
    [eval]        snr_db (comma list), roc_snr_db (comma list)
    [model.NAME]  family ("cnn" | "svm" | "rf"); for cnn also preset, downsample ("kh,kw" | none),
                  batchnorm, and any [train] key as a per-model override

Every unknown section or key is rejected with its dotted field path.
"""
from __future__ import annotations

import configparser
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from ..deepnet.net import PRESETS
from ..deepnet.train import TrainConfig
from ..errors import ConfigError, InvalidInputError

SCHEMA_VERSION = 1
DEFAULT_SNRS = (-15.0, -10.0, -5.0, 0.0, 5.0, 10.0, 15.0)


def _bool(v):
    s = v.strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _opt(conv):
    def parse(v):
        return None if v.strip().lower() in ("none", "") else conv(v)
    return parse


def _auto(conv):
    def parse(v):
        return "auto" if v.strip().lower() == "auto" else conv(v)
    return parse


def _scale(v):
    w = v.strip().lower()
    return w if w in ("auto", "scale") else float(v)


def _floats(v):
    return tuple(float(x) for x in v.split(",") if x.strip())


def _pool(v):
    if v.strip().lower() in ("none", "off", "1,1", ""):
        return None
    kh, kw = (int(x) for x in v.split(","))
    return (kh, kw)


def _int(v):
    f = float(v)
    if f != int(f):
        raise ValueError(f"not an integer: {v!r}")
    return int(f)


@dataclass
class SceneSection:
    source: str = "toy"
    toy_seed: int = 0
    toy_bs_site: str = "corner"
    max_bounces: int = 2
    reflection_coeff: float = 0.6


@dataclass
class DataSection:
    profile: str = "desk"
    cell_size: float = 2.0
    ue_height: float = 1.5
    max_samples: int | None = None
    test_fraction: float = 0.2
    stratify: bool = False


@dataclass
class ClassicSection:
    svm_kernel: str = "rbf"
    svm_c: object = "auto"
    svm_gamma: object = "auto"
    svm_tol: float = 1e-3
    rf_trees: int = 100
    rf_max_depth: int = 12
    rf_min_leaf: int = 2
    cv_folds: int = 5
    mpc_max_paths: int = 8
    mpc_threshold_db: float = 20.0


@dataclass
class EvalSection:
    snr_db: tuple = DEFAULT_SNRS
    roc_snr_db: tuple = (-15.0, 0.0, 15.0)


@dataclass
class ModelSection:
    name: str
    family: str
    preset: str = "resnet_mini"
    downsample: tuple | None = (4, 4)
    batchnorm: bool = False
    train: TrainConfig = field(default_factory=TrainConfig)


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    seed: int = 0
    scene: SceneSection = field(default_factory=SceneSection)
    data: DataSection = field(default_factory=DataSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    classic: ClassicSection = field(default_factory=ClassicSection)
    eval: EvalSection = field(default_factory=EvalSection)
    models: list = field(default_factory=list)
    schema_version: int = SCHEMA_VERSION

    def model(self, name: str) -> ModelSection:
        for m in self.models:
            if m.name == name:
                return m
        raise ConfigError(f"no model named {name!r}", f"model.{name}")

    def canonical(self) -> dict:
        return asdict(self)

    def digest(self, *parts: str) -> str:
        """Hash of the configuration (or only the named top-level parts)."""
        doc = self.canonical()
        if parts:
            doc = {k: doc[k] for k in parts}
        return hashlib.sha256(json.dumps(doc, sort_keys=True, default=str).encode()).hexdigest()


TRAIN_KEYS = {
    "epochs": _int, "batch_size": _int, "learning_rate": float, "schedule": str, "optimizer": str,
    "momentum": float, "seed": _int, "augment_snr_db": _opt(float), "augment_domain": str,
    "w_rec": float, "weighted_bce": _bool, "val_fraction": float,
}
SECTIONS = {
    "experiment": {"schema_version": _int, "name": str, "seed": _int},
    "scene": {"source": str, "toy_seed": _int, "toy_bs_site": str, "max_bounces": _int, "reflection_coeff": float},
    "data": {"profile": str, "cell_size": float, "ue_height": float, "max_samples": _opt(_int),
             "test_fraction": float, "stratify": _bool},
    "train": TRAIN_KEYS,
    "classic": {"svm_kernel": str, "svm_c": _auto(float), "svm_gamma": _scale, "svm_tol": float,
                "rf_trees": _int, "rf_max_depth": _int, "rf_min_leaf": _int, "cv_folds": _int,
                "mpc_max_paths": _int, "mpc_threshold_db": float},
    "eval": {"snr_db": _floats, "roc_snr_db": _floats},
}
MODEL_KEYS = {"family": str, "preset": str, "downsample": _pool, "batchnorm": _bool, **TRAIN_KEYS}


def _parse_section(parser, section, schema):
    out = {}
    for key, raw in parser.items(section, raw=True):
        if key not in schema:
            raise ConfigError("unknown key", f"{section}.{key}")
        try:
            out[key] = schema[key](raw)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad value {raw!r}: {exc}", f"{section}.{key}") from None
    return out


def _train_config(values, path, base: TrainConfig):
    try:
        return replace(base, **values)
    except InvalidInputError as exc:
        raise ConfigError(str(exc), path) from None


def _validate(cfg: ExperimentConfig):
    from ..channel import PROFILES

    if cfg.data.profile not in PROFILES:
        raise ConfigError(f"unknown profile; choose from {sorted(PROFILES)}", "data.profile")
    if cfg.data.cell_size <= 0:
        raise ConfigError("must be positive", "data.cell_size")
    if not 0 < cfg.data.test_fraction < 1:
        raise ConfigError("must lie in (0, 1)", "data.test_fraction")
    if cfg.data.max_samples is not None and cfg.data.max_samples < 2:
        raise ConfigError("must be at least 2", "data.max_samples")
    if cfg.seed < 0:
        raise ConfigError("must be nonnegative", "experiment.seed")
    if cfg.classic.svm_kernel not in ("linear", "rbf"):
        raise ConfigError("must be linear or rbf", "classic.svm_kernel")
    if cfg.classic.cv_folds < 2:
        raise ConfigError("must be at least 2", "classic.cv_folds")
    if cfg.classic.rf_trees < 1:
        raise ConfigError("must be positive", "classic.rf_trees")
    if not cfg.eval.snr_db:
        raise ConfigError("needs at least one SNR", "eval.snr_db")
    if any(math.isnan(s) for s in cfg.eval.snr_db + cfg.eval.roc_snr_db):
        raise ConfigError("NaN SNR", "eval.snr_db")
    if cfg.scene.toy_bs_site not in ("corner", "centre"):
        raise ConfigError("must be corner or centre", "scene.toy_bs_site")
    if not 0 < cfg.scene.reflection_coeff <= 1:
        raise ConfigError("must lie in (0, 1]", "scene.reflection_coeff")
    names = set()
    for m in cfg.models:
        path = f"model.{m.name}"
        if m.name in names:
            raise ConfigError("duplicate model name", path)
        names.add(m.name)
        if m.family not in ("cnn", "svm", "rf"):
            raise ConfigError("family must be cnn, svm or rf", f"{path}.family")
        if m.family == "cnn" and m.preset not in PRESETS:
            raise ConfigError(f"unknown preset; choose from {PRESETS}", f"{path}.preset")
        if m.downsample is not None and min(m.downsample) < 1:
            raise ConfigError("kernel sizes must be positive", f"{path}.downsample")


def parse_config(text: str, seed_override: int | None = None) -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    if not parser.has_section("experiment") or not parser.has_option("experiment", "schema_version"):
        raise ConfigError("missing schema version", "experiment.schema_version")
    values = {}
    models = []
    for section in parser.sections():
        if section.startswith("model."):
            name = section[len("model."):]
            if not name:
                raise ConfigError("empty model name", section)
            models.append((name, _parse_section(parser, section, MODEL_KEYS)))
        elif section in SECTIONS:
            values[section] = _parse_section(parser, section, SECTIONS[section])
        else:
            raise ConfigError("unknown section", section)
    exp = values.get("experiment", {})
    if exp.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema version (expected {SCHEMA_VERSION})",
                          "experiment.schema_version")
    seed = exp.get("seed", 0) if seed_override is None else int(seed_override)
    # training seeds follow the experiment seed unless pinned explicitly
    train = _train_config({"seed": seed, **values.get("train", {})}, "train", TrainConfig())
    cfg = ExperimentConfig(
        name=exp.get("name", "experiment"),
        seed=seed,
        scene=SceneSection(**values.get("scene", {})),
        data=DataSection(**values.get("data", {})),
        train=train,
        classic=ClassicSection(**values.get("classic", {})),
        eval=EvalSection(**values.get("eval", {})),
    )
    for name, mv in models:
        if "family" not in mv:
            raise ConfigError("missing family", f"model.{name}.family")
        tv = {k: v for k, v in mv.items() if k in TRAIN_KEYS}
        own = {k: v for k, v in mv.items() if k not in TRAIN_KEYS}
        cfg.models.append(ModelSection(name=name, train=_train_config(tv, f"model.{name}", train), **own))
    _validate(cfg)
    return cfg


def load_config(path, seed_override: int | None = None) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", str(path)) from None
    return parse_config(text, seed_override)


def default_config_text() -> str:
    return """\
[experiment]
schema_version = 1
name = desk_default
seed = 0

[scene]
source = toy
toy_seed = 0

[data]
profile = desk
cell_size = 2.0
ue_height = 1.5
test_fraction = 0.2

[train]
epochs = 30
batch_size = 32
learning_rate = 0.001

[eval]
snr_db = -15, -10, -5, 0, 5, 10, 15
roc_snr_db = -15, 0, 15

[model.resnet_aug]
family = cnn
preset = resnet_mini
downsample = 4,4
augment_snr_db = 0

[model.svm]
family = svm

[model.rf]
family = rf
"""
