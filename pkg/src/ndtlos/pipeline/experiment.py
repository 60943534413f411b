"""End-to-end experiment runner: dataset, training, SNR sweeps and reports.

Output directory layout::

    scene.json  dataset.ndtl  manifest.json
    models/<name>.ndtm        logs/train_<name>.csv
    results/sweep_<name>.csv  results/roc_<name>_<snr>.csv  results/flops_<name>.txt
    results/summary.csv       .done (config digest of the completed run)
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from .. import checkpoint
from ..adcpm import cnn_input
from ..channel import PROFILES, TRUE_CHANNEL
from ..classic_ml import default_gamma, rf_train, select_svm, svm_train
from ..deepnet.net import build_preset
from ..deepnet.train import TrainingSet, train, write_training_log
from ..errors import ConfigError, DataError
from ..evalkit import build_test_inputs, eval_sweep, flops, write_roc_csv, write_sweep_csv
from ..features import Scaler, extract_features, feature_matrix
from ..geometry import load_scene, save_scene, scene_hash, toy_city
from ..models import ModelArtifact, from_rf, from_svm
from .config import ExperimentConfig, ModelSection
from .dataset import (DatasetManifest, file_sha256, generate_dataset, load_manifest, read_container,
                      save_manifest, split, write_container)

log = logging.getLogger(__name__)

DONE_MARKER = ".done"


class Workspace:
    def __init__(self, root):
        self.root = Path(root)

    scene = property(lambda self: self.root / "scene.json")
    dataset = property(lambda self: self.root / "dataset.ndtl")
    manifest = property(lambda self: self.root / "manifest.json")
    models = property(lambda self: self.root / "models")
    logs = property(lambda self: self.root / "logs")
    results = property(lambda self: self.root / "results")
    done = property(lambda self: self.root / DONE_MARKER)

    def checkpoint(self, name):
        return self.models / f"{name}.ndtm"

    def ensure(self):
        for d in (self.root, self.models, self.logs, self.results):
            d.mkdir(parents=True, exist_ok=True)


def profile(cfg: ExperimentConfig):
    return PROFILES[cfg.data.profile]


def resolve_scene(cfg: ExperimentConfig):
    if cfg.scene.source == "toy":
        scene = toy_city(cfg.scene.toy_seed, bs_site=cfg.scene.toy_bs_site)
    else:
        scene = load_scene(cfg.scene.source)
    return replace(scene, max_bounces=cfg.scene.max_bounces, reflection_coeff=cfg.scene.reflection_coeff)


def snr_tag(snr: float) -> str:
    return f"{snr:+g}dB"


# ---------------------------------------------------------------- data


def _dataset_matches(ws: Workspace, cfg: ExperimentConfig, scene) -> bool:
    if not (ws.dataset.exists() and ws.manifest.exists()):
        return False
    try:
        m = load_manifest(ws.manifest)
    except DataError:
        return False
    ofdm, array = profile(cfg)
    return (m.scene_hash == scene_hash(scene) and m.master_seed == cfg.seed
            and m.cell_size == cfg.data.cell_size and m.ue_height == cfg.data.ue_height
            and m.ofdm == asdict(ofdm) and m.array == asdict(array)
            and m.container_sha256 == file_sha256(ws.dataset))


def generate(cfg: ExperimentConfig, out, force: bool = False):
    """Build (or reuse) the dataset container and its manifest in ``out``."""
    ws = Workspace(out)
    ws.ensure()
    scene = resolve_scene(cfg)
    if not force and _dataset_matches(ws, cfg, scene):
        log.info("dataset in %s is up to date", ws.root)
        return read_container(ws.dataset), load_manifest(ws.manifest)
    ofdm, array = profile(cfg)
    samples, manifest = generate_dataset(scene, array, ofdm, cfg.seed, cfg.data.cell_size,
                                         cfg.data.ue_height, cfg.data.max_samples)
    if manifest.n_samples < 2:
        raise DataError(f"only {manifest.n_samples} usable positions in the scene")
    save_scene(scene, ws.scene)
    manifest.container_sha256 = write_container(ws.dataset, samples)
    save_manifest(manifest, ws.manifest)
    return samples, manifest


def make_split(cfg: ExperimentConfig, out, samples, manifest: DatasetManifest,
               test_count: int | None = None) -> DatasetManifest:
    fraction = None if test_count is not None else cfg.data.test_fraction
    m = split(manifest, test_count, fraction, cfg.seed, cfg.data.stratify,
              labels=[s.label for s in samples])
    save_manifest(m, Workspace(out).manifest)
    return m


def load_dataset(out):
    ws = Workspace(out)
    if not ws.manifest.exists():
        raise DataError(f"no dataset in {ws.root}; run generate first")
    m = load_manifest(ws.manifest)
    if m.container_sha256 and file_sha256(ws.dataset) != m.container_sha256:
        raise DataError("dataset container does not match its manifest")
    return read_container(ws.dataset), m


# ---------------------------------------------------------------- training


def training_features(samples) -> np.ndarray:
    """Ground-truth features (twin side) for classic-model training."""
    return feature_matrix(extract_features(s.paths) for s in samples)


def train_one(cfg: ExperimentConfig, msec: ModelSection, train_samples):
    """Fit one declared model on twin ground truth; returns (artifact, log rows or None)."""
    ofdm, array = profile(cfg)
    y = np.array([s.label for s in train_samples])
    if msec.family == "cnn":
        channels = [s.channel for s in train_samples]
        X = np.stack([cnn_input(H, array, ofdm, msec.downsample) for H in channels])
        spec = build_preset(msec.preset, X.shape[1:], batchnorm=msec.batchnorm)
        data = TrainingSet(X, y, channels, array, ofdm, msec.downsample)
        art, rows = train(spec, data, msec.train)
        art.meta.update({"model": msec.name, "downsample": list(msec.downsample) if msec.downsample else None,
                         "profile": cfg.data.profile})
        return art, rows
    F = training_features(train_samples)
    scaler = Scaler.fit(F)
    Xs = scaler.transform(F)
    c = cfg.classic
    if msec.family == "svm":
        # "auto" searches by k-fold accuracy; "scale" is the 1/(d var) heuristic
        C = c.svm_c
        gamma = default_gamma(Xs) if c.svm_gamma == "scale" else c.svm_gamma
        if C == "auto" or gamma == "auto":
            res = select_svm(Xs, y, c.svm_kernel, c.cv_folds, cfg.seed, c.svm_tol)
            C = res.params["C"] if C == "auto" else C
            gamma = res.params["gamma"] if gamma == "auto" else gamma
        model = svm_train(Xs, y, c.svm_kernel, C, c.svm_tol, gamma=gamma, seed=cfg.seed)
        art = from_svm(model, scaler)
    else:
        model = rf_train(Xs, y, c.rf_trees, c.rf_max_depth, c.rf_min_leaf, cfg.seed)
        art = from_rf(model, scaler)
    art.meta.update({"model": msec.name, "mpc_max_paths": c.mpc_max_paths,
                     "mpc_threshold_db": c.mpc_threshold_db, "profile": cfg.data.profile})
    return art, None


def train_models(cfg: ExperimentConfig, out, names=None) -> dict:
    samples, m = load_dataset(out)
    tr = [samples[i] for i in m.indices("train")]
    ws = Workspace(out)
    ws.ensure()
    arts = {}
    for msec in cfg.models:
        if names and msec.name not in names:
            continue
        log.info("training %s (%s)", msec.name, msec.family)
        art, rows = train_one(cfg, msec, tr)
        checkpoint.save(art, ws.checkpoint(msec.name))
        if rows is not None:
            write_training_log(ws.logs / f"train_{msec.name}.csv", rows)
        arts[msec.name] = art
    if names and not arts:
        raise ConfigError(f"no declared model matches {names}", "model")
    return arts


# ---------------------------------------------------------------- evaluation


def channels_for_test(samples):
    """Only the true channels leave the test samples; labels are read separately."""
    chans = [s.channel for s in samples]
    if any(H.kind != TRUE_CHANNEL for H in chans):
        raise DataError("test channels must be true channels to simulate the uplink")
    return chans


def model_pool(art: ModelArtifact):
    ds = art.meta.get("downsample")
    return tuple(ds) if ds else None


def score_test(art: ModelArtifact, cfg: ExperimentConfig, channels, snr_db: float) -> np.ndarray:
    """Scores from uplink estimates of ``channels`` at one SNR."""
    ofdm, array = profile(cfg)
    X = build_test_inputs(art.family, channels, snr_db, cfg.seed, array, ofdm, model_pool(art),
                          int(art.meta.get("mpc_max_paths", cfg.classic.mpc_max_paths)),
                          float(art.meta.get("mpc_threshold_db", cfg.classic.mpc_threshold_db)))
    return art.score(X)


def evaluate(cfg: ExperimentConfig, out, names=None, snr_list=None, roc_snrs=None,
             write_sweep: bool = True) -> dict:
    """SNR sweep for every stored model; writes sweep/ROC/FLOPs files."""
    samples, m = load_dataset(out)
    te = [samples[i] for i in m.indices("test")]
    chans = channels_for_test(te)
    labels = np.array([s.label for s in te])
    ws = Workspace(out)
    ws.ensure()
    ofdm, array = profile(cfg)
    snr_list = tuple(cfg.eval.snr_db if snr_list is None else snr_list)
    roc_snrs = set(cfg.eval.roc_snr_db if roc_snrs is None else roc_snrs)
    results = {}
    for msec in cfg.models:
        if names and msec.name not in names:
            continue
        path = ws.checkpoint(msec.name)
        if not path.exists():
            raise DataError(f"model {msec.name} has no checkpoint; run train first")
        art = checkpoint.load(path)
        curves = {}
        rows = eval_sweep(art, chans, labels, snr_list, cfg.seed, array, ofdm, model_pool(art), curves)
        if write_sweep:
            write_sweep_csv(rows, ws.results / f"sweep_{msec.name}.csv")
        for snr, curve in curves.items():
            if snr in roc_snrs:
                write_roc_csv(curve, ws.results / f"roc_{msec.name}_{snr_tag(snr)}.csv")
        if art.family == "cnn":
            spec = build_preset(art.meta["preset"], art.meta["input_dims"], art.meta.get("batchnorm", False))
            (ws.results / f"flops_{msec.name}.txt").write_text(flops(spec).to_text())
        results[msec.name] = rows
    return results


def write_summary(cfg: ExperimentConfig, out) -> Path:
    """Summary table rebuilt from the stored sweep CSVs and checkpoints only."""
    ws = Workspace(out)
    lines = ["model,family,input_dims,gflops,snr_db,accuracy,auc"]
    for msec in cfg.models:
        sweep = ws.results / f"sweep_{msec.name}.csv"
        if not sweep.exists():
            continue
        art = checkpoint.load(ws.checkpoint(msec.name))
        dims, gf = "", ""
        if art.family == "cnn":
            dims = "x".join(str(d) for d in art.meta["input_dims"])
            spec = build_preset(art.meta["preset"], art.meta["input_dims"], art.meta.get("batchnorm", False))
            gf = repr(flops(spec).gflops)
        rows = sweep.read_text().splitlines()[1:]
        for r in rows:
            lines.append(f"{msec.name},{art.family},{dims},{gf},{r}")
    path = ws.results / "summary.csv"
    path.write_text("\n".join(lines) + "\n")
    return path


def run_experiment(cfg: ExperimentConfig, out, force: bool = False) -> dict:
    """Generate, split, train, sweep and summarize; a completed run is not repeated unless forced."""
    ws = Workspace(out)
    digest = cfg.digest()
    if not force and ws.done.exists():
        try:
            prev = json.loads(ws.done.read_text())
        except json.JSONDecodeError:
            prev = {}
        if prev.get("config_digest") == digest:
            log.info("experiment in %s already complete; use --force to rerun", ws.root)
            return {"skipped": True, "out": str(ws.root)}
    if ws.done.exists():
        ws.done.unlink()
    samples, manifest = generate(cfg, out, force)
    manifest = make_split(cfg, out, samples, manifest)
    train_models(cfg, out)
    results = evaluate(cfg, out)
    summary = write_summary(cfg, out)
    ws.done.write_text(json.dumps({"config_digest": digest}) + "\n")
    return {"skipped": False, "out": str(ws.root), "summary": str(summary),
            "results": {k: [asdict(r) for r in v] for k, v in results.items()},
            "n_samples": manifest.n_samples, "los_fraction": manifest.los_fraction}

