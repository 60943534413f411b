import json
import time
from dataclasses import replace

import numpy as np
import pytest

from ndtlos.channel import DESK_ARRAY, DESK_OFDM
from ndtlos.errors import ConfigError, DataError, InvalidInputError
from ndtlos.geometry import Box, Scene, save_scene, scene_hash, trace_paths
from ndtlos.pipeline import experiment as ex
from ndtlos.pipeline.cli import main
from ndtlos.pipeline.config import default_config_text, parse_config
from ndtlos.pipeline.dataset import (
    DatasetManifest, generate_dataset, load_manifest, read_container, save_manifest, split, write_container,
)


def wall_scene():
    """10 m square, BS low on the west edge, one wall shadowing the east middle.

    Tall facades just outside the north and south edges give the shadowed
    cells reflected paths instead of an outage.
    """
    buildings = (Box((5.5, 3.5, 0.0), (6.5, 6.5, 3.0)),
                 Box((0.0, 10.5, 0.0), (10.0, 11.5, 8.0)), Box((0.0, -1.5, 0.0), (10.0, -0.5, 8.0)))
    return Scene(buildings=buildings, bs_position=(0.5, 5.0, 2.0), extent=(0.0, 0.0, 10.0, 10.0))


@pytest.fixture(scope="module")
def wall_data():
    return generate_dataset(wall_scene(), DESK_ARRAY, DESK_OFDM, seed=0, cell_size=2.0)


def small_config(scene_path, extra=""):
    return parse_config(f"""
[experiment]
schema_version = 1
seed = 1
[scene]
source = {scene_path}
[data]
cell_size = 2.0
test_fraction = 0.32
stratify = true
[train]
epochs = 2
batch_size = 4
[classic]
svm_c = 1.0
svm_gamma = scale
rf_trees = 5
[eval]
snr_db = -10, 10
roc_snr_db = 10
[model.cnn]
family = cnn
augment_snr_db = 0
[model.svm]
family = svm
[model.rf]
family = rf
{extra}""")


# ---------------------------------------------------------------- dataset

def test_small_scene_has_both_labels(wall_data):
    samples, m = wall_data
    assert m.n_grid == 25 and m.n_samples == 25 and m.n_outage == 0
    labels = [s.label for s in samples]
    assert 0 < sum(labels) < 25
    scene = wall_scene()
    for s in samples:
        assert s.label == int(s.paths.is_los) == int(trace_paths(scene, s.ue_position, scene.bs_position).is_los)
    # the shadowed cells straight behind the wall are NLoS
    by_pos = {s.ue_position[:2]: s.label for s in samples}
    assert by_pos[(7.0, 5.0)] == 0 and by_pos[(9.0, 5.0)] == 0 and by_pos[(3.0, 5.0)] == 1
    assert m.n_los == sum(labels) and m.los_fraction == sum(labels) / 25


def test_container_round_trip(wall_data, tmp_path):
    samples, _ = wall_data
    write_container(tmp_path / "d.ndtl", samples)
    back = read_container(tmp_path / "d.ndtl")
    for a, b in zip(samples, back, strict=True):
        assert a.ue_position == b.ue_position and a.label == b.label
        assert np.array_equal(a.paths.as_array(), b.paths.as_array())
        assert np.array_equal(a.channel.data, b.channel.data)


def test_regeneration_is_byte_identical(tmp_path):
    blobs = []
    for k in range(2):
        samples, _ = generate_dataset(wall_scene(), DESK_ARRAY, DESK_OFDM, seed=0, cell_size=2.0)
        write_container(tmp_path / f"{k}.ndtl", samples)
        blobs.append((tmp_path / f"{k}.ndtl").read_bytes())
    assert blobs[0] == blobs[1]


def test_max_samples_subset_is_seeded(wall_data):
    a, _ = generate_dataset(wall_scene(), DESK_ARRAY, DESK_OFDM, seed=3, cell_size=2.0, max_samples=10)
    b, _ = generate_dataset(wall_scene(), DESK_ARRAY, DESK_OFDM, seed=3, cell_size=2.0, max_samples=10)
    assert [s.ue_position for s in a] == [s.ue_position for s in b]
    full = [s.ue_position for s in wall_data[0]]
    picked = [full.index(s.ue_position) for s in a]
    assert len(a) == 10 and picked == sorted(picked)


def test_corrupt_containers_rejected(wall_data, tmp_path):
    samples, _ = wall_data
    path = tmp_path / "d.ndtl"
    write_container(path, samples[:3])
    blob = path.read_bytes()
    for bad in (b"XXXX" + blob[4:], blob[:-1], blob + b"\0", blob[:100]):
        path.write_bytes(bad)
        with pytest.raises(DataError):
            read_container(path)
    with pytest.raises(DataError):
        read_container(tmp_path / "missing.ndtl")


def test_manifest_round_trip(wall_data, tmp_path):
    _, m = wall_data
    m = split(m, test_count=5, seed=2)
    save_manifest(m, tmp_path / "m.json")
    assert load_manifest(tmp_path / "m.json") == m
    doc = json.loads((tmp_path / "m.json").read_text())
    assert doc["los_fraction"] == m.los_fraction
    doc["format_version"] = 9
    (tmp_path / "m.json").write_text(json.dumps(doc))
    with pytest.raises(DataError):
        load_manifest(tmp_path / "m.json")


def blank_manifest(n):
    return DatasetManifest("h", {}, {}, n, 0, 0, 2.0, 1.5)


def test_split_disjoint_and_stable():
    m = split(blank_manifest(100), test_count=20, seed=4)
    tr, te = m.indices("train"), m.indices("test")
    assert len(tr) == 80 and len(te) == 20 and not set(tr) & set(te)
    assert m.split == split(blank_manifest(100), test_count=20, seed=4).split
    assert m.split != split(blank_manifest(100), test_count=20, seed=5).split


def test_stratified_split_preserves_los_fraction():
    rng = np.random.default_rng(0)
    for n, test in ((100, 20), (57, 13), (200, 33)):
        labels = (rng.random(n) < rng.uniform(0.2, 0.8)).astype(int)
        m = split(blank_manifest(n), test_count=test, seed=1, stratify=True, labels=labels)
        n_pos_test = labels[m.indices("test")].sum()
        assert abs(n_pos_test - test * labels.mean()) <= 1


def test_split_errors():
    with pytest.raises(InvalidInputError):
        split(blank_manifest(10), test_count=10)
    with pytest.raises(InvalidInputError):
        split(blank_manifest(10), test_fraction=1.5)
    with pytest.raises(InvalidInputError):
        split(blank_manifest(10), test_count=2, stratify=True)
    with pytest.raises(DataError):
        blank_manifest(10).indices("test")


# ---------------------------------------------------------------- config

def test_default_config_parses():
    cfg = parse_config(default_config_text())
    assert [m.name for m in cfg.models] == ["resnet_aug", "svm", "rf"]
    assert cfg.model("resnet_aug").train.augment_snr_db == 0.0
    assert cfg.model("resnet_aug").downsample == (4, 4)
    assert cfg.eval.snr_db == (-15, -10, -5, 0, 5, 10, 15)


def test_seed_override_reaches_training():
    cfg = parse_config(default_config_text(), seed_override=7)
    assert cfg.seed == 7 and cfg.model("svm").train.seed == 7


@pytest.mark.parametrize("patch,field", [
    (("test_fraction = 0.2", "test_fraction = 0.2\nbogus = 1"), "data.bogus"),
    (("cell_size = 2.0", "cell_size = two"), "data.cell_size"),
    (("cell_size = 2.0", "cell_size = -1"), "data.cell_size"),
    (("epochs = 30", "epochs = 0"), "train"),
    (("schema_version = 1", "schema_version = 2"), "experiment.schema_version"),
    (("schema_version = 1\n", ""), "experiment.schema_version"),
    (("family = svm", "family = knn"), "model.svm.family"),
    (("preset = resnet_mini", "preset = vgg"), "model.resnet_aug.preset"),
    (("downsample = 4,4", "downsample = 0,4"), "model.resnet_aug.downsample"),
    (("[eval]", "[evaluation]"), "evaluation"),
    (("profile = desk", "profile = huge"), "data.profile"),
])
def test_config_errors_name_the_field(patch, field):
    text = default_config_text()
    assert patch[0] in text
    with pytest.raises(ConfigError) as info:
        parse_config(text.replace(*patch, 1))
    assert info.value.field == field
    assert field in str(info.value)


# ---------------------------------------------------------------- experiment and CLI

@pytest.fixture(scope="module")
def scene_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("scene") / "wall.json"
    save_scene(wall_scene(), path)
    return path


@pytest.fixture(scope="module")
def finished_run(scene_file, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = small_config(scene_file)
    return cfg, out, ex.run_experiment(cfg, out)


def test_run_writes_every_artifact(finished_run):
    cfg, out, res = finished_run
    assert not res["skipped"] and res["n_samples"] == 25
    ws = ex.Workspace(out)
    for name in ("cnn", "svm", "rf"):
        assert ws.checkpoint(name).exists()
        sweep = (ws.results / f"sweep_{name}.csv").read_text().splitlines()
        assert sweep[0] == "snr_db,accuracy,auc" and len(sweep) == 3
        assert (ws.results / f"roc_{name}_+10dB.csv").exists()
    assert (ws.logs / "train_cnn.csv").exists() and (ws.results / "flops_cnn.txt").exists()
    m = load_manifest(ws.manifest)
    assert m.scene_hash == scene_hash(wall_scene())
    assert len(m.indices("test")) == 8


def test_summary_recomputable_from_artifacts(finished_run):
    cfg, out, _ = finished_run
    path = ex.Workspace(out).results / "summary.csv"
    before = path.read_bytes()
    path.unlink()
    assert ex.write_summary(cfg, out).read_bytes() == before
    rows = before.decode().splitlines()
    assert rows[0] == "model,family,input_dims,gflops,snr_db,accuracy,auc" and len(rows) == 7


def test_rerun_is_noop_unless_forced(finished_run):
    cfg, out, _ = finished_run
    ws = ex.Workspace(out)
    stamp = ws.checkpoint("svm").stat().st_mtime_ns
    assert ex.run_experiment(cfg, out)["skipped"]
    assert ws.checkpoint("svm").stat().st_mtime_ns == stamp
    # a different config is not mistaken for the finished one
    other = replace(cfg, eval=replace(cfg.eval, snr_db=(0.0,)))
    assert other.digest() != cfg.digest()


def test_tampered_container_is_detected(finished_run, tmp_path):
    cfg, out, _ = finished_run
    import shutil
    copy = tmp_path / "copy"
    shutil.copytree(out, copy)
    blob = bytearray((copy / "dataset.ndtl").read_bytes())
    blob[-1] ^= 1
    (copy / "dataset.ndtl").write_bytes(bytes(blob))
    with pytest.raises(DataError):
        ex.load_dataset(copy)


def test_downsampling_switch_changes_cnn_input_dims(scene_file, tmp_path):
    extra = "[model.full]\nfamily = cnn\ndownsample = none\nepochs = 1\n"
    cfg = small_config(scene_file, extra)
    cfg = replace(cfg, data=replace(cfg.data, profile="full"))
    samples, m = ex.generate(cfg, tmp_path)
    few = samples[:4]
    pooled, _ = ex.train_one(cfg, replace(cfg.model("cnn"), train=replace(cfg.model("cnn").train, epochs=1)), few)
    full, _ = ex.train_one(cfg, cfg.model("full"), few)
    assert tuple(pooled.meta["input_dims"]) == (1, 32, 128)
    assert tuple(full.meta["input_dims"]) == (1, 128, 512)


def test_cli_exit_codes(scene_file, tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text(default_config_text().replace("epochs = 30", "epochs = lots"))
    assert main(["--config", str(bad), "--out", str(tmp_path / "o"), "generate"]) == 2
    assert "train.epochs" in capsys.readouterr().err
    assert main(["--config", str(tmp_path / "missing.ini"), "generate"]) == 2
    good = tmp_path / "good.ini"
    good.write_text(default_config_text())
    # training before generating is a data error
    assert main(["--config", str(good), "--out", str(tmp_path / "empty"), "train"]) == 3
    scene = tmp_path / "broken.json"
    scene.write_text("{not json")
    cfg_text = default_config_text().replace("source = toy", f"source = {scene}")
    (tmp_path / "broken.ini").write_text(cfg_text)
    assert main(["--config", str(tmp_path / "broken.ini"), "--out", str(tmp_path / "b"), "generate"]) in (2, 3)


def test_cli_flops(tmp_path, capsys):
    assert main(["--out", str(tmp_path), "flops"]) == 0
    out = capsys.readouterr().out
    assert "reduction vs 128x512: 93." in out
    assert (tmp_path / "flops_resnet34_reference_32x128.txt").exists()


def test_cli_step_by_step(scene_file, tmp_path, capsys):
    cfg_path = tmp_path / "c.ini"
    text = """[experiment]
schema_version = 1
[scene]
source = {}
[data]
test_fraction = 0.4
[classic]
svm_c = 1.0
svm_gamma = 0.5
rf_trees = 3
[eval]
snr_db = 0
roc_snr_db = 0
[model.rf]
family = rf
""".format(scene_file)
    cfg_path.write_text(text)
    base = ["--config", str(cfg_path), "--out", str(tmp_path / "w")]
    assert main(base + ["generate"]) == 0
    assert main(base + ["split", "--test-count", "5"]) == 0
    assert main(base + ["features", "--snr", "0", "--dump-adcpm", "1"]) == 0
    assert main(base + ["train"]) == 0
    assert main(base + ["sweep"]) == 0
    assert main(base + ["eval", "--snr", "5"]) == 0
    assert main(base + ["report"]) == 0
    assert main(base + ["train", "--model", "nope"]) == 2
    out = capsys.readouterr().out
    assert "split: 20 train / 5 test" in out and "model,family" in out
    res = tmp_path / "w" / "results"
    assert (res / "features_train.csv").exists() and (res / "adcpm_test0.csv").exists()
    assert (res / "features_test_+0dB.csv").exists() and (res / "roc_rf_+5dB.csv").exists()


def test_toy_city_end_to_end_timing(tmp_path):
    text = default_config_text().replace("test_fraction = 0.2", "test_fraction = 0.2\nmax_samples = 200")
    cfg = parse_config(text)
    start = time.perf_counter()
    res = ex.run_experiment(cfg, tmp_path)
    elapsed = time.perf_counter() - start
    assert res["n_samples"] == 200
    assert elapsed < 600
    aucs = {name: {r["snr_db"]: r["auc"] for r in rows} for name, rows in res["results"].items()}
    # a small model on 160 clean samples still separates the classes at high SNR
    assert aucs["resnet_aug"][15.0] > 0.8
