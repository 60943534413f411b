"""Dataset generation from the scene, binary container I/O and train/test splits.

Container layout (little-endian)::

    magic b"NDTL", version u16, sample count u32
    per sample: position 3 x f64
                path count u32, then 5 x f64 per path (gain, delay, azimuth, elevation, bounces)
                channel rows u32, cols u32, then rows*cols interleaved (re, im) f32, row-major
                label u8
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..channel import ArrayConfig, ChannelMatrix, OfdmConfig, max_delay_ok, synth_cfr
from ..errors import DataError, InvalidInputError
from ..geometry import MultipathSet, Scene, scene_hash, trace_paths, ue_grid

log = logging.getLogger(__name__)

MAGIC = b"NDTL"
FORMAT_VERSION = 1
MANIFEST_VERSION = 1
WORKERS_ENV = "NDTLOS_WORKERS"


@dataclass
class Sample:
    ue_position: tuple[float, float, float]
    paths: MultipathSet
    channel: ChannelMatrix
    label: int


# ---------------------------------------------------------------- container


def encode_sample(s: Sample) -> bytes:
    rows = s.paths.as_array()
    H = s.channel.data
    parts = [struct.pack("<3d", *s.ue_position), struct.pack("<I", rows.shape[0]),
             rows.astype("<f8").tobytes(), struct.pack("<2I", *H.shape)]
    inter = np.empty((H.shape[0], H.shape[1], 2), dtype="<f4")
    inter[..., 0] = H.real
    inter[..., 1] = H.imag
    parts.append(inter.tobytes())
    parts.append(struct.pack("<B", int(s.label)))
    return b"".join(parts)


def write_container(path, samples) -> str:
    """Write samples in index order; returns the sha256 of the file."""
    samples = list(samples)
    h = hashlib.sha256()
    with open(path, "wb") as fh:
        head = MAGIC + struct.pack("<HI", FORMAT_VERSION, len(samples))
        fh.write(head)
        h.update(head)
        for s in samples:
            blob = encode_sample(s)
            fh.write(blob)
            h.update(blob)
    return h.hexdigest()


def read_container(path) -> list[Sample]:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read dataset {path}: {exc}") from exc
    if blob[:4] != MAGIC:
        raise DataError(f"{path}: not a dataset container (bad magic)")
    try:
        version, count = struct.unpack_from("<HI", blob, 4)
        if version != FORMAT_VERSION:
            raise DataError(f"{path}: unsupported container version {version}")
        pos = 10
        out = []
        for _ in range(count):
            position = struct.unpack_from("<3d", blob, pos)
            (n_paths,) = struct.unpack_from("<I", blob, pos + 24)
            pos += 28
            rows = np.frombuffer(blob, dtype="<f8", count=5 * n_paths, offset=pos).reshape(n_paths, 5)
            pos += 40 * n_paths
            r, c = struct.unpack_from("<2I", blob, pos)
            pos += 8
            raw = np.frombuffer(blob, dtype="<f4", count=2 * r * c, offset=pos).reshape(r, c, 2)
            pos += 8 * r * c
            (label,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            H = raw[..., 0].astype(float) + 1j * raw[..., 1].astype(float)
            paths = MultipathSet.from_array(rows, bool(label), position)
            out.append(Sample(tuple(position), paths, ChannelMatrix(H), int(label)))
    except (struct.error, ValueError) as exc:
        raise DataError(f"{path}: truncated or corrupt container ({exc})") from exc
    if pos != len(blob):
        raise DataError(f"{path}: {len(blob) - pos} trailing bytes")
    return out


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------- manifest


@dataclass
class DatasetManifest:
    scene_hash: str
    ofdm: dict
    array: dict
    n_samples: int
    n_los: int
    master_seed: int
    cell_size: float
    ue_height: float
    n_grid: int = 0
    n_outage: int = 0
    n_cp_rejected: int = 0
    container_sha256: str = ""
    split: list = field(default_factory=list)  # "train"/"test" per sample, empty before split
    split_seed: int | None = None
    format_version: int = MANIFEST_VERSION

    @property
    def los_fraction(self) -> float:
        return self.n_los / self.n_samples if self.n_samples else float("nan")

    def indices(self, part: str) -> np.ndarray:
        if not self.split:
            raise DataError("dataset has not been split")
        return np.array([i for i, s in enumerate(self.split) if s == part], dtype=int)


def save_manifest(m: DatasetManifest, path) -> None:
    doc = asdict(m)
    doc["los_fraction"] = m.los_fraction
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def load_manifest(path) -> DatasetManifest:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    doc.pop("los_fraction", None)
    if doc.get("format_version") != MANIFEST_VERSION:
        raise DataError(f"unsupported manifest version {doc.get('format_version')!r}")
    try:
        return DatasetManifest(**doc)
    except TypeError as exc:
        raise DataError(f"malformed manifest: {exc}") from exc


# ---------------------------------------------------------------- generation


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise InvalidInputError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    return max(1, n)


def _trace_chunk(args):
    scene, points, fc = args
    return [trace_paths(scene, p, scene.bs_position, fc) for p in points]


def _trace_all(scene, points, fc, workers):
    if workers <= 1 or len(points) < 2 * workers:
        return _trace_chunk((scene, points, fc))
    chunks = np.array_split(np.arange(len(points)), workers)
    jobs = [(scene, [points[i] for i in c], fc) for c in chunks]
    with ProcessPoolExecutor(workers) as ex:
        parts = list(ex.map(_trace_chunk, jobs))
    return [mp for part in parts for mp in part]


def generate_dataset(scene: Scene, array: ArrayConfig, ofdm: OfdmConfig, seed: int = 0,
                     cell_size: float = 2.0, ue_height: float = 1.5,
                     max_samples: int | None = None, workers: int | None = None):
    """Trace every grid UE and synthesize its true channel.

    Outage positions and paths exceeding the cyclic prefix are dropped and
    counted.  With ``max_samples`` a seeded subset (kept in grid order) is
    retained.  Returns (samples, manifest).
    """
    workers = worker_count() if workers is None else workers
    points = ue_grid(scene, cell_size, ue_height)
    traced = _trace_all(scene, points, ofdm.fc, workers)
    n_outage = n_cp = 0
    keep = []
    for p, mp in zip(points, traced):
        if not mp.paths:
            n_outage += 1
        elif not max_delay_ok(mp, ofdm):
            n_cp += 1
        else:
            keep.append((p, mp))
    if n_outage:
        log.info("excluded %d outage positions", n_outage)
    if n_cp:
        log.warning("rejected %d positions with delays beyond the cyclic prefix", n_cp)
    if max_samples is not None and len(keep) > max_samples:
        sel = np.sort(np.random.default_rng([seed, 0]).choice(len(keep), max_samples, replace=False))
        keep = [keep[i] for i in sel]
    samples = []
    for p, mp in keep:
        # round to the stored precision so in-memory and re-read datasets agree
        H = synth_cfr(mp, array, ofdm).data.astype(np.complex64).astype(complex)
        samples.append(Sample(tuple(p), mp, ChannelMatrix(H), int(mp.is_los)))
    manifest = DatasetManifest(
        scene_hash=scene_hash(scene), ofdm=asdict(ofdm), array=asdict(array),
        n_samples=len(samples), n_los=sum(s.label for s in samples), master_seed=int(seed),
        cell_size=float(cell_size), ue_height=float(ue_height), n_grid=len(points),
        n_outage=n_outage, n_cp_rejected=n_cp,
    )
    return samples, manifest


def split(manifest: DatasetManifest, test_count: int | None = None, test_fraction: float | None = None,
          seed: int = 0, stratify: bool = False, labels=None) -> DatasetManifest:
    """Uniform random train/test assignment (optionally stratified by label)."""
    n = manifest.n_samples
    if test_count is None:
        if test_fraction is None or not 0 < test_fraction < 1:
            raise InvalidInputError("give test_count or a test_fraction in (0, 1)")
        test_count = int(round(test_fraction * n))
    if not 0 < test_count < n:
        raise InvalidInputError(f"cannot hold out {test_count} of {n} samples")
    rng = np.random.default_rng([seed, 5])
    if stratify:
        if labels is None:
            raise InvalidInputError("stratified split needs the labels")
        labels = np.asarray(labels).astype(int)
        pos = np.flatnonzero(labels == 1)
        neg = np.flatnonzero(labels == 0)
        n_pos = int(round(test_count * pos.size / n))
        n_pos = min(max(n_pos, 0), pos.size)
        n_neg = test_count - n_pos
        if n_neg > neg.size:
            raise InvalidInputError("not enough negatives for the stratified split")
        test = np.concatenate([rng.choice(pos, n_pos, replace=False), rng.choice(neg, n_neg, replace=False)])
    else:
        test = rng.choice(n, test_count, replace=False)
    assign = ["train"] * n
    for i in test:
        assign[int(i)] = "test"
    out = DatasetManifest(**asdict(manifest))
    out.split = assign
    out.split_seed = int(seed)
    return out
