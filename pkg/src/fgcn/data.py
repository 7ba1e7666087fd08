"""Skeleton sequences: file format, derived features, synthetic datasets.

A sequence is a ``(frames, bodies, joints, 3)`` coordinate array plus a
class label. The canonical text format is self-describing and exact: a
header line ``len M N C y id`` followed by ``len * M`` lines of ``3 * N``
floats written with full ``repr`` precision, frame-major then body-major.
``#`` starts a comment anywhere.

Derived features: bone vectors (child minus parent along the topology,
parent being the endpoint nearer the center joint), joint motion and bone
motion (forward frame differences, zero-padded at the final frame so every
stream keeps the sequence length). Streams stack these as channel groups.
"""

from __future__ import annotations

import os
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .graph import Topology

PAD_BODIES = 2

STREAMS = ("joints", "bones", "spatial", "joint-motion", "bone-motion", "motion")


@dataclass
class SkeletonSequence:
    """One labeled skeleton sequence with fixed-size body slots."""

    positions: np.ndarray  # (frames, bodies, joints, 3) float64
    label: int
    num_classes: int
    seq_id: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        if pos.ndim != 4 or pos.shape[3] != 3:
            raise DataError(f"positions must be (frames, bodies, joints, 3), got {pos.shape}")
        if pos.shape[0] < 1:
            raise DataError("sequence needs at least one frame")
        if not np.all(np.isfinite(pos)):
            raise DataError(f"sequence {self.seq_id!r} contains non-finite coordinates")
        if not 0 <= self.label < self.num_classes:
            raise DataError(
                f"label {self.label} out of range for {self.num_classes} classes")
        self.positions = pos

    @property
    def num_frames(self):
        return self.positions.shape[0]

    @property
    def num_bodies(self):
        return self.positions.shape[1]

    @property
    def num_joints(self):
        return self.positions.shape[2]

    def body_present(self):
        """Boolean mask over body slots; a slot with any nonzero value is present."""
        return np.any(self.positions != 0.0, axis=(0, 2, 3))


@dataclass
class Dataset:
    """A list of sequences sharing a class count and a split tag."""

    sequences: list
    num_classes: int
    split: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        ids = [s.seq_id for s in self.sequences]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate sequence ids in dataset")
        for s in self.sequences:
            if s.num_classes != self.num_classes:
                raise DataError(
                    f"sequence {s.seq_id!r} declares {s.num_classes} classes, "
                    f"dataset has {self.num_classes}")

    def __len__(self):
        return len(self.sequences)


# ---------------------------------------------------------------------------
# canonical text format


def _payload_lines(fh):
    """Yield (line_number, text) for non-comment, non-blank lines."""
    for lineno, raw in enumerate(fh, start=1):
        text = raw.split("#", 1)[0].strip()
        if text:
            yield lineno, text


def parse_header(fields, where):
    if len(fields) != 6:
        raise DataError(f"{where}: header needs 6 fields 'len M N C y id', got {len(fields)}")
    try:
        length, bodies, joints, classes, label = (int(f) for f in fields[:5])
    except ValueError:
        raise DataError(f"{where}: non-integer value in header")
    if length < 1:
        raise DataError(f"{where}: frame count must be >= 1, got {length}")
    if bodies < 1:
        raise DataError(f"{where}: body count must be >= 1, got {bodies}")
    if joints < 1:
        raise DataError(f"{where}: joint count must be >= 1, got {joints}")
    if classes < 1:
        raise DataError(f"{where}: class count must be >= 1, got {classes}")
    return length, bodies, joints, classes, label, fields[5]


def parse_sequence(source, pad_bodies=PAD_BODIES):
    """Read a canonical sequence file (path or open text stream).

    Body slots are padded with zeros up to ``pad_bodies`` when the file
    stores fewer.
    """
    if hasattr(source, "read"):
        return _parse_stream(source, getattr(source, "name", "<stream>"), pad_bodies)
    with open(source, "r", encoding="utf-8") as fh:
        return _parse_stream(fh, str(source), pad_bodies)


def _parse_stream(fh, name, pad_bodies):
    reader = SequenceReader(fh, pad_bodies)
    reader.name = name
    positions = np.stack(list(reader.frames()))
    for lineno, _ in reader._lines:
        raise DataError(f"{name}:{lineno}: more data lines than header declares")
    return SkeletonSequence(
        positions, reader.label, reader.num_classes, reader.seq_id,
        meta={"stored_bodies": reader.stored_bodies})


class SequenceReader:
    """Incremental reader for canonical sequence files.

    The header is parsed eagerly; frames are yielded one at a time so a
    consumer can act on a prefix of the sequence before the rest is read.
    """

    def __init__(self, source, pad_bodies=PAD_BODIES):
        if hasattr(source, "read"):
            self._fh = source
            self._owns = False
            self.name = getattr(source, "name", "<stream>")
        else:
            self._fh = open(source, "r", encoding="utf-8")
            self._owns = True
            self.name = str(source)
        self._lines = _payload_lines(self._fh)
        try:
            lineno, text = next(self._lines)
        except StopIteration:
            raise DataError(f"{self.name}: empty sequence file")
        (self.num_frames, self.stored_bodies, self.num_joints,
         self.num_classes, self.label, self.seq_id) = parse_header(
            text.split(), f"{self.name}:{lineno}")
        self.slots = max(self.stored_bodies, pad_bodies)

    def frames(self):
        """Yield (slots, joints, 3) arrays, one frame at a time."""
        expected = 3 * self.num_joints
        for t in range(self.num_frames):
            frame = np.zeros((self.slots, self.num_joints, 3), dtype=np.float64)
            for m in range(self.stored_bodies):
                try:
                    lineno, text = next(self._lines)
                except StopIteration:
                    raise DataError(
                        f"{self.name}: file ends at frame {t}, body {m}; "
                        f"header declares {self.num_frames} frames")
                fields = text.split()
                if len(fields) != expected:
                    raise DataError(
                        f"{self.name}:{lineno}: expected {expected} values, "
                        f"got {len(fields)}")
                try:
                    row = np.array([float(f) for f in fields], dtype=np.float64)
                except ValueError:
                    raise DataError(f"{self.name}:{lineno}: non-numeric value")
                frame[m] = row.reshape(self.num_joints, 3)
            yield frame

    def close(self):
        if self._owns:
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_sequence(path_or_stream, seq):
    """Write a sequence in canonical form.

    Trailing all-zero body slots are stripped (at least one slot is kept),
    so files written here re-read to the same array modulo zero padding, and
    writing a freshly parsed canonical file reproduces it byte for byte.
    """
    present = seq.body_present()
    bodies = seq.num_bodies
    while bodies > 1 and not present[bodies - 1]:
        bodies -= 1
    if hasattr(path_or_stream, "write"):
        _write_stream(path_or_stream, seq, bodies)
    else:
        with open(path_or_stream, "w", encoding="utf-8") as fh:
            _write_stream(fh, seq, bodies)


def _write_stream(fh, seq, bodies):
    seq_id = seq.seq_id
    if not seq_id or any(c.isspace() for c in seq_id) or "#" in seq_id:
        raise DataError(f"sequence id {seq_id!r} must be non-empty and free of spaces and '#'")
    fh.write(f"{seq.num_frames} {bodies} {seq.num_joints} "
             f"{seq.num_classes} {seq.label} {seq_id}\n")
    for t in range(seq.num_frames):
        for m in range(bodies):
            flat = seq.positions[t, m].reshape(-1)
            fh.write(" ".join(repr(float(v)) for v in flat))
            fh.write("\n")


def read_manifest(path):
    """Read a manifest (one sequence path per line, relative to the manifest)."""
    base = os.path.dirname(os.path.abspath(path))
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for _, text in _payload_lines(fh):
            out.append(text if os.path.isabs(text) else os.path.join(base, text))
    if not out:
        raise DataError(f"{path}: manifest lists no sequences")
    return out


def load_dataset(manifest_path, split, pad_bodies=PAD_BODIES):
    seqs = [parse_sequence(p, pad_bodies) for p in read_manifest(manifest_path)]
    classes = {s.num_classes for s in seqs}
    if len(classes) != 1:
        raise DataError(f"{manifest_path}: inconsistent class counts {sorted(classes)}")
    return Dataset(seqs, classes.pop(), split,
                   meta={"manifest": os.path.abspath(manifest_path)})


# ---------------------------------------------------------------------------
# derived features


def parent_map(topo):
    """Parent of each joint walking toward the center; the center (and any
    vertex unreachable from it) is its own parent."""
    n = topo.num_vertices
    parents = np.arange(n, dtype=np.int64)
    neighbors = [[] for _ in range(n)]
    for i, j in topo.edges:
        neighbors[i].append(j)
        neighbors[j].append(i)
    visited = np.zeros(n, dtype=bool)
    visited[topo.center] = True
    queue = deque([topo.center])
    while queue:
        v = queue.popleft()
        for w in neighbors[v]:
            if not visited[w]:
                visited[w] = True
                parents[w] = v
                queue.append(w)
    return parents


def compute_bones(positions, topo):
    """Bone vector at each joint: its position minus its parent's position.

    The center joint (no parent) gets a zero bone. Shape matches the input.
    """
    positions = np.asarray(positions)
    if positions.shape[-2] != topo.num_vertices:
        raise DataError(
            f"topology has {topo.num_vertices} joints, positions have {positions.shape[-2]}")
    parents = parent_map(topo)
    return positions - positions[..., parents, :]


def compute_motion(values):
    """Forward frame difference along axis 0, zero-padded at the last frame."""
    values = np.asarray(values)
    out = np.zeros_like(values)
    out[:-1] = values[1:] - values[:-1]
    return out


def stream_features(positions, topo, stream):
    """Stack the channel groups of one input stream.

    Input is ``(frames, bodies, joints, 3)``; output is
    ``(frames, bodies, joints, channels)`` with channels 3 for single-group
    streams and 6 for the combined "spatial" (joints + bones) and "motion"
    (joint motion + bone motion) streams.
    """
    if stream not in STREAMS:
        raise DataError(f"unknown stream {stream!r}, expected one of {STREAMS}")
    if stream == "joints":
        return np.array(positions)
    if stream == "bones":
        return compute_bones(positions, topo)
    if stream == "spatial":
        return np.concatenate([positions, compute_bones(positions, topo)], axis=-1)
    if stream == "joint-motion":
        return compute_motion(positions)
    if stream == "bone-motion":
        return compute_motion(compute_bones(positions, topo))
    return np.concatenate(
        [compute_motion(positions),
         compute_motion(compute_bones(positions, topo))], axis=-1)


def stream_channels(stream):
    return 6 if stream in ("spatial", "motion") else 3


def preprocess(seq, topo, center=False, normalize_scale=False):
    """Optionally translate and rescale a sequence; the label and shape never change.

    Centering subtracts, per present body, that body's first-frame center
    joint from all its frames. Scale normalization divides all present-body
    coordinates by the largest joint norm found after centering. Absent
    (all-zero) body slots stay zero, and applied steps are recorded in
    ``meta``.
    """
    positions = seq.positions.copy()
    present = seq.body_present()
    meta = dict(seq.meta)
    if center:
        for m in np.flatnonzero(present):
            positions[:, m] -= positions[0, m, topo.center]
        meta["centered"] = True
    if normalize_scale:
        radius = 0.0
        for m in np.flatnonzero(present):
            radius = max(radius, float(np.linalg.norm(positions[:, m], axis=-1).max()))
        if radius > 0.0:
            for m in np.flatnonzero(present):
                positions[:, m] /= radius
            meta["scale"] = radius
    return SkeletonSequence(positions, seq.label, seq.num_classes, seq.seq_id, meta)


# ---------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class SynthSpec:
    """Generator settings for the synthetic dataset.

    Each class is a motion primitive on the ``toy9`` skeleton (a torso with
    four two-joint limbs): one limb oscillates sinusoidally along a
    class-specific direction, and the whole pose carries a small
    class-specific static offset so even time-averaged coordinates separate
    the classes.
    """

    classes: int = 4
    train_per_class: int = 6
    test_per_class: int = 4
    frames: int = 40
    noise: float = 0.005
    topology_name: str = "toy9"

    def __post_init__(self):
        if self.classes < 2:
            raise DataError(f"synthetic dataset needs >= 2 classes, got {self.classes}")
        if self.frames < 2:
            raise DataError(f"synthetic dataset needs >= 2 frames, got {self.frames}")
        if self.noise < 0:
            raise DataError(f"noise level must be >= 0, got {self.noise}")
        if self.topology_name != "toy9":
            raise DataError(
                f"the generator only knows the 'toy9' skeleton, got {self.topology_name!r}")


# Rest pose of the toy9 skeleton: torso at the origin, limbs reaching out
# along distinct directions.
_TOY9_REST = np.array([
    [0.0, 0.0, 0.0],    # torso
    [0.5, 0.0, 0.1],    # limb A
    [1.0, 0.0, 0.2],
    [-0.5, 0.0, 0.1],   # limb B
    [-1.0, 0.0, 0.2],
    [0.0, 0.5, -0.1],   # limb C
    [0.0, 1.0, -0.2],
    [0.0, -0.5, -0.1],  # limb D
    [0.0, -1.0, -0.2],
])

_TOY9_LIMBS = ((1, 2), (3, 4), (5, 6), (7, 8))


# Movement direction per class.  The four limbs of the toy skeleton are
# interchangeable under a graph symmetry, so after average pooling a model
# cannot tell *which* limb moves; encoding the class in the movement
# *direction* keeps the classes separable in channel space.
_CLASS_DIRS = np.array([
    [0.0, 0.0, 1.0],
    [1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.577350269189626, 0.577350269189626, 0.577350269189626],
])


def _synth_sequence(spec, cls, index, split, seed):
    rng = np.random.default_rng([seed, 0 if split == "train" else 1, cls, index])
    limb = _TOY9_LIMBS[cls % len(_TOY9_LIMBS)]
    direction = _CLASS_DIRS[cls % len(_CLASS_DIRS)]
    freq = 2.0 + cls // len(_CLASS_DIRS)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    t = np.arange(spec.frames, dtype=np.float64)
    wave = 0.6 * np.sin(2.0 * np.pi * freq * t / spec.frames + phase)

    positions = np.tile(_TOY9_REST, (spec.frames, 1, 1))
    for depth, joint in enumerate(limb, start=1):
        positions[:, joint] += depth * wave[:, None] * direction
    # static class signature on the torso so raw coordinates already separate
    positions[:, 0, 0] += 0.2 * cls
    positions += rng.normal(0.0, spec.noise, size=positions.shape)
    positions = positions[:, None]  # single body
    return SkeletonSequence(
        positions, cls, spec.classes, f"{split}-c{cls}-{index:03d}",
        meta={"split": split})


def synth_dataset(spec, seed, split):
    """Deterministically generate one split of the synthetic dataset."""
    if split not in ("train", "test"):
        raise DataError(f"split must be 'train' or 'test', got {split!r}")
    per_class = spec.train_per_class if split == "train" else spec.test_per_class
    seqs = [_synth_sequence(spec, cls, i, split, seed)
            for cls in range(spec.classes) for i in range(per_class)]
    return Dataset(seqs, spec.classes, split, meta={"seed": seed})


def synth_to_dir(spec, seed, out_dir):
    """Write both splits in canonical form plus per-split manifests."""
    os.makedirs(out_dir, exist_ok=True)
    manifests = {}
    for split in ("train", "test"):
        ds = synth_dataset(spec, seed, split)
        names = []
        for seq in ds.sequences:
            name = f"{seq.seq_id}.seq"
            write_sequence(os.path.join(out_dir, name), seq)
            names.append(name)
        manifest = os.path.join(out_dir, f"{split}.manifest")
        with open(manifest, "w", encoding="utf-8") as fh:
            fh.write("\n".join(names) + "\n")
        manifests[split] = manifest
    return manifests


def nearest_centroid_accuracy(train, test):
    """Accuracy of a nearest-centroid classifier on flattened raw coordinates.

    All sequences must share (frames, bodies, joints) dimensions. This is
    the separability baseline run before any network training.
    """
    shapes = {s.positions.shape for s in train.sequences + test.sequences}
    if len(shapes) != 1:
        raise DataError(f"nearest-centroid baseline needs uniform shapes, got {shapes}")
    centroids = {}
    for cls in range(train.num_classes):
        members = [s.positions.reshape(-1) for s in train.sequences if s.label == cls]
        if members:
            centroids[cls] = np.mean(members, axis=0)
    hits = 0
    for s in test.sequences:
        flat = s.positions.reshape(-1)
        pred = min(centroids, key=lambda c: float(np.linalg.norm(flat - centroids[c])))
        hits += int(pred == s.label)
    return hits / len(test.sequences)
