"""Unit tests for sequence files, derived features, and the synthetic set.

File-format cases check exact bytes and exact line numbers in error
messages; feature derivations are compared against brute-force loops over
frames and joints.
"""

import io
import os

import numpy as np
import pytest

from fgcn.data import (PAD_BODIES, STREAMS, Dataset, SequenceReader,
                       SkeletonSequence, SynthSpec, compute_bones,
                       compute_motion, load_dataset, nearest_centroid_accuracy,
                       parent_map, parse_sequence, preprocess, read_manifest,
                       stream_channels, stream_features, synth_dataset,
                       synth_to_dir, write_sequence)
from fgcn.errors import DataError
from fgcn.graph import Topology, named_topology


def make_seq(rng, frames=4, bodies=1, joints=3, classes=5, label=2, seq_id="s0"):
    pos = rng.normal(size=(frames, bodies, joints, 3))
    return SkeletonSequence(pos, label, classes, seq_id)


# ---------------------------------------------------------------------------
# sequence objects


def test_sequence_validation():
    rng = np.random.default_rng(0)
    make_seq(rng)
    with pytest.raises(DataError):
        SkeletonSequence(np.zeros((2, 1, 3, 2)), 0, 2, "x")  # last axis not 3
    with pytest.raises(DataError):
        SkeletonSequence(np.zeros((0, 1, 3, 3)), 0, 2, "x")  # no frames
    with pytest.raises(DataError):
        SkeletonSequence(np.full((2, 1, 3, 3), np.nan), 0, 2, "x")
    with pytest.raises(DataError):
        SkeletonSequence(np.zeros((2, 1, 3, 3)), 2, 2, "x")  # label == classes


def test_body_present_mask():
    pos = np.zeros((3, 2, 4, 3))
    pos[1, 0, 2, 1] = 0.5  # only slot 0 has any signal
    seq = SkeletonSequence(pos, 0, 2, "x")
    np.testing.assert_array_equal(seq.body_present(), [True, False])


def test_dataset_rejects_duplicates_and_class_mismatch():
    rng = np.random.default_rng(1)
    a = make_seq(rng, seq_id="a")
    b = make_seq(rng, seq_id="a")
    with pytest.raises(DataError):
        Dataset([a, b], 5, "train")
    c = make_seq(rng, classes=7, label=0, seq_id="c")
    with pytest.raises(DataError):
        Dataset([a, c], 5, "train")


# ---------------------------------------------------------------------------
# canonical file format


def test_write_parse_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(2)
    seq = make_seq(rng, frames=3, bodies=2, joints=4, classes=6, label=5, seq_id="rt-1")
    path = tmp_path / "rt.seq"
    write_sequence(path, seq)
    back = parse_sequence(path)
    # repr round-trip: every coordinate comes back bit for bit
    np.testing.assert_array_equal(back.positions, seq.positions)
    assert (back.label, back.num_classes, back.seq_id) == (5, 6, "rt-1")

    # writing what was parsed reproduces the file byte for byte
    second = tmp_path / "rt2.seq"
    write_sequence(second, back)
    assert path.read_bytes() == second.read_bytes()


def test_write_strips_trailing_zero_bodies(tmp_path):
    pos = np.zeros((2, 2, 3, 3))
    pos[:, 0] = 1.0  # slot 1 stays empty
    seq = SkeletonSequence(pos, 0, 2, "one-body")
    path = tmp_path / "one.seq"
    write_sequence(path, seq)
    header = path.read_text().splitlines()[0].split()
    assert header[1] == "1"  # only one body stored
    back = parse_sequence(path)
    assert back.num_bodies == PAD_BODIES  # padded back up on read
    np.testing.assert_array_equal(back.positions, pos)


def test_write_keeps_interior_zero_body(tmp_path):
    pos = np.zeros((2, 2, 3, 3))
    pos[:, 1] = 1.0  # slot 0 empty but interior, must be stored
    seq = SkeletonSequence(pos, 0, 2, "gap")
    path = tmp_path / "gap.seq"
    write_sequence(path, seq)
    assert path.read_text().splitlines()[0].split()[1] == "2"
    np.testing.assert_array_equal(parse_sequence(path).positions, pos)


def test_write_rejects_bad_ids():
    seq = SkeletonSequence(np.ones((1, 1, 2, 3)), 0, 2, "ok")
    for bad in ("", "two words", "has#hash"):
        seq.seq_id = bad
        with pytest.raises(DataError):
            write_sequence(io.StringIO(), seq)


def test_parse_comments_and_blank_lines():
    text = (
        "# a canonical sequence\n"
        "\n"
        "2 1 2 3 1 commented   # trailing comment on the header\n"
        "0.0 0.0 0.0 1.0 0.0 0.0\n"
        "\n"
        "0.5 0.0 0.0 1.5 0.0 0.0  # frame two\n")
    seq = parse_sequence(io.StringIO(text))
    assert seq.num_frames == 2 and seq.seq_id == "commented"
    assert seq.positions[1, 0, 1, 0] == 1.5


def test_parse_error_line_numbers():
    # the bad payload line is physical line 4 (comment + blank + header first)
    text = "# c\n\n2 1 2 3 1 x\n0.0 0.0 0.0 1.0 0.0 oops\n"
    with pytest.raises(DataError, match=":4:"):
        parse_sequence(io.StringIO(text))

    text = "2 1 2 3 1 x\n0.0 0.0 0.0 1.0\n"
    with pytest.raises(DataError, match=":2: expected 6 values, got 4"):
        parse_sequence(io.StringIO(text))

    with pytest.raises(DataError, match="header needs 6 fields"):
        parse_sequence(io.StringIO("2 1 2\n"))

    with pytest.raises(DataError, match="empty sequence file"):
        parse_sequence(io.StringIO("# nothing here\n"))

    with pytest.raises(DataError, match="ends at frame 1"):
        parse_sequence(io.StringIO("2 1 1 2 0 short\n0.0 0.0 0.0\n"))

    with pytest.raises(DataError, match="more data lines"):
        parse_sequence(io.StringIO(
            "1 1 1 2 0 long\n0.0 0.0 0.0\n1.0 1.0 1.0\n"))

    with pytest.raises(DataError, match="label 3 out of range"):
        parse_sequence(io.StringIO("1 1 1 3 3 badlabel\n0.0 0.0 0.0\n"))


def test_sequence_reader_is_incremental():
    text = "3 1 1 2 0 inc\n1.0 0.0 0.0\n2.0 0.0 0.0\n3.0 0.0 0.0\n"
    reader = SequenceReader(io.StringIO(text))
    assert reader.num_frames == 3  # header available before any frame
    gen = reader.frames()
    first = next(gen)
    assert first.shape == (PAD_BODIES, 1, 3)  # padded to the slot count
    np.testing.assert_array_equal(first[0], [[1.0, 0.0, 0.0]])
    rest = list(gen)
    assert len(rest) == 2
    np.testing.assert_array_equal(rest[1][0], [[3.0, 0.0, 0.0]])


def test_manifest_resolution_and_loading(tmp_path):
    rng = np.random.default_rng(3)
    sub = tmp_path / "data"
    sub.mkdir()
    names = []
    for i in range(3):
        seq = make_seq(rng, classes=3, label=i, seq_id=f"m{i}")
        write_sequence(sub / f"m{i}.seq", seq)
        names.append(f"m{i}.seq")
    manifest = sub / "train.manifest"
    manifest.write_text("# three sequences\n" + "\n".join(names) + "\n")

    paths = read_manifest(manifest)
    assert all(os.path.isabs(p) for p in paths)
    ds = load_dataset(manifest, "train")
    assert len(ds) == 3 and ds.num_classes == 3
    assert [s.seq_id for s in ds.sequences] == ["m0", "m1", "m2"]

    (sub / "empty.manifest").write_text("# nothing\n")
    with pytest.raises(DataError, match="no sequences"):
        read_manifest(sub / "empty.manifest")


# ---------------------------------------------------------------------------
# derived features


def test_parent_map_hand_cases():
    path3 = named_topology("path3")  # 0-1-2 centered on 1
    np.testing.assert_array_equal(parent_map(path3), [1, 1, 1])
    toy9 = named_topology("toy9")  # torso 0 with limbs (1,2),(3,4),(5,6),(7,8)
    np.testing.assert_array_equal(parent_map(toy9), [0, 0, 1, 0, 3, 0, 5, 0, 7])
    disconnected = Topology(3, ((0, 1),), 0)
    np.testing.assert_array_equal(parent_map(disconnected), [0, 0, 2])


def test_bones_match_loop_oracle():
    rng = np.random.default_rng(4)
    topo = named_topology("toy9")
    pos = rng.normal(size=(5, 2, 9, 3))
    bones = compute_bones(pos, topo)
    parents = parent_map(topo)
    for t in range(5):
        for m in range(2):
            for j in range(9):
                np.testing.assert_array_equal(
                    bones[t, m, j], pos[t, m, j] - pos[t, m, parents[j]])
    # the center joint is its own parent: zero bone
    assert np.all(bones[:, :, topo.center] == 0.0)
    with pytest.raises(DataError):
        compute_bones(pos[:, :, :5], topo)


def test_motion_is_forward_difference_zero_padded():
    x = np.array([[1.0], [4.0], [9.0], [16.0]])
    out = compute_motion(x)
    np.testing.assert_array_equal(out, [[3.0], [5.0], [7.0], [0.0]])


def test_stream_features_shapes_and_composition():
    rng = np.random.default_rng(5)
    topo = named_topology("toy9")
    pos = rng.normal(size=(6, 2, 9, 3))
    for stream in STREAMS:
        feats = stream_features(pos, topo, stream)
        assert feats.shape == (6, 2, 9, stream_channels(stream))
    # combined streams stack their parts in a fixed channel order
    sp = stream_features(pos, topo, "spatial")
    np.testing.assert_array_equal(sp[..., :3], pos)
    np.testing.assert_array_equal(sp[..., 3:], compute_bones(pos, topo))
    mo = stream_features(pos, topo, "motion")
    np.testing.assert_array_equal(mo[..., :3], compute_motion(pos))
    np.testing.assert_array_equal(mo[..., 3:], compute_motion(compute_bones(pos, topo)))
    with pytest.raises(DataError):
        stream_features(pos, topo, "velocity")


def test_preprocess_centering_and_scale():
    rng = np.random.default_rng(6)
    topo = named_topology("toy9")
    pos = rng.normal(size=(4, 2, 9, 3)) + 5.0
    pos[:, 1] = 0.0  # absent slot must stay untouched
    seq = SkeletonSequence(pos, 0, 2, "pp")

    centered = preprocess(seq, topo, center=True)
    np.testing.assert_array_equal(centered.positions[0, 0, topo.center], np.zeros(3))
    np.testing.assert_array_equal(centered.positions[:, 1], np.zeros((4, 9, 3)))
    assert centered.meta.get("centered") is True
    # centering is a rigid translation by the first-frame center joint
    np.testing.assert_allclose(
        centered.positions[:, 0], pos[:, 0] - pos[0, 0, topo.center], atol=0)

    scaled = preprocess(seq, topo, center=True, normalize_scale=True)
    radius = np.linalg.norm(scaled.positions[:, 0], axis=-1).max()
    np.testing.assert_allclose(radius, 1.0, atol=1e-12)
    assert scaled.meta["scale"] > 0

    untouched = preprocess(seq, topo)
    np.testing.assert_array_equal(untouched.positions, pos)


# ---------------------------------------------------------------------------
# synthetic dataset


def test_synth_is_deterministic_and_split_disjoint():
    spec = SynthSpec()
    a = synth_dataset(spec, 9, "train")
    b = synth_dataset(spec, 9, "train")
    for s, t in zip(a.sequences, b.sequences):
        np.testing.assert_array_equal(s.positions, t.positions)
        assert s.seq_id == t.seq_id

    test = synth_dataset(spec, 9, "test")
    assert len(a) == spec.classes * spec.train_per_class
    assert len(test) == spec.classes * spec.test_per_class
    assert not {s.seq_id for s in a.sequences} & {s.seq_id for s in test.sequences}
    # different seed, different coordinates
    other = synth_dataset(spec, 10, "train")
    assert not np.array_equal(a.sequences[0].positions, other.sequences[0].positions)
    with pytest.raises(DataError):
        synth_dataset(spec, 9, "validation")


def test_synth_spec_validation():
    with pytest.raises(DataError):
        SynthSpec(classes=1)
    with pytest.raises(DataError):
        SynthSpec(frames=1)
    with pytest.raises(DataError):
        SynthSpec(noise=-0.1)
    with pytest.raises(DataError):
        SynthSpec(topology_name="ntu25")


def test_synth_classes_cover_labels():
    ds = synth_dataset(SynthSpec(classes=3), 0, "train")
    assert sorted({s.label for s in ds.sequences}) == [0, 1, 2]
    # the generator emits a single body; padding happens downstream
    assert all(s.num_bodies == 1 for s in ds.sequences)
    np.testing.assert_array_equal(ds.sequences[0].body_present(), [True])


def test_synth_to_dir_round_trip(tmp_path):
    spec = SynthSpec(train_per_class=2, test_per_class=1)
    manifests = synth_to_dir(spec, 4, tmp_path)
    for split in ("train", "test"):
        ds = load_dataset(manifests[split], split)
        direct = synth_dataset(spec, 4, split)
        assert len(ds) == len(direct)
        for loaded, made in zip(ds.sequences, direct.sequences):
            assert loaded.seq_id == made.seq_id
            # files re-read padded to the standard slot count
            np.testing.assert_array_equal(
                loaded.positions[:, :made.num_bodies], made.positions)
            assert np.all(loaded.positions[:, made.num_bodies:] == 0.0)


def test_nearest_centroid_beats_chance_on_synth():
    spec = SynthSpec()
    for seed in (1, 2, 3):
        train = synth_dataset(spec, seed, "train")
        test = synth_dataset(spec, seed, "test")
        acc = nearest_centroid_accuracy(train, test)
        assert acc > 1.0 / spec.classes
