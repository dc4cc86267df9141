"""Checkpoint file format: parsing, validation, canonical round-trips."""

from __future__ import annotations

import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from revla.tensor_store import (
    Checkpoint,
    CheckpointFormatError,
    Selector,
    load_checkpoint,
    save_checkpoint,
    select,
    serialize_checkpoint,
    validate_compat,
)

DTYPE_TAGS = {"f4": "F32", "f8": "F64"}


def build_file_bytes(entries, metadata=None, header_override=None) -> bytes:
    """Assemble a checkpoint file by hand, independent of the library writer.

    ``entries`` is a list of (name, numpy array) laid out in order; pass
    ``header_override`` to craft malformed headers.
    """
    if header_override is None:
        header: dict = {}
        if metadata is not None:
            header["__metadata__"] = metadata
        offset = 0
        for name, arr in entries:
            end = offset + arr.nbytes
            header[name] = {
                "dtype": DTYPE_TAGS[arr.dtype.str[1:]],
                "shape": list(arr.shape),
                "data_offsets": [offset, end],
            }
            offset = end
        blob = json.dumps(header, separators=(",", ":"), ensure_ascii=False).encode()
    else:
        blob = header_override
    blob += b" " * (-len(blob) % 8)
    data = b"".join(arr.tobytes() for _, arr in entries)
    return struct.pack("<Q", len(blob)) + blob + data


def write_file(tmp_path, raw: bytes, name="ckpt.safetensors"):
    path = tmp_path / name
    path.write_bytes(raw)
    return path


def test_load_hand_built_single_tensor(tmp_path):
    arr = np.array([1.0, 2.0], dtype=np.float32)
    path = write_file(tmp_path, build_file_bytes([("w", arr)]))
    ckpt = load_checkpoint(path)
    assert ckpt.names() == ["w"]
    assert ckpt["w"].dtype == np.float32
    np.testing.assert_array_equal(ckpt["w"], arr)


def test_round_trip_reproduces_canonical_bytes(tmp_path):
    entries = [
        ("llm.w", np.arange(6, dtype=np.float64).reshape(2, 3)),
        ("vision.dino.w", np.array([0.5, -0.5], dtype=np.float32)),
    ]
    raw = build_file_bytes(entries)  # already in lexicographic order
    path = write_file(tmp_path, raw)
    ckpt = load_checkpoint(path)
    assert serialize_checkpoint(ckpt) == raw
    out = tmp_path / "resaved.safetensors"
    save_checkpoint(ckpt, out)
    assert out.read_bytes() == raw


def test_non_canonical_order_is_canonicalized(tmp_path):
    a = np.ones(3, dtype=np.float32)
    b = np.zeros(2, dtype=np.float64)
    raw = build_file_bytes([("z.w", a), ("a.w", b)])  # reversed name order
    ckpt = load_checkpoint(write_file(tmp_path, raw))
    assert ckpt.names() == ["a.w", "z.w"]
    canonical = serialize_checkpoint(ckpt)
    assert canonical != raw
    # canonicalization is a fixed point
    reloaded = load_checkpoint(write_file(tmp_path, canonical, "canon.safetensors"))
    assert serialize_checkpoint(reloaded) == canonical
    assert reloaded == ckpt


def test_empty_tensor_list(tmp_path):
    path = write_file(tmp_path, build_file_bytes([]))
    ckpt = load_checkpoint(path)
    assert len(ckpt) == 0
    assert serialize_checkpoint(ckpt) == build_file_bytes([])


def test_metadata_round_trip(tmp_path):
    arr = np.ones(1, dtype=np.float64)
    raw = build_file_bytes([("w", arr)], metadata={"source": "unit-test"})
    ckpt = load_checkpoint(write_file(tmp_path, raw))
    assert ckpt.metadata == {"source": "unit-test"}
    assert serialize_checkpoint(ckpt) == raw


def test_zero_size_and_scalar_tensors(tmp_path):
    entries = [
        ("empty", np.zeros((0, 4), dtype=np.float32)),
        ("scalar", np.array(3.5, dtype=np.float64)),
    ]
    ckpt = load_checkpoint(write_file(tmp_path, build_file_bytes(entries)))
    assert ckpt["empty"].shape == (0, 4)
    assert ckpt["scalar"].shape == ()
    assert float(ckpt["scalar"]) == 3.5


def test_out_of_bounds_data_rejected(tmp_path):
    arr = np.ones(4, dtype=np.float32)
    raw = build_file_bytes([("w", arr)])
    truncated = raw[:-8]  # drop half the data section
    with pytest.raises(CheckpointFormatError, match="out-of-bounds data"):
        load_checkpoint(write_file(tmp_path, truncated))


def test_header_length_beyond_file_rejected(tmp_path):
    raw = struct.pack("<Q", 1 << 30) + b"{}"
    with pytest.raises(CheckpointFormatError, match="malformed header length"):
        load_checkpoint(write_file(tmp_path, raw))


def test_file_shorter_than_length_field_rejected(tmp_path):
    with pytest.raises(CheckpointFormatError, match="malformed header length"):
        load_checkpoint(write_file(tmp_path, b"\x02\x00"))


def test_header_not_json_rejected(tmp_path):
    raw = build_file_bytes([], header_override=b"not json")
    with pytest.raises(CheckpointFormatError, match="not valid JSON"):
        load_checkpoint(write_file(tmp_path, raw))


def test_overlapping_ranges_rejected(tmp_path):
    header = {
        "a": {"dtype": "F32", "shape": [2], "data_offsets": [0, 8]},
        "b": {"dtype": "F32", "shape": [2], "data_offsets": [4, 12]},
    }
    raw = build_file_bytes(
        [("pad", np.zeros(3, dtype=np.float32))],
        header_override=json.dumps(header, separators=(",", ":")).encode(),
    )
    with pytest.raises(CheckpointFormatError, match="overlaps"):
        load_checkpoint(write_file(tmp_path, raw))


def test_non_ascending_ranges_rejected(tmp_path):
    header = {
        "a": {"dtype": "F32", "shape": [1], "data_offsets": [4, 8]},
        "b": {"dtype": "F32", "shape": [1], "data_offsets": [0, 4]},
    }
    raw = build_file_bytes(
        [("pad", np.zeros(2, dtype=np.float32))],
        header_override=json.dumps(header, separators=(",", ":")).encode(),
    )
    with pytest.raises(CheckpointFormatError, match="ascending"):
        load_checkpoint(write_file(tmp_path, raw))


def test_duplicate_names_rejected(tmp_path):
    dup = b'{"w":{"dtype":"F32","shape":[1],"data_offsets":[0,4]},"w":{"dtype":"F32","shape":[1],"data_offsets":[4,8]}}'
    raw = build_file_bytes([("pad", np.zeros(2, dtype=np.float32))], header_override=dup)
    with pytest.raises(CheckpointFormatError, match="duplicate names"):
        load_checkpoint(write_file(tmp_path, raw))


def test_unknown_dtype_rejected(tmp_path):
    header = {"w": {"dtype": "BF16", "shape": [2], "data_offsets": [0, 4]}}
    raw = build_file_bytes(
        [("pad", np.zeros(1, dtype=np.float32))],
        header_override=json.dumps(header, separators=(",", ":")).encode(),
    )
    with pytest.raises(CheckpointFormatError, match="unknown dtype"):
        load_checkpoint(write_file(tmp_path, raw))


def test_byte_range_inconsistent_with_shape_rejected(tmp_path):
    header = {"w": {"dtype": "F32", "shape": [3], "data_offsets": [0, 8]}}
    raw = build_file_bytes(
        [("pad", np.zeros(2, dtype=np.float32))],
        header_override=json.dumps(header, separators=(",", ":")).encode(),
    )
    with pytest.raises(CheckpointFormatError, match="does not match"):
        load_checkpoint(write_file(tmp_path, raw))


def test_negative_shape_rejected(tmp_path):
    header = {"w": {"dtype": "F32", "shape": [-1], "data_offsets": [0, 4]}}
    raw = build_file_bytes(
        [("pad", np.zeros(1, dtype=np.float32))],
        header_override=json.dumps(header, separators=(",", ":")).encode(),
    )
    with pytest.raises(CheckpointFormatError, match="invalid shape"):
        load_checkpoint(write_file(tmp_path, raw))


def test_save_is_deterministic(tmp_path):
    ckpt = Checkpoint({
        "a": np.random.default_rng(0).standard_normal(5),
        "b": np.ones((2, 2), dtype=np.float32),
    })
    p1, p2 = tmp_path / "one.st", tmp_path / "two.st"
    save_checkpoint(ckpt, p1)
    save_checkpoint(ckpt, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_checkpoint_rejects_unsupported_dtype():
    with pytest.raises(CheckpointFormatError, match="unsupported dtype"):
        Checkpoint({"w": np.zeros(2, dtype=np.int32)})
    with pytest.raises(CheckpointFormatError, match="unsupported dtype"):
        Checkpoint({"w": np.zeros(2, dtype=np.float16)})


def test_checkpoint_rejects_bad_names():
    with pytest.raises(CheckpointFormatError):
        Checkpoint({"": np.zeros(1)})
    with pytest.raises(CheckpointFormatError, match="reserved"):
        Checkpoint({"__metadata__": np.zeros(1)})


def test_checkpoint_buffers_are_read_only():
    ckpt = Checkpoint({"w": np.zeros(3)})
    with pytest.raises(ValueError):
        ckpt["w"][0] = 1.0


_names = st.lists(
    st.from_regex(r"[a-c](\.[a-c0-9]{1,3}){0,2}", fullmatch=True),
    min_size=0, max_size=4, unique=True,
)


@st.composite
def checkpoints(draw):
    tensors = {}
    for name in draw(_names):
        dtype = draw(st.sampled_from([np.float32, np.float64]))
        shape = tuple(draw(st.lists(st.integers(0, 3), min_size=0, max_size=2)))
        seed = draw(st.integers(0, 2**31))
        tensors[name] = np.random.default_rng(seed).standard_normal(shape).astype(dtype)
    return Checkpoint(tensors)


@settings(max_examples=50, deadline=None)
@given(checkpoints())
def test_save_load_round_trip_property(tmp_path_factory, ckpt):
    path = tmp_path_factory.mktemp("rt") / "c.safetensors"
    save_checkpoint(ckpt, path)
    loaded = load_checkpoint(path)
    assert loaded == ckpt
    assert serialize_checkpoint(loaded) == path.read_bytes()


def test_third_party_file_round_trips_byte_identically(tmp_path):
    # uniform dtype: the third-party writer's layout coincides with the
    # canonical one, so load -> save reproduces the file bit for bit
    safetensors_numpy = pytest.importorskip("safetensors.numpy")
    tensors = {
        "vision.siglip.w": np.linspace(-1, 1, 12, dtype=np.float32).reshape(3, 4),
        "vision.dino.w": np.random.default_rng(5).standard_normal(7).astype(np.float32),
        "llm.bias": np.zeros(3, dtype=np.float32),
    }
    path = tmp_path / "third_party.safetensors"
    safetensors_numpy.save_file(tensors, str(path), metadata={"producer": "safetensors"})
    raw = path.read_bytes()
    ckpt = load_checkpoint(path)
    assert ckpt.names() == sorted(tensors)
    for name, arr in tensors.items():
        np.testing.assert_array_equal(ckpt[name], arr)
    assert serialize_checkpoint(ckpt) == raw


def test_third_party_mixed_dtype_file_is_byte_stable(tmp_path):
    # the third-party writer groups f64 tensors ahead of f32; one canonical
    # re-save re-orders by name and is a fixed point from then on
    safetensors_numpy = pytest.importorskip("safetensors.numpy")
    tensors = {
        "b.w": np.random.default_rng(6).standard_normal(4),
        "a.w": np.ones(2, dtype=np.float32),
    }
    path = tmp_path / "third_party.safetensors"
    safetensors_numpy.save_file(tensors, str(path))
    ckpt = load_checkpoint(path)
    for name, arr in tensors.items():
        np.testing.assert_array_equal(ckpt[name], arr)
    canonical = serialize_checkpoint(ckpt)
    stable = tmp_path / "canonical.safetensors"
    stable.write_bytes(canonical)
    reloaded = load_checkpoint(stable)
    assert reloaded == ckpt
    assert serialize_checkpoint(reloaded) == canonical


# --- selectors ---------------------------------------------------------------

NAMES = ["vision.dino.w", "vision.siglip.w", "llm.w"]


def test_selector_prefix_pattern():
    sel = Selector(["vision.dino.*"])
    assert select(NAMES, sel) == ["vision.dino.w"]


def test_selector_union_of_patterns():
    sel = Selector(["vision.dino.*", "vision.siglip.*"])
    assert select(NAMES, sel) == ["vision.dino.w", "vision.siglip.w"]


def test_selector_empty_selects_nothing():
    assert select(NAMES, Selector([])) == []


def test_selector_star_crosses_segments():
    sel = Selector(["vision.*"])
    names = ["vision.dino.layer0.weight", "vision.x", "audio.w"]
    assert select(names, sel) == ["vision.dino.layer0.weight", "vision.x"]


def test_selector_literal_pattern_matches_exactly():
    sel = Selector(["llm.w"])
    assert select(NAMES, sel) == ["llm.w"]


def test_selector_rejects_empty_pattern():
    with pytest.raises(ValueError, match="malformed selector pattern"):
        Selector([""])


def test_select_on_checkpoint_is_ordered():
    ckpt = Checkpoint({name: np.zeros(1) for name in NAMES})
    assert select(ckpt, Selector(["*"])) == sorted(NAMES)


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.sampled_from(NAMES + ["vision.dino.layer1.w", "head.b"]), unique=True),
    st.lists(st.sampled_from(["vision.*", "vision.dino.*", "llm.*", "*", "head.b"]), max_size=3),
    st.sampled_from(["vision.siglip.*", "*", "llm.w"]),
)
def test_selector_monotonicity(names, patterns, extra):
    base = set(select(names, Selector(patterns)))
    widened = set(select(names, Selector(patterns + [extra])))
    assert base <= widened


# --- compatibility reports ----------------------------------------------------


def test_compat_identical_is_empty():
    a = Checkpoint({"x": np.zeros(3), "y": np.ones((2, 2), dtype=np.float32)})
    b = Checkpoint({"x": np.ones(3), "y": np.zeros((2, 2), dtype=np.float32)})
    report = validate_compat(a, b)
    assert report.is_empty
    assert not report


def test_compat_missing_name():
    a = Checkpoint({"head.weight": np.zeros(2), "head.bias": np.zeros(2)})
    b = Checkpoint({"head.weight": np.zeros(2)})
    report = validate_compat(a, b)
    assert report.missing_in_b == ("head.bias",)
    assert report.missing_in_a == ()
    assert "head.bias" in report.describe()


def test_compat_shape_mismatch():
    a = Checkpoint({"w": np.zeros(3)})
    b = Checkpoint({"w": np.zeros(4)})
    report = validate_compat(a, b)
    assert report.shape_mismatches == (("w", (3,), (4,)),)


def test_compat_dtype_mismatch():
    a = Checkpoint({"w": np.zeros(3, dtype=np.float32)})
    b = Checkpoint({"w": np.zeros(3, dtype=np.float64)})
    report = validate_compat(a, b)
    assert report.dtype_mismatches == (("w", "F32", "F64"),)


@settings(max_examples=25, deadline=None)
@given(checkpoints())
def test_compat_with_self_is_always_empty(ckpt):
    assert validate_compat(ckpt, ckpt).is_empty
