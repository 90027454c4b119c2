import json
import math
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from srkit import FormatError
from srkit.files import load_feature_stack, load_image, load_matrix
from srkit.report import dumps, loads, make_report, parse_number
from srkit.tensorfile import decode, encode, read_tensor, write_tensor

dtypes = st.sampled_from([np.dtype("<f4"), np.dtype("<f8"), np.dtype("<u2")])


@given(dtypes.flatmap(lambda dt: arrays(dt, array_shapes(min_dims=0, max_dims=4, max_side=5))))
def test_round_trip_bit_exact(arr):
    back = decode(encode(arr))
    assert back.dtype == arr.dtype and back.shape == arr.shape
    assert back.tobytes() == arr.tobytes()


def test_header_layout():
    buf = encode(np.arange(6, dtype="<u2").reshape(2, 3))
    assert buf[:4] == b"SRTN"
    assert struct.unpack_from("<BBB", buf, 4) == (1, 3, 2)
    assert struct.unpack_from("<2I", buf, 7) == (2, 3)
    assert len(buf) == 7 + 8 + 12


def test_big_endian_input_stored_little():
    arr = np.arange(4, dtype=">f8")
    back = decode(encode(arr))
    assert back.dtype == np.dtype("<f8")
    np.testing.assert_array_equal(back, arr)


@pytest.mark.parametrize("mutate", [
    lambda b: b"XXXX" + b[4:],
    lambda b: b[:4] + bytes([2]) + b[5:],
    lambda b: b[:5] + bytes([9]) + b[6:],
    lambda b: b[:-1],
    lambda b: b + b"\0",
    lambda b: b[:3],
])
def test_rejects_malformed(mutate):
    with pytest.raises(FormatError):
        decode(mutate(encode(np.zeros((2, 2)))))


def test_rejects_unstorable_dtype():
    with pytest.raises(FormatError):
        encode(np.zeros(3, dtype=np.int32))


def test_file_round_trip(tmp_path):
    arr = np.random.default_rng(0).random((3, 4, 2)).astype(np.float32)
    p = tmp_path / "a.srtn"
    write_tensor(p, arr)
    assert not (tmp_path / "a.srtn.part").exists()
    np.testing.assert_array_equal(read_tensor(p), arr)


# reports -----------------------------------------------------------------


def test_report_float_round_trip():
    vals = [0.1, 1 / 3, 1e-300, 2.0**-1074, 123456789.123456789, -0.0]
    back = loads(dumps({"v": vals}))["v"]
    for a, b in zip(vals, back):
        assert a == b and math.copysign(1, a) == math.copysign(1, b)


def test_report_non_finite_and_types():
    doc = dumps({"b": [math.inf, -math.inf, math.nan], "a": np.float32(0.5), "c": np.arange(2), "d": True})
    parsed = json.loads(doc)
    assert parsed["b"] == ["inf", "-inf", "nan"]
    assert [parse_number(v) for v in parsed["b"][:2]] == [math.inf, -math.inf]
    assert math.isnan(parse_number("nan"))
    assert parsed["c"] == [0, 1] and parsed["d"] is True
    assert doc.index('"a"') < doc.index('"b"')


def test_report_envelope():
    r = make_report("x", {"p": 1}, {"r": 2}, ["w"])
    assert set(r) == {"schema_version", "toolkit_version", "command", "parameters", "results", "warnings"}
    with pytest.raises(FormatError):
        loads("{not json")


# image loading -----------------------------------------------------------


def test_load_png_and_tiff(tmp_path):
    import cv2
    import tifffile

    rgb = np.zeros((4, 5, 3), np.uint8)
    rgb[..., 0] = 200
    cv2.imwrite(str(tmp_path / "a.png"), rgb[..., ::-1])
    img = load_image(tmp_path / "a.png")
    assert img.peak == 255 and img.data.shape == (4, 5, 3)
    assert np.all(img.data[..., 0] == 200) and np.all(img.data[..., 2] == 0)

    raw = (np.arange(4 * 5 * 4).reshape(4, 5, 4) * 10).astype(np.uint16)
    tifffile.imwrite(tmp_path / "a.tif", raw)
    t = load_image(tmp_path / "a.tif", bits=12)
    assert t.peak == 4095 and t.data.shape == (4, 5, 4)
    assert load_image(tmp_path / "a.tif").peak == 65535
    np.testing.assert_array_equal(t.data, raw)

    planar = np.moveaxis(raw, -1, 0).copy()
    tifffile.imwrite(tmp_path / "p.tif", planar, photometric="minisblack", planarconfig="separate")
    np.testing.assert_array_equal(load_image(tmp_path / "p.tif").data, raw)


def test_load_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_image(tmp_path / "missing.png")
    (tmp_path / "bad.png").write_bytes(b"not a png")
    with pytest.raises(FormatError):
        load_image(tmp_path / "bad.png")
    (tmp_path / "bad.srtn").write_bytes(b"junk")
    with pytest.raises(FormatError):
        load_image(tmp_path / "bad.srtn")


def test_feature_stack_dir(tmp_path):
    write_tensor(tmp_path / "layer_0.srtn", np.ones((2, 2, 3)))
    write_tensor(tmp_path / "layer_1.srtn", np.ones((1, 1, 4)))
    write_tensor(tmp_path / "weights_1.srtn", np.full(4, 0.5))
    fs = load_feature_stack(tmp_path)
    assert len(fs.layers) == 2
    np.testing.assert_array_equal(fs.weights[0], np.ones(3))
    np.testing.assert_array_equal(fs.weights[1], np.full(4, 0.5))


def test_feature_stack_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_feature_stack(tmp_path / "nowhere")
    with pytest.raises(FormatError):
        load_feature_stack(tmp_path)


def test_load_matrix_promotes_vector(tmp_path):
    write_tensor(tmp_path / "v.srtn", np.arange(5.0))
    assert load_matrix(tmp_path / "v.srtn").shape == (5, 1)
