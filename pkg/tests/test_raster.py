import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from dtvit.raster import RasterError, read_dtr, read_pgm, read_raster, write_dtr, write_pgm

shapes = st.tuples(st.integers(1, 9), st.integers(1, 9))


@settings(max_examples=30, deadline=None)
@given(hnp.arrays(np.int16, shapes))
def test_dtr_and_p16_round_trip(tmp_path_factory, scan):
    d = tmp_path_factory.mktemp("r")
    write_dtr(d / "a.dtr", scan)
    write_pgm(d / "a.pgm", scan)
    assert np.array_equal(read_raster(d / "a.dtr"), scan)
    back = read_raster(d / "a.pgm")
    assert back.dtype == np.int16 and np.array_equal(back, scan)


@settings(max_examples=30, deadline=None)
@given(hnp.arrays(np.uint8, shapes))
def test_p8_round_trip(tmp_path_factory, img):
    p = tmp_path_factory.mktemp("r") / "a.pgm"
    write_pgm(p, img)
    assert np.array_equal(read_pgm(p), img)


def test_byte_layouts(tmp_path):
    write_dtr(tmp_path / "a.dtr", np.array([[1, -2]], np.int16))
    assert (tmp_path / "a.dtr").read_bytes() == b"DTR1" + b"\x01\0\0\0\x02\0\0\0" + b"\x01\x00\xfe\xff"
    write_pgm(tmp_path / "b.pgm", np.array([[-32768, 0, 1]], np.int16))
    raw = (tmp_path / "b.pgm").read_bytes()
    assert raw == b"P5\n3 1\n65535\n" + b"\x00\x00\x80\x00\x80\x01"


def test_header_comments_accepted(tmp_path):
    p = tmp_path / "c.pgm"
    p.write_bytes(b"P5\n# hi\n2 1\n255\n\x07\x08")
    assert read_pgm(p).tolist() == [[7, 8]]


def test_bad_files(tmp_path):
    p = tmp_path / "x"
    p.write_bytes(b"DTR1\x02\0\0\0\x02\0\0\0\0\0")
    with pytest.raises(RasterError, match="payload"):
        read_dtr(p)
    p.write_bytes(b"GIF89a")
    with pytest.raises(RasterError, match="unrecognized"):
        read_raster(p)
    p.write_bytes(b"P5\n2 2\n1023\n" + b"\0" * 8)
    with pytest.raises(RasterError, match="maxval"):
        read_pgm(p)
    with pytest.raises(RasterError):
        write_pgm(p, np.zeros((2, 2), np.float32))
