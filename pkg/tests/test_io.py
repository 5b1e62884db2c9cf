import struct

import numpy as np
import pytest

from osrlie.cloud import Label, PointCloud
from osrlie.errors import FormatError, ParseError, SchemaError, UnsupportedFormat
from osrlie.io import read_cloud, read_csv, read_las, write_csv


def _write(tmp_path, text, name="c.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_minimal_csv(tmp_path):
    c = read_csv(_write(tmp_path, "x,y,z\n1,2,3\n"))
    assert c.n == 1 and c.xyz.tolist() == [[1, 2, 3]]
    assert c.intensity is None and c.truth is None


def test_truth_tokens(tmp_path):
    c = read_csv(_write(tmp_path, "x,y,z,truth\n0,0,0,ground\n1,1,1,tree\n2,2,2,human\n"))
    assert c.truth.tolist() == [Label.GROUND, Label.TREE, Label.HUMAN_MADE]


def test_missing_required_column(tmp_path):
    with pytest.raises(SchemaError):
        read_csv(_write(tmp_path, "x,y\n1,2\n"))


def test_unparseable_cell_reports_row(tmp_path):
    with pytest.raises(ParseError) as err:
        read_csv(_write(tmp_path, "x,y,z\n1,2,3\n1,two,3\n"))
    assert err.value.row == 3


@pytest.mark.parametrize("cell", ["nan", "inf", "-inf"])
def test_nonfinite_cell(tmp_path, cell):
    with pytest.raises(ParseError):
        read_csv(_write(tmp_path, f"x,y,z\n1,2,{cell}\n"))


def test_unknown_column_warns(tmp_path, caplog):
    c = read_csv(_write(tmp_path, "x,y,z,return_number\n1,2,3,1\n"))
    assert c.n == 1
    assert "return_number" in caplog.text


def test_header_without_optionals(tmp_path):
    p = tmp_path / "o.csv"
    write_csv(PointCloud([[1, 2, 3]], intensity=[4.0]), p, include=())
    assert p.read_text().splitlines()[0] == "x,y,z"


def test_requesting_absent_column(tmp_path):
    with pytest.raises(SchemaError):
        write_csv(PointCloud([[1, 2, 3]]), tmp_path / "o.csv", include=("intensity",))


def test_class_vocabulary(tmp_path):
    p = tmp_path / "o.csv"
    c = PointCloud(np.zeros((5, 3)), predicted=[0, 1, 2, 3, 4])
    write_csv(c, p)
    rows = p.read_text().splitlines()
    assert rows[0] == "x,y,z,class"
    assert [r.split(",")[-1] for r in rows[1:]] == ["ground", "tree", "human", "human_1", "human_2"]


def test_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(1)
    n = 200
    v = rng.normal(size=n) * 1e3
    v[::7] = np.nan
    c = PointCloud(rng.normal(size=(n, 3)) * 10.0 ** rng.integers(-8, 8, size=(n, 1)),
                   intensity=rng.uniform(0, 1e4, n), truth=rng.integers(0, 3, n),
                   ground=rng.integers(0, 2, n).astype(bool), v=v, predicted=rng.integers(0, 5, n))
    p = tmp_path / "rt.csv"
    write_csv(c, p)
    back = read_csv(p)
    assert back.xyz.tobytes() == c.xyz.tobytes()
    assert back.intensity.tobytes() == c.intensity.tobytes()
    assert np.array_equal(np.isnan(back.v), np.isnan(c.v))
    assert np.array_equal(back.v[~np.isnan(v)], c.v[~np.isnan(v)])
    for col in ("truth", "ground", "predicted"):
        assert np.array_equal(getattr(back, col), getattr(c, col))
    p2 = tmp_path / "rt2.csv"
    write_csv(back, p2)
    assert p.read_bytes() == p2.read_bytes()


# LAS -------------------------------------------------------------------------


def make_las(raw, scale, offset, fmt=0, version=(1, 2), count=None, signature=b"LASF",
             intensity=None, record_length=None):
    """Bytes of a minimal LAS file with integer coordinates ``raw`` (k, 3)."""
    rec_len = {0: 20, 1: 28, 6: 30}[fmt] if record_length is None else record_length
    raw = np.asarray(raw, dtype=np.int32)
    k = len(raw)
    header_size = 375 if version[1] >= 4 else 227
    mins = raw.min(axis=0) * np.asarray(scale) + offset
    maxs = raw.max(axis=0) * np.asarray(scale) + offset
    hdr = struct.pack(
        "<4sHH16sBB32s32sHHHIIBHI5I6d6d",
        signature, 0, 0, b"\0" * 16, version[0], version[1], b"synthetic".ljust(32, b"\0"),
        b"test".ljust(32, b"\0"), 1, 2024, header_size, header_size, 0, fmt, rec_len,
        (k if count is None else count) if fmt != 6 else 0, 0, 0, 0, 0, 0,
        *scale, *offset, maxs[0], mins[0], maxs[1], mins[1], maxs[2], mins[2])
    if header_size > len(hdr):
        extra = bytearray(header_size - len(hdr))
        # waveform start (8), first EVLR (8), EVLR count (4), then 64-bit point count
        struct.pack_into("<Q", extra, 247 - len(hdr), k if count is None else count)
        hdr += bytes(extra)
    body = bytearray()
    for i, (x, y, z) in enumerate(raw):
        rec = bytearray(rec_len)
        struct.pack_into("<iiiH", rec, 0, int(x), int(y), int(z), 0 if intensity is None else intensity[i])
        body += rec
    return hdr + bytes(body)


def test_las_scale_offset(tmp_path):
    p = tmp_path / "a.las"
    p.write_bytes(make_las([[12345, 0, 0]], (0.01, 0.01, 0.01), (100.0, 0.0, 0.0)))
    c = read_las(p)
    assert c.x[0] == pytest.approx(223.45, abs=1e-12)


@pytest.mark.parametrize("fmt,version", [(0, (1, 2)), (1, (1, 3)), (6, (1, 4))])
def test_las_formats(tmp_path, fmt, version):
    raw = [[1, 2, 3], [-4, 5, 6], [7, -8, 9]]
    p = tmp_path / "f.las"
    p.write_bytes(make_las(raw, (0.5, 0.25, 0.125), (10.0, 20.0, 30.0), fmt=fmt, version=version,
                           intensity=[7, 8, 9]))
    c = read_cloud(p)
    expect = np.asarray(raw) * np.array([0.5, 0.25, 0.125]) + np.array([10.0, 20.0, 30.0])
    assert np.array_equal(c.xyz, expect)
    assert c.intensity.tolist() == [7, 8, 9]
    assert c.truth is None


def test_las_bad_signature(tmp_path):
    p = tmp_path / "b.las"
    p.write_bytes(make_las([[0, 0, 0]], (1, 1, 1), (0, 0, 0), signature=b"LASX"))
    with pytest.raises(FormatError):
        read_las(p)


def test_las_truncated_records(tmp_path):
    data = make_las(np.zeros((10, 3)), (1, 1, 1), (0, 0, 0))
    p = tmp_path / "t.las"
    p.write_bytes(data[:-20])  # nine of ten records
    with pytest.raises(FormatError, match="9"):
        read_las(p)


def test_las_unsupported_format(tmp_path):
    p = tmp_path / "u.las"
    data = bytearray(make_las([[0, 0, 0]], (1, 1, 1), (0, 0, 0)))
    data[104] = 3  # point data format id
    p.write_bytes(bytes(data))
    with pytest.raises(UnsupportedFormat):
        read_las(p)


def test_las_record_length_mismatch(tmp_path):
    p = tmp_path / "m.las"
    p.write_bytes(make_las([[0, 0, 0]], (1, 1, 1), (0, 0, 0), record_length=24))
    with pytest.raises(FormatError):
        read_las(p)


def test_las_nonpositive_scale(tmp_path):
    p = tmp_path / "s.las"
    p.write_bytes(make_las([[0, 0, 0]], (0.0, 1, 1), (0, 0, 0)))
    with pytest.raises(FormatError):
        read_las(p)


def test_las_deterministic(tmp_path):
    p = tmp_path / "d.las"
    p.write_bytes(make_las(np.arange(30).reshape(10, 3), (0.01, 0.01, 0.01), (1.5, 2.5, 3.5)))
    assert read_las(p).xyz.tobytes() == read_las(p).xyz.tobytes()
