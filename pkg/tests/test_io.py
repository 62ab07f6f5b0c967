import locale
import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st

from paraxial_tr.core import TransverseGrid
from paraxial_tr.io import (HEADER, read_dump, read_points, write_field, write_field_csv, write_report,
                            write_rows, write_screen)
from paraxial_tr.montecarlo import ComparisonReport

G = TransverseGrid(16, 4.0)


def test_header_is_32_little_endian_bytes(tmp_path):
    write_screen(tmp_path / "s.bin", np.zeros((16, 16)), G, 0.25)
    raw = (tmp_path / "s.bin").read_bytes()
    assert HEADER.size == 32
    assert len(raw) == 32 + 16 * 16 * 8
    magic, n, extent, dz = struct.unpack("<8sQdd", raw[:32])
    assert (magic, n, extent, dz) == (b"PTRSCRN1", 16, 4.0, 0.25)


@given(st.integers(0, 2**32 - 1))
def test_field_round_trip(seed):
    import tempfile
    from pathlib import Path
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((16, 16)) + 1j * rng.standard_normal((16, 16))
    with tempfile.TemporaryDirectory() as d:
        write_field(Path(d) / "f.bin", u, G, 0.5)
        back, g, dz = read_dump(Path(d) / "f.bin")
    assert np.array_equal(back, u) and g == G and dz == 0.5


def test_screen_round_trip(tmp_path, rng):
    s = rng.standard_normal((16, 16))
    write_screen(tmp_path / "s.bin", s, G, 0.1)
    back, _, _ = read_dump(tmp_path / "s.bin")
    assert back.dtype == np.float64 and np.array_equal(back, s)


def test_bad_magic_and_truncation(tmp_path):
    (tmp_path / "x.bin").write_bytes(HEADER.pack(b"NOTMAGIC", 16, 4.0, 0.0))
    with pytest.raises(ValueError):
        read_dump(tmp_path / "x.bin")
    write_screen(tmp_path / "s.bin", np.zeros((16, 16)), G, 0.1)
    (tmp_path / "t.bin").write_bytes((tmp_path / "s.bin").read_bytes()[:-8])
    with pytest.raises(ValueError):
        read_dump(tmp_path / "t.bin")


def test_csv_uses_dot_decimals(tmp_path, monkeypatch):
    for name in ("de_DE.UTF-8", "fr_FR.UTF-8"):
        try:
            locale.setlocale(locale.LC_NUMERIC, name)
            break
        except locale.Error:
            continue
    try:
        write_rows(tmp_path / "r.csv", ["a", "b"], [(0.5, np.float64(1.25)), ("x", 3)])
    finally:
        locale.setlocale(locale.LC_NUMERIC, "C")
    assert (tmp_path / "r.csv").read_text() == "a,b\n0.5,1.25\nx,3\n"


def test_field_csv_cross_sections(tmp_path):
    u = np.arange(256, dtype=complex).reshape(16, 16)
    write_field_csv(tmp_path / "f.csv", u, G)
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert lines[0] == "x1,x2,re,im,abs2"
    assert len(lines) == 1 + 2 * 16
    x1, x2, re, im, a2 = map(float, lines[1].split(","))
    assert (x1, x2, re) == (-2.0, 0.0, 8.0)


def test_report_csv(tmp_path):
    rep = ComparisonReport()
    rep.add("q", 1.0, 1.0, 0.1, 0.2)
    rep.metric("m", 0.5, 0.9, False)
    write_report(tmp_path / "r.csv", rep)
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "quantity,mc_value,prediction,rel_err,z_score,pass"
    assert lines[1].endswith(",true") and lines[2].endswith(",false")


def test_points_file(tmp_path):
    p = tmp_path / "p.csv"
    p.write_text("# square\nb1,b2,weight\n1,2,0.5\n-1, 0\n")
    pts, w = read_points(p)
    assert pts.tolist() == [[1.0, 2.0], [-1.0, 0.0]]
    assert w.tolist() == [0.5, 1.0]


@pytest.mark.parametrize("text", ["", "# nothing\n", "1,2,3,4\n", "1,2\nfoo,bar\n"])
def test_points_file_errors(tmp_path, text):
    p = tmp_path / "p.csv"
    p.write_text(text)
    with pytest.raises(ValueError):
        read_points(p)
