import math

import numpy as np
import pytest

from app.collocation import ForcedLinearField
from app.continuation import BifurcationEvent
from app.errors import ContractViolation
from app.fold import FoldCurve, FoldPoint
from app.fourier import FourierMap
from app.torus_io import (
    fmt,
    orbit_dump_rows,
    read_csv,
    read_event_orbits,
    read_fourier,
    read_json,
    read_orbit,
    write_csv,
    write_event_orbits,
    write_fold_curve,
    write_fourier,
    write_orbit_dump,
    write_orbits,
    write_residual_scan,
)

LINEAR = ForcedLinearField(omega=1.0, decay=1.0)


def test_fmt():
    assert fmt(True) == "1"
    assert fmt(np.int64(7)) == "7"
    assert float(fmt(math.pi)) == math.pi
    assert fmt("SN") == "SN"


def test_csv_with_comments(tmp_path):
    path = write_csv(tmp_path / "out" / "table.csv", ["a", "b"], [[1, 0.5], [2, math.pi]], comments=["note"])
    assert path.read_text().startswith("# note\na,b\n")
    rows = read_csv(path)
    assert [row["a"] for row in rows] == ["1", "2"]
    assert float(rows[1]["b"]) == math.pi


def test_no_temporary_files_left(tmp_path):
    write_csv(tmp_path / "table.csv", ["a"], [[1]])
    write_csv(tmp_path / "table.csv", ["a"], [[2]])
    assert [p.name for p in tmp_path.iterdir()] == ["table.csv"]
    assert read_csv(tmp_path / "table.csv") == [{"a": "2"}]


def test_read_json_missing(tmp_path):
    with pytest.raises(ContractViolation):
        read_json(tmp_path / "absent.json")


def test_residual_scan_ratios(tmp_path):
    rows = read_csv(write_residual_scan(tmp_path / "scan.csv", [0.1, 0.05, 0.025], [4e-4, 1e-4, 2.5e-5]))
    assert math.isnan(float(rows[0]["ratio"]))
    assert float(rows[1]["ratio"]) == pytest.approx(0.25)
    assert float(rows[2]["ratio"]) == pytest.approx(0.25)


def test_fourier_file(tmp_path):
    fmap = FourierMap.from_terms({(1, 0): [0.5 + 0.25j, 0.0], (-1, 0): [0.5 - 0.25j, 0.0]}, 2, 2)
    restored = read_fourier(write_fourier(tmp_path / "f1.json", fmap, "f1"))
    assert read_json(tmp_path / "f1.json")["name"] == "f1"
    points = np.array([[0.3, 1.2], [2.0, -0.7]])
    np.testing.assert_allclose(restored(points), fmap(points))


def test_orbit_archive(tmp_path):
    orbits = [LINEAR.exact_orbit(lam, 6, 3) for lam in (0.1, 0.2, 0.3)]
    path = write_orbits(tmp_path / "orbits.npz", orbits)
    second = read_orbit(path, 1)
    np.testing.assert_allclose(second.states, orbits[1].states)
    assert second.lam == pytest.approx(0.2)
    assert second.period == pytest.approx(2.0 * np.pi)
    assert second.windings.tolist() == [1, 0]
    with pytest.raises(ContractViolation):
        read_orbit(path, 3)
    with pytest.raises(ContractViolation):
        write_orbits(tmp_path / "empty.npz", [])


def test_event_archive(tmp_path):
    orbit = LINEAR.exact_orbit(0.25, 5, 2)
    tangent = np.linspace(0.0, 1.0, orbit.unknowns().size)
    events = [
        BifurcationEvent("BP", 0.25, (3, 4), 1e-6, orbit, tangent=tangent),
        BifurcationEvent("HOM", 0.25, (7, 8), 1e-6, orbit),
    ]
    restored = read_event_orbits(write_event_orbits(tmp_path / "events.npz", events))
    assert [event.kind for event in restored] == ["BP", "HOM"]
    assert restored[0].bracket == (3, 4)
    assert restored[0].lam == pytest.approx(0.25)
    np.testing.assert_allclose(restored[0].tangent, tangent)
    assert restored[1].tangent is None
    np.testing.assert_allclose(restored[1].orbit.states, orbit.states)


def test_orbit_dump_rows():
    orbit = LINEAR.exact_orbit(0.2, 4, 2)
    header, rows, comments = orbit_dump_rows(orbit)
    assert header == ["t", "theta0", "theta1", "theta2", "dev0", "dev1", "dev2"]
    assert len(rows) == orbit.node_count
    assert "windings=1 0" in comments
    values = np.array(rows)
    assert np.all(values[:, 4:] >= 0.0)
    assert np.all(values[:, 4:] <= np.pi + 1e-12)
    np.testing.assert_allclose(values[:, 1], 0.0)


def test_orbit_dump_resampled(tmp_path):
    path = write_orbit_dump(tmp_path / "dump.csv", LINEAR.exact_orbit(0.2, 8, 3), samples=11)
    rows = read_csv(path)
    assert len(rows) == 11
    assert float(rows[-1]["t"]) == pytest.approx(1.0)


def test_fold_curve_file(tmp_path):
    orbit = LINEAR.exact_orbit(0.1, 3, 2)
    curve = FoldCurve(status="completed")
    for index, (r, delta) in enumerate([(0.01, 0.1), (0.005, 0.05), (0.002, 0.02)]):
        curve.points.append(FoldPoint(index, r, delta, orbit, np.zeros(4)))
    curve.cusps.append((0.005, 0.05))
    rows = read_csv(write_fold_curve(tmp_path / "fold.csv", curve))
    assert [row["note"] for row in rows] == ["", "cusp", "completed"]
    assert float(rows[0]["period"]) == pytest.approx(2.0 * np.pi)
