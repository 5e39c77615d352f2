"""CSV / JSON / npz writers for frames, normal forms, branches, fold curves and orbit dumps.

Every file is written to a temporary sibling first and moved into place, so
concurrent branch runs never leave half-written outputs.
"""
import csv
import io
import json
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from app.collocation import OrbitSegment, interpolate
from app.continuation import Branch, BifurcationEvent, lift_phase_differences
from app.errors import ContractViolation
from app.fold import FoldCurve
from app.fourier import FourierMap
from app.network import wrap


def fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.17g}"
    return str(value)


def atomic_write_bytes(path: Path, data: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with tempfile.NamedTemporaryFile(dir=path.parent, prefix=f".{path.name}.", delete=False) as handle:
        handle.write(data)
        temp = handle.name
    os.replace(temp, path)
    return path


def atomic_write_text(path: Path, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path: Path, payload) -> Path:
    return atomic_write_text(path, json.dumps(payload, indent=2) + "\n")


def read_json(path: Path):
    path = Path(path)
    if not path.exists():
        raise ContractViolation(f"{path} does not exist")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ContractViolation(f"{path} is not valid JSON: {exc}") from exc


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence], comments: Sequence[str] = ()) -> Path:
    buffer = io.StringIO()
    for line in comments:
        buffer.write(f"# {line}\n")
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(value) for value in row])
    return atomic_write_text(path, buffer.getvalue())


def read_csv(path: Path) -> list[dict[str, str]]:
    lines = [line for line in Path(path).read_text().splitlines() if not line.startswith("#")]
    return list(csv.DictReader(lines))


def fourier_payload(fmap: FourierMap, label: str) -> dict:
    return {
        "name": label,
        "dim_domain": fmap.dim_domain,
        "dim_range": fmap.dim_range,
        "terms": fmap.to_json_entries(),
    }


def write_fourier(path: Path, fmap: FourierMap, label: str) -> Path:
    return write_json(path, fourier_payload(fmap, label))


def read_fourier(path: Path) -> FourierMap:
    payload = read_json(path)
    return FourierMap.from_json_entries(payload["terms"], payload["dim_domain"], payload["dim_range"])


def _event_marks(branch: Branch) -> dict[int, str]:
    marks: dict[int, str] = {}
    for event in branch.events:
        index = event.bracket[1]
        marks[index] = f"{marks[index]}+{event.kind}" if index in marks else event.kind
    return marks


def branch_header(dim: int) -> list[str]:
    multipliers = [f"mu{i}_{part}" for i in range(1, dim + 1) for part in ("re", "im")]
    return ["step", "delta", "r", "period", "measure_psi", *multipliers, "trivial_error", "stable", "event"]


def branch_rows(branch: Branch) -> list[list]:
    marks = _event_marks(branch)
    rows = []
    for point in branch.points:
        mu = point.spectrum.multipliers
        parts = [value for m in mu for value in (float(m.real), float(m.imag))]
        rows.append([
            point.index,
            branch.vf.delta_at(point.lam),
            branch.vf.r_at(point.lam),
            point.period,
            point.measure,
            *parts,
            point.spectrum.trivial_error,
            point.stable,
            marks.get(point.index, ""),
        ])
    return rows


def write_branch(directory: Path, name: str, branch: Branch) -> dict[str, Path]:
    """Branch CSV, event JSON and the orbits of every point and event (npz)."""
    directory = Path(directory)
    dim = branch.points[0].orbit.dim if branch.points else branch.vf.dim
    paths = {
        "csv": write_csv(directory / f"{name}.csv", branch_header(dim), branch_rows(branch)),
        "orbits": write_orbits(directory / f"{name}_orbits.npz", [point.orbit for point in branch.points]),
    }
    event_orbits = directory / f"{name}_events.npz"
    write_event_orbits(event_orbits, branch.events)
    paths["event_orbits"] = event_orbits
    paths["events"] = write_json(directory / f"{name}_events.json", {
        "pattern": branch.pattern.word,
        "label": branch.label,
        "free": branch.free,
        "status": branch.status,
        "direction": branch.direction,
        "orbit_file": event_orbits.name,
        "events": [event.as_dict() for event in branch.events],
    })
    return paths


def _npz_bytes(**arrays) -> bytes:
    buffer = io.BytesIO()
    np.savez_compressed(buffer, **arrays)
    return buffer.getvalue()


def write_orbits(path: Path, orbits: Sequence[OrbitSegment]) -> Path:
    if not orbits:
        raise ContractViolation("no orbits to store")
    first = orbits[0]
    return atomic_write_bytes(path, _npz_bytes(
        mesh=first.mesh,
        ncol=np.array(first.ncol),
        windings=first.windings,
        states=np.stack([orbit.states for orbit in orbits]),
        periods=np.array([orbit.period for orbit in orbits]),
        lambdas=np.array([orbit.lam for orbit in orbits]),
    ))


def read_orbit(path: Path, index: int) -> OrbitSegment:
    path = Path(path)
    if not path.exists():
        raise ContractViolation(f"{path} does not exist")
    with np.load(path) as data:
        count = data["states"].shape[0]
        if not 0 <= index < count:
            raise ContractViolation(f"point {index} not in {path} ({count} stored)")
        return OrbitSegment(
            data["mesh"], int(data["ncol"]), data["states"][index], float(data["periods"][index]),
            data["windings"], float(data["lambdas"][index]),
        )


def write_event_orbits(path: Path, events: Sequence[BifurcationEvent]) -> Path:
    arrays = {}
    for i, event in enumerate(events):
        arrays[f"x{i}"] = event.orbit.unknowns()
        arrays[f"tangent{i}"] = np.zeros(0) if event.tangent is None else event.tangent
        arrays[f"mesh{i}"] = event.orbit.mesh
        arrays[f"windings{i}"] = event.orbit.windings
        arrays[f"ncol{i}"] = np.array(event.orbit.ncol)
        arrays[f"kind{i}"] = np.array(event.kind)
        arrays[f"bracket{i}"] = np.array(event.bracket)
        arrays[f"tol{i}"] = np.array(event.localization_tol)
    arrays["count"] = np.array(len(events))
    return atomic_write_bytes(path, _npz_bytes(**arrays))


def read_event_orbits(path: Path) -> list[BifurcationEvent]:
    path = Path(path)
    if not path.exists():
        raise ContractViolation(f"{path} does not exist")
    events = []
    with np.load(path) as data:
        for i in range(int(data["count"])):
            x = data[f"x{i}"]
            dim = data[f"windings{i}"].size
            mesh = data[f"mesh{i}"]
            template = OrbitSegment(
                mesh, int(data[f"ncol{i}"]), np.zeros(((x.size - 2) // dim, dim)), 1.0, data[f"windings{i}"], 0.0
            )
            tangent = data[f"tangent{i}"]
            events.append(BifurcationEvent(
                kind=str(data[f"kind{i}"]),
                lam=float(x[-1]),
                bracket=tuple(int(v) for v in data[f"bracket{i}"]),
                localization_tol=float(data[f"tol{i}"]),
                orbit=template.with_unknowns(x),
                tangent=tangent if tangent.size else None,
            ))
    return events


def orbit_dump_rows(orbit: OrbitSegment, samples: int = 0) -> tuple[list[str], list[list[float]], list[str]]:
    """Per-oscillator phases along the orbit with the |θ - π| deviation next to them.

    ``samples = 0`` emits the collocation nodes; otherwise a uniform grid.
    """
    if samples:
        t = np.linspace(0.0, 1.0, samples)
        states = interpolate(orbit, t)
    else:
        t, states = orbit.times, orbit.states
    theta = lift_phase_differences(states)
    deviation = np.abs(wrap(theta) - np.pi)
    size = theta.shape[1]
    header = ["t", *[f"theta{i}" for i in range(size)], *[f"dev{i}" for i in range(size)]]
    rows = [[ti, *th, *dv] for ti, th, dv in zip(t, theta, deviation)]
    comments = [
        f"ntst={orbit.ntst}",
        f"ncol={orbit.ncol}",
        f"dim={orbit.dim}",
        f"windings={' '.join(str(int(k)) for k in orbit.windings)}",
        f"period={fmt(orbit.period)}",
        f"lambda={fmt(orbit.lam)}",
    ]
    return header, rows, comments


def write_orbit_dump(path: Path, orbit: OrbitSegment, samples: int = 0) -> Path:
    header, rows, comments = orbit_dump_rows(orbit, samples)
    return write_csv(path, header, rows, comments)


def write_fold_curve(path: Path, curve: FoldCurve) -> Path:
    notes = {}
    for r, delta in curve.cusps:
        nearest = min(curve.points, key=lambda point: abs(point.r - r) + abs(point.delta - delta))
        notes[nearest.index] = "cusp"
    if curve.points:
        notes[curve.points[-1].index] = notes.get(curve.points[-1].index, curve.status)
    rows = [[point.index, point.r, point.delta, point.period, notes.get(point.index, "")] for point in curve.points]
    return write_csv(path, ["step", "r", "delta", "period", "note"], rows)


def write_residual_scan(path: Path, deltas: Sequence[float], residuals: Sequence[float]) -> Path:
    rows = []
    for i, (delta, residual) in enumerate(zip(deltas, residuals)):
        ratio = residual / residuals[i - 1] if i and residuals[i - 1] > 0 else float("nan")
        rows.append([delta, residual, ratio])
    return write_csv(path, ["delta", "residual", "ratio"], rows)


def write_trajectory(path: Path, t, phi) -> Path:
    phi = np.asarray(phi)
    header = ["t", *[f"phi{i + 1}" for i in range(phi.shape[1])]]
    return write_csv(path, header, ([ti, *row] for ti, row in zip(t, phi)))
