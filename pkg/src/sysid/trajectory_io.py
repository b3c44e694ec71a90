"""Trajectory CSV files.

Header: ``k,r_1..r_n`` optionally followed by ``x_*,f_*,w_*`` (all three or
none) and ``a_*`` (the offset, repeated on every row). Values are written
with 17 significant digits so a save/load round trip is exact.
"""
from __future__ import annotations

import csv
import io
import os
from typing import List

import numpy as np

from .errors import ParseError, SchemaError
from .simulation import Trajectory

_GROUPS = ("r", "x", "f", "w", "a")


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def trajectory_to_csv(traj: Trajectory) -> str:
    n = traj.n
    groups = ["r"]
    if traj.x is not None and traj.has_noise:
        groups += ["x", "f", "w"]
    if traj.a is not None:
        groups.append("a")
    header = ["k"] + [f"{g}_{i}" for g in groups for i in range(1, n + 1)]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for t in range(traj.length):
        row = [str(t + 1)]
        for g in groups:
            vals = traj.a if g == "a" else getattr(traj, g)[t]
            row.extend(_fmt(v) for v in vals)
        writer.writerow(row)
    return buf.getvalue()


def save_trajectory(traj: Trajectory, path: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(trajectory_to_csv(traj))


def _parse_header(header: List[str]):
    if not header or header[0].strip() != "k":
        raise SchemaError("first column of the header must be 'k'")
    cols = {}
    for j, name in enumerate(header[1:], start=1):
        name = name.strip()
        g, sep, idx = name.partition("_")
        if not sep or g not in _GROUPS or not idx.isdigit():
            raise SchemaError(f"unrecognised column {name!r} in header")
        cols.setdefault(g, []).append((int(idx), j))
    if "r" not in cols:
        raise SchemaError("header has no r_* columns")
    n = len(cols["r"])
    for g, entries in cols.items():
        if sorted(i for i, _ in entries) != list(range(1, n + 1)):
            raise SchemaError(f"columns {g}_* must be numbered 1..{n}")
    noise = [g in cols for g in ("x", "f", "w")]
    if any(noise) and not all(noise):
        raise SchemaError("x_*, f_* and w_* columns must appear together")
    return n, {g: [j for _, j in sorted(e)] for g, e in cols.items()}


def trajectory_from_csv(text: str, source: str = "<string>") -> Trajectory:
    reader = csv.reader(io.StringIO(text))
    rows = [(reader.line_num, row) for row in reader if row and any(c.strip() for c in row)]
    if not rows:
        raise ParseError(f"{source}: empty file")
    n, cols = _parse_header(rows[0][1])
    width = len(rows[0][1])
    data = {g: [] for g in cols}
    for row_no, (line, row) in enumerate(rows[1:], start=1):
        where = f"{source}: row {row_no} (line {line})"
        if len(row) != width:
            raise ParseError(f"{where}: expected {width} fields, found {len(row)}")
        try:
            vals = [float(c) for c in row]
        except ValueError as exc:
            raise ParseError(f"{where}: {exc}") from None
        if vals[0] != row_no:
            raise ParseError(f"{where}: time index must be {row_no}, found {row[0].strip()}")
        for g, idx in cols.items():
            data[g].append([vals[j] for j in idx])
    if not data["r"]:
        raise ParseError(f"{source}: no data rows")
    arr = {g: np.array(v, dtype=float) for g, v in data.items()}
    a = None
    if "a" in arr:
        if not np.all(arr["a"] == arr["a"][0]):
            raise SchemaError(f"{source}: offset columns a_* must be constant over time")
        a = arr["a"][0]
    return Trajectory(r=arr["r"], x=arr.get("x"), f=arr.get("f"), w=arr.get("w"), a=a)


def load_trajectory(path: str) -> Trajectory:
    if not os.path.exists(path):
        raise ParseError(f"trajectory file {path!r} does not exist")
    with open(path, newline="") as fh:
        return trajectory_from_csv(fh.read(), source=path)
