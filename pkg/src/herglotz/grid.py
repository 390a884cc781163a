"""Functions sampled on rectangular 1-D or 2-D grids, with CSV/JSON persistence."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.interpolate import RegularGridInterpolator


class GridError(ValueError):
    pass


def fmt(v: float) -> str:
    """17 significant digits; round-trips any double exactly."""
    return format(float(v), ".17g")


@dataclass(frozen=True, eq=False)
class GridFunction:
    box: tuple  # ((lo, hi), ...) per axis
    n_points: tuple
    values: np.ndarray  # shape n_points, C order
    time: float | None = None

    def __post_init__(self):
        box = tuple((float(lo), float(hi)) for lo, hi in self.box)
        n = tuple(int(k) for k in self.n_points)
        if len(box) not in (1, 2) or len(box) != len(n):
            raise GridError("grid dimension must be 1 or 2 with one (lo, hi) and one size per axis")
        if any(k < 2 for k in n):
            raise GridError("need at least 2 points per axis")
        if any(not hi > lo for lo, hi in box):
            raise GridError("each axis needs hi > lo")
        vals = np.array(self.values, dtype=float)
        if vals.size != int(np.prod(n)):
            raise GridError(f"expected {int(np.prod(n))} values for shape {n}, got {vals.size}")
        vals = vals.reshape(n)
        if not np.all(np.isfinite(vals)):
            raise GridError("grid values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "box", box)
        object.__setattr__(self, "n_points", n)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_function(cls, f, box, n_points, time=None) -> "GridFunction":
        """f maps an (M, dim) array of points to M values."""
        proto = cls(box, n_points, np.zeros(int(np.prod(n_points))), time)
        return cls(box, n_points, np.asarray(f(proto.points()), float), time)

    @property
    def dim(self) -> int:
        return len(self.box)

    @property
    def axes(self) -> list[np.ndarray]:
        return [np.linspace(lo, hi, k) for (lo, hi), k in zip(self.box, self.n_points)]

    @property
    def spacing(self) -> np.ndarray:
        return np.array([(hi - lo) / (k - 1) for (lo, hi), k in zip(self.box, self.n_points)])

    def points(self) -> np.ndarray:
        """All grid points, shape (M, dim), in row-major (lexicographic) order."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=-1)

    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def with_values(self, values, time=None) -> "GridFunction":
        return GridFunction(self.box, self.n_points, values, self.time if time is None else time)

    def same_grid(self, other: "GridFunction") -> bool:
        return self.box == other.box and self.n_points == other.n_points

    def interpolate(self, pts) -> np.ndarray:
        """Multilinear interpolation; points outside the box raise."""
        pts = np.asarray(pts, float).reshape(-1, self.dim)
        lo = np.array([b[0] for b in self.box])
        hi = np.array([b[1] for b in self.box])
        tol = 1e-12 * (1 + np.abs(hi - lo))
        if np.any(pts < lo - tol) or np.any(pts > hi + tol):
            raise GridError("interpolation point outside the grid box")
        f = RegularGridInterpolator(self.axes, self.values, method="linear")
        return f(np.clip(pts, lo, hi))

    def __call__(self, pts) -> np.ndarray:
        return self.interpolate(pts)

    # --------------------------------------------------------------- I/O

    def meta(self) -> dict:
        d = {"dim": self.dim, "box": [list(b) for b in self.box], "n_points": list(self.n_points)}
        if self.time is not None:
            d["time"] = self.time
        return d

    def to_csv(self, path, header_lines=()) -> None:
        lines = [f"# {h}" for h in header_lines]
        for i, ((lo, hi), k) in enumerate(zip(self.box, self.n_points)):
            lines.append(f"# axis {i}: lo={fmt(lo)} hi={fmt(hi)} n={k}")
        if self.time is not None:
            lines.append(f"# time={fmt(self.time)}")
        d = self.dim
        lines.append(",".join([f"i{j}" for j in range(d)] + [f"x{j}" for j in range(d)] + ["value"]))
        idx = np.indices(self.n_points).reshape(d, -1).T
        pts = self.points()
        for ij, x, v in zip(idx, pts, self.flat()):
            lines.append(",".join([str(int(k)) for k in ij] + [fmt(c) for c in x] + [fmt(v)]))
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")

    def write(self, csv_path, header_lines=()) -> Path:
        """CSV plus a JSON sidecar next to it; returns the sidecar path."""
        csv_path = Path(csv_path)
        self.to_csv(csv_path, header_lines)
        side = csv_path.with_suffix(".json")
        meta = self.meta()
        if header_lines:
            meta["header"] = list(header_lines)
        with open(side, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        return side

    @classmethod
    def from_csv(cls, path) -> "GridFunction":
        box, n, time, rows = {}, {}, None, []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                if line.startswith("#"):
                    body = line[1:].strip()
                    if body.startswith("axis "):
                        head, rest = body.split(":", 1)
                        i = int(head.split()[1])
                        kv = dict(item.split("=") for item in rest.split())
                        box[i] = (float(kv["lo"]), float(kv["hi"]))
                        n[i] = int(kv["n"])
                    elif body.startswith("time="):
                        time = float(body[5:])
                    continue
                if line[0] == "i":
                    continue
                rows.append(line.split(","))
        if not box or sorted(box) != list(range(len(box))):
            raise GridError(f"{path}: missing axis header lines")
        d = len(box)
        shape = tuple(n[i] for i in range(d))
        if len(rows) != int(np.prod(shape)):
            raise GridError(f"{path}: expected {int(np.prod(shape))} rows for shape {shape}, got {len(rows)}")
        vals = np.empty(shape)
        try:
            for r in rows:
                if len(r) != 2 * d + 1:
                    raise GridError(f"{path}: row has {len(r)} fields, expected {2 * d + 1}")
                vals[tuple(int(k) for k in r[:d])] = float(r[-1])
        except (IndexError, ValueError) as err:
            raise GridError(f"{path}: bad row: {err}") from err
        return cls(tuple(box[i] for i in range(d)), shape, vals, time)
