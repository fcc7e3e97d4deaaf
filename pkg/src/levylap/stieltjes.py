"""Evaluation grids in the upper half-plane and grid-indexed Stieltjes estimates."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

DEFAULT_ETA_MIN = 0.25
CSV_HEADER = ("re_z", "im_z", "re_s", "im_s", "stderr", "iterations")


def fmt(x) -> str:
    return f"{float(x):.17g}"


@dataclass(frozen=True)
class ZGrid:
    points: np.ndarray
    eta_min: float = DEFAULT_ETA_MIN

    def __post_init__(self):
        pts = np.atleast_1d(np.asarray(self.points, dtype=complex)).copy()
        if pts.ndim != 1 or len(pts) == 0:
            raise ValueError("a grid needs at least one point")
        if np.any(pts.imag < self.eta_min):
            raise ValueError(f"all grid points need Im z >= eta_min={self.eta_min}")
        if len(np.unique(pts)) != len(pts):
            raise ValueError("grid points must be distinct")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def rectangle(cls, re_min=-8.0, re_max=4.0, re_step=0.25, im_values=(0.5, 1.0), eta_min=DEFAULT_ETA_MIN):
        count = int(round((re_max - re_min) / re_step)) + 1
        re = re_min + re_step * np.arange(count)
        pts = [complex(x, y) for y in im_values for x in re]
        return cls(np.array(pts), eta_min=min(eta_min, min(im_values)))

    @classmethod
    def default(cls):
        return cls.rectangle()

    def __len__(self):
        return len(self.points)

    def line(self, eta: float) -> np.ndarray:
        """Indices of the points with ``Im z == eta``, ordered by real part."""
        idx = np.flatnonzero(np.isclose(self.points.imag, eta, rtol=0, atol=1e-12))
        return idx[np.argsort(self.points.real[idx], kind="stable")]

    def subset(self, indices) -> "ZGrid":
        return ZGrid(self.points[np.asarray(indices)], eta_min=self.eta_min)

    def same_as(self, other: "ZGrid") -> bool:
        return len(self) == len(other) and bool(np.all(self.points == other.points))


@dataclass
class StieltjesEstimate:
    """Deterministic Stieltjes transform estimate on a grid with standard errors."""

    grid: ZGrid
    mean: np.ndarray
    stderr: np.ndarray
    iterations: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        g = len(self.grid)
        self.mean = np.asarray(self.mean, dtype=complex).reshape(g)
        self.stderr = np.broadcast_to(np.asarray(self.stderr, dtype=float), (g,)).copy()
        self.iterations = np.broadcast_to(np.asarray(self.iterations, dtype=np.int64), (g,)).copy()

    def herglotz_ok(self, slack: float = 1e-12) -> bool:
        eta = self.grid.points.imag
        return bool(np.all(self.mean.imag > 0) and np.all(np.abs(self.mean) <= (1 + slack) / eta))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for z, s, se, it in zip(self.grid.points, self.mean, self.stderr, self.iterations):
            writer.writerow([fmt(z.real), fmt(z.imag), fmt(s.real), fmt(s.imag), fmt(se), int(it)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, eta_min: float = 0.0) -> "StieltjesEstimate":
        rows = list(csv.DictReader(io.StringIO(text)))
        if not rows or tuple(rows[0].keys()) != CSV_HEADER:
            raise ValueError(f"expected a Stieltjes CSV with columns {CSV_HEADER}")
        z = np.array([complex(float(r["re_z"]), float(r["im_z"])) for r in rows])
        s = np.array([complex(float(r["re_s"]), float(r["im_s"])) for r in rows])
        grid = ZGrid(z, eta_min=min(eta_min, float(z.imag.min())))
        return cls(grid, s, [float(r["stderr"]) for r in rows], [int(r["iterations"]) for r in rows])
