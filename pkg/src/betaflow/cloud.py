"""Point clouds: validated containers, unit-ball normalization, file formats.

CSV format: first line ``# n=<n> d=<d> weighted=<0|1>``, then comma-separated
rows of n coordinates (plus one trailing weight column when weighted).
Binary format: 16-byte header (magic ``BFC1``, uint32 n, d, count), then
count*n little-endian float64 coordinates. Binary files carry no weights.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"BFC1"


class InputError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass
class PointCloud:
    """Finite sample of a set, optionally carrying a discrete measure.

    Points must lie in the closed unit ball; use :meth:`normalized` to bring
    raw data into that frame (the affine transform is recorded).
    """

    points: np.ndarray
    d: int
    weights: np.ndarray | None = None
    transform: tuple[np.ndarray, float] | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.ascontiguousarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[0] == 0:
            raise InputError("points must be a nonempty (N, n) array")
        if not np.all(np.isfinite(self.points)):
            bad = int(np.argwhere(~np.isfinite(self.points).all(axis=1))[0][0])
            raise InputError(f"non-finite coordinates at row {bad}")
        if not 1 <= self.d <= self.n:
            raise InputError(f"need 1 <= d <= n, got d={self.d}, n={self.n}")
        norms = np.linalg.norm(self.points, axis=1)
        if norms.max() > 1.0 + 1e-9:
            raise InputError(
                f"points must lie in B(0,1); max norm {norms.max():.6g} "
                "(use PointCloud.normalized)"
            )
        if self.weights is not None:
            self.weights = np.ascontiguousarray(self.weights, dtype=np.float64)
            if self.weights.shape != (len(self.points),):
                raise InputError("weights must be one positive value per point")
            if not np.all(self.weights > 0):
                raise InputError("weights must be strictly positive")

    @property
    def n(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return len(self.points)

    def effective_weights(self) -> np.ndarray:
        """Stored weights, or the default uniform unit-total measure."""
        if self.weights is not None:
            return self.weights
        return np.full(len(self.points), 1.0 / len(self.points))

    @classmethod
    def normalized(cls, points, d, weights=None, metadata=None) -> "PointCloud":
        """Affinely rescale raw points into B(0,1), recording the transform.

        Weights are taken as d-dimensional masses, so they pick up a factor
        scale**-d under the rescaling.
        """
        points = np.ascontiguousarray(points, dtype=np.float64)
        if points.ndim != 2 or points.shape[0] == 0:
            raise InputError("points must be a nonempty (N, n) array")
        if not np.all(np.isfinite(points)):
            bad = int(np.argwhere(~np.isfinite(points).all(axis=1))[0][0])
            raise InputError(f"non-finite coordinates at row {bad}")
        center = 0.5 * (points.min(axis=0) + points.max(axis=0))
        scale = float(np.linalg.norm(points - center, axis=1).max())
        if scale == 0.0:
            scale = 1.0
        scale *= 1.0 + 1e-12
        new_pts = (points - center) / scale
        w = None
        if weights is not None:
            w = np.asarray(weights, dtype=np.float64) / scale**d
        return cls(new_pts, d, w, (center, scale), metadata or {})

    def to_original(self, pts) -> np.ndarray:
        """Map normalized coordinates back to the ingested frame."""
        if self.transform is None:
            return np.asarray(pts)
        center, scale = self.transform
        return np.asarray(pts) * scale + center

    def median_nn_distance(self) -> float:
        """Median nearest-neighbor distance (scale floor for diagnostics)."""
        pts = self.points
        if len(pts) < 2:
            return 0.0
        sample = pts
        if len(pts) > 4096:
            step = len(pts) // 4096
            sample = pts[::step]
        dists = []
        for p in sample:
            diff = pts - p
            d2 = np.einsum("ij,ij->i", diff, diff)
            d2[d2 == 0.0] = np.inf
            dists.append(np.sqrt(d2.min()))
        return float(np.median(dists))


def write_csv(path, cloud: PointCloud):
    weighted = cloud.weights is not None
    header = f"# n={cloud.n} d={cloud.d} weighted={int(weighted)}"
    cols = cloud.points
    if weighted:
        cols = np.column_stack([cloud.points, cloud.weights])
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row in cols:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_csv(path, d: int | None = None) -> PointCloud:
    with open(path) as fh:
        header = fh.readline().strip()
        if not header.startswith("#"):
            raise InputError(f"{path}: missing '# n=.. d=.. weighted=..' header")
        fields = dict(tok.split("=") for tok in header.lstrip("# ").split())
        try:
            n = int(fields["n"])
            file_d = int(fields["d"])
            weighted = bool(int(fields.get("weighted", "0")))
        except (KeyError, ValueError) as exc:
            raise InputError(f"{path}: malformed header {header!r}") from exc
        rows = []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            vals = [float(tok) for tok in line.split(",")]
            expected = n + (1 if weighted else 0)
            if len(vals) != expected:
                raise InputError(f"{path}: row {lineno} has {len(vals)} columns, expected {expected}")
            if not all(np.isfinite(v) for v in vals):
                raise InputError(f"{path}: non-finite value at row {lineno}")
            rows.append(vals)
    if not rows:
        raise InputError(f"{path}: no data rows")
    arr = np.array(rows, dtype=np.float64)
    pts = arr[:, :n]
    w = arr[:, n] if weighted else None
    use_d = d if d is not None else file_d
    if np.linalg.norm(pts, axis=1).max() > 1.0 + 1e-9:
        return PointCloud.normalized(pts, use_d, w)
    return PointCloud(pts, use_d, w)


def write_binary(path, cloud: PointCloud):
    if cloud.weights is not None:
        raise InputError("binary format does not carry weights; write CSV instead")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sIII", MAGIC, cloud.n, cloud.d, len(cloud)))
        fh.write(cloud.points.astype("<f8").tobytes())


def read_binary(path, d: int | None = None) -> PointCloud:
    with open(path, "rb") as fh:
        head = fh.read(16)
        if len(head) != 16:
            raise InputError(f"{path}: truncated header")
        magic, n, file_d, count = struct.unpack("<4sIII", head)
        if magic != MAGIC:
            raise InputError(f"{path}: bad magic {magic!r}")
        data = np.frombuffer(fh.read(8 * n * count), dtype="<f8")
        if data.size != n * count:
            raise InputError(f"{path}: truncated payload")
    pts = data.reshape(count, n).astype(np.float64)
    use_d = d if d is not None else file_d
    if count and np.linalg.norm(pts, axis=1).max() > 1.0 + 1e-9:
        return PointCloud.normalized(pts, use_d)
    return PointCloud(pts, use_d)


def ingest(path, fmt: str = "csv", d: int | None = None) -> PointCloud:
    """Load a point cloud, normalizing into B(0,1) when needed."""
    if fmt == "csv":
        return read_csv(path, d)
    if fmt == "binary":
        return read_binary(path, d)
    raise InputError(f"unknown format {fmt!r}")
