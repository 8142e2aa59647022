"""Point sets in the zero-center-of-mass subspace.

A point set is a plain ``(M, D)`` float array; batches are ``(n, M, D)``.
Every function here broadcasts over leading batch axes.
"""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import least_squares

from .errors import DegenerateSubspaceError, InvalidInputError, InvalidTransformError, ShapeError

SNAPSHOT_MAGIC = b"TACS"
SNAPSHOT_VERSION = 1


def _as_points(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim < 2:
        raise ShapeError(f"point set must have shape (..., M, D), got {x.shape}")
    if x.shape[-2] < 1:
        raise InvalidInputError("point set needs at least one atom")
    return x


def project_zero_com(x) -> np.ndarray:
    """Subtract the per-coordinate mean over atoms (axis -2)."""
    x = _as_points(x)
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("non-finite coordinates")
    return x - x.mean(axis=-2, keepdims=True)


def sample_subspace_gaussian(M: int, D: int, rng: np.random.Generator, size=None) -> np.ndarray:
    """Standard Gaussian restricted to the zero-CoM subspace.

    Drawing an ambient N(0, I) and projecting is distributionally the same as
    mapping an N(0, I) in R^{(M-1)D} through an isometry onto the subspace.
    Each coordinate then has variance (M-1)/M.
    """
    if M < 2:
        raise DegenerateSubspaceError(f"zero-CoM subspace of M={M} atoms is {{0}}")
    shape = (M, D) if size is None else (*np.atleast_1d(size), M, D)
    eps = rng.standard_normal(shape)
    return eps - eps.mean(axis=-2, keepdims=True)


def com_norm(x) -> np.ndarray:
    """Max-abs center of mass, used by invariance checks."""
    return np.abs(np.asarray(x).mean(axis=-2)).max(axis=-1)


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float)
        v = np.asarray(self.translation, dtype=float)
        if R.ndim != 2 or R.shape[0] != R.shape[1] or v.shape != (R.shape[0],):
            raise InvalidTransformError(f"rotation {R.shape} / translation {v.shape} mismatch")
        if np.abs(R.T @ R - np.eye(len(R))).max() > 1e-9 or abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise InvalidTransformError("rotation must be orthogonal with det +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", v)

    @classmethod
    def identity(cls, D: int = 3) -> "RigidTransform":
        return cls(np.eye(D), np.zeros(D))


def random_rotation(D: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-uniform rotation in SO(D)."""
    q, r = np.linalg.qr(rng.standard_normal((D, D)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def random_rigid(D: int, rng: np.random.Generator, scale: float = 1.0) -> RigidTransform:
    return RigidTransform(random_rotation(D, rng), scale * rng.standard_normal(D))


def apply_rigid(x, g: RigidTransform) -> np.ndarray:
    x = _as_points(x)
    if x.shape[-1] != g.rotation.shape[0]:
        raise ShapeError(f"transform acts on D={g.rotation.shape[0]}, points have D={x.shape[-1]}")
    return x @ g.rotation.T + g.translation


def pairwise_distances(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    diff = x[..., :, None, :] - x[..., None, :, :]
    return np.sqrt((diff**2).sum(-1))


def sphere_manifold_distance(x) -> np.ndarray | float:
    """Mean over atoms of | ||x_i|| - 1 |; per point set for batches."""
    x = _as_points(x)
    d = np.abs(np.linalg.norm(x, axis=-1) - 1.0).mean(axis=-1)
    return float(d) if d.ndim == 0 else d


def sphere_fit_distance(x) -> np.ndarray | float:
    """RMS over atoms of | ||x_i - v|| - 1 | for the best sphere center v.

    Translation invariant, so it is the natural distance for centered samples
    whose original sphere center was projected away.
    """
    x = _as_points(x)
    flat = x.reshape(-1, *x.shape[-2:])
    out = np.empty(len(flat))
    for i, pts in enumerate(flat):
        if not np.all(np.isfinite(pts)):
            out[i] = np.nan
            continue
        fun = lambda v, p=pts: np.linalg.norm(p - v, axis=-1) - 1.0
        v0 = pts.mean(axis=0)
        # start off the centroid plane so the solver can reach either cap
        v0 = v0 + 1e-3
        res = least_squares(fun, v0, method="lm", xtol=1e-12, ftol=1e-12)
        out[i] = float(np.sqrt(np.mean(res.fun ** 2)))
    out = out.reshape(x.shape[:-2])
    return float(out) if out.ndim == 0 else out


# -- serialization ---------------------------------------------------------

_AXES = ("x", "y", "z")


def write_points_csv(path, points) -> None:
    """Rows ``sample_id, atom_index, x, y[, z]``; a single (M, D) set is sample 0."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 2:
        pts = pts[None]
    n, M, D = pts.shape
    buf = io.StringIO()
    buf.write(",".join(["sample_id", "atom_index", *_AXES[:D]]) + "\n")
    for i in range(n):
        for a in range(M):
            buf.write(f"{i},{a}," + ",".join(repr(float(v)) for v in pts[i, a]) + "\n")
    atomic_write(path, buf.getvalue().encode())


def read_csv_table(path) -> np.ndarray:
    """Numeric body of a headered CSV; ``#`` stamp lines are ignored."""
    lines = [ln for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("#")]
    if len(lines) <= 1:
        return np.zeros((0, 0))
    return np.loadtxt(lines[1:], delimiter=",", ndmin=2)


def read_points_csv(path) -> np.ndarray:
    rows = read_csv_table(path)
    if rows.size == 0:
        return np.zeros((0, 0, 0))
    ids = rows[:, 0].astype(int)
    atoms = rows[:, 1].astype(int)
    n, M, D = ids.max() + 1, atoms.max() + 1, rows.shape[1] - 2
    out = np.full((n, M, D), np.nan)
    out[ids, atoms] = rows[:, 2:]
    return out


def write_points_binary(path, points) -> None:
    """Little-endian snapshot: magic, version u32, M u32, D u32, then f64 data.

    A batch is stored as consecutive (M, D) blocks; the count follows from the
    file length.
    """
    pts = np.asarray(points, dtype="<f8")
    if pts.ndim == 2:
        pts = pts[None]
    _, M, D = pts.shape
    header = SNAPSHOT_MAGIC + struct.pack("<III", SNAPSHOT_VERSION, M, D)
    atomic_write(path, header + np.ascontiguousarray(pts).tobytes())


def read_points_binary(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != SNAPSHOT_MAGIC:
        raise InvalidInputError(f"{path}: bad magic {raw[:4]!r}")
    version, M, D = struct.unpack("<III", raw[4:16])
    if version != SNAPSHOT_VERSION:
        raise InvalidInputError(f"{path}: unsupported snapshot version {version}")
    data = np.frombuffer(raw[16:], dtype="<f8")
    if data.size % (M * D):
        raise InvalidInputError(f"{path}: truncated payload")
    return data.reshape(-1, M, D).astype(float)


def atomic_write(path, payload: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    tmp.replace(path)


def subspace_basis(M: int) -> np.ndarray:
    """(M, M-1) orthonormal columns spanning vectors orthogonal to ones(M)."""
    if M < 2:
        raise DegenerateSubspaceError(f"zero-CoM subspace of M={M} atoms is {{0}}")
    A = np.eye(M)[:, : M - 1] - 1.0 / M
    q, _ = np.linalg.qr(A)
    return q
