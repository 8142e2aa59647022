"""Synthetic point-set tasks with exactly computable properties.

sphere: three atoms on the unit sphere surface (an H3+-sized toy molecule),
    labelled with a Coulomb-repulsion energy sum_{i<j} 1 / r_ij.
ring:   two mirrored points on the unit circle, labelled with the signed
    angle of the first point.
"""
from __future__ import annotations

import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import InvalidInputError, MissingPrerequisiteError, SingularityError
from .geometry import (
    apply_rigid, atomic_write, project_zero_com, random_rotation, RigidTransform,
    read_csv_table, read_points_csv, sphere_fit_distance, sphere_manifold_distance, write_points_csv,
)
from .guidance import PropertyEstimator

GENERATOR_VERSION = 1
MIN_DISTANCE = 1e-6


def surrogate_energy(x, strict: bool = True):
    """Sum over atom pairs of 1/distance.

    With ``strict`` a pair closer than 1e-6 raises SingularityError;
    otherwise that point set's energy is NaN.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 2
    xb = x[None] if single else x
    M = xb.shape[-2]
    if M < 2:
        raise InvalidInputError("surrogate energy needs at least two atoms")
    i, j = np.triu_indices(M, 1)
    with np.errstate(invalid="ignore"):
        r = np.linalg.norm(xb[:, i] - xb[:, j], axis=-1)
    bad = ~(r >= MIN_DISTANCE).all(axis=-1)
    if strict and bad.any():
        raise SingularityError(f"atoms closer than {MIN_DISTANCE} in {int(bad.sum())} point set(s)")
    with np.errstate(divide="ignore", invalid="ignore"):
        e = (1.0 / r).sum(axis=-1)
    e = np.where(bad, np.nan, e)
    return float(e[0]) if single else e


def surrogate_energy_grad(x) -> np.ndarray:
    """d/dx_a of sum 1/r_ij, i.e. -sum_b (x_a - x_b) / r_ab^3; NaN when singular."""
    x = np.asarray(x, dtype=float)
    diff = x[..., :, None, :] - x[..., None, :, :]
    r = np.sqrt((diff**2).sum(-1))
    M = x.shape[-2]
    eye = np.eye(M, dtype=bool)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv3 = np.where(eye, 0.0, 1.0 / np.where(eye, 1.0, r) ** 3)
        inv3 = np.where(~eye & (r < MIN_DISTANCE), np.nan, inv3)
    return -(diff * inv3[..., None]).sum(axis=-2)


def _energy_column(x):
    return surrogate_energy(x, strict=False)[:, None]


def _energy_jacobian(x):
    return surrogate_energy_grad(x)[:, None]


def energy_property() -> PropertyEstimator:
    return PropertyEstimator(_energy_column, _energy_jacobian, name="surrogate_energy",
                             units="dimensionless (Coulomb surrogate)")


def energy_blackbox() -> PropertyEstimator:
    """Same energy with no gradient exposed, for zeroth-order guidance."""
    return PropertyEstimator(_energy_column, None, name="surrogate_energy_blackbox")


def ring_angle(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.arctan2(x[..., 0, 1], x[..., 0, 0])


def _ring_angle_grad(x):
    x = np.asarray(x, dtype=float)
    g = np.zeros(x.shape)
    r2 = x[:, 0, 0] ** 2 + x[:, 0, 1] ** 2
    g[:, 0, 0] = -x[:, 0, 1] / r2
    g[:, 0, 1] = x[:, 0, 0] / r2
    return g[:, None]


def _angle_column(x):
    return ring_angle(x)[:, None]


def angle_property() -> PropertyEstimator:
    return PropertyEstimator(_angle_column, _ring_angle_grad, name="ring_angle", units="rad")


@dataclass
class LabeledPointSets:
    task: str
    raw: np.ndarray
    points: np.ndarray
    labels: np.ndarray
    seed: int | None = None

    def __len__(self):
        return len(self.points)

    def save(self, out_dir) -> None:
        out = Path(out_dir)
        write_points_csv(out / "points.csv", self.points)
        write_points_csv(out / "raw_points.csv", self.raw)
        buf = io.StringIO()
        buf.write("sample_id,c\n")
        for i, c in enumerate(self.labels):
            buf.write(f"{i},{float(c)!r}\n")
        atomic_write(out / "labels.csv", buf.getvalue().encode())
        manifest = {"task": self.task, "n": len(self), "seed": self.seed, "generator_version": GENERATOR_VERSION}
        atomic_write(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True).encode())

    @classmethod
    def load(cls, out_dir) -> "LabeledPointSets":
        out = Path(out_dir)
        for name in ("points.csv", "raw_points.csv", "labels.csv", "manifest.json"):
            if not (out / name).exists():
                raise MissingPrerequisiteError(f"dataset file {out / name} missing; run generate-data first")
        manifest = json.loads((out / "manifest.json").read_text())
        labels = read_csv_table(out / "labels.csv")[:, 1]
        return cls(manifest["task"], read_points_csv(out / "raw_points.csv"),
                   read_points_csv(out / "points.csv"), labels, manifest.get("seed"))


def sample_unit_sphere(shape, D: int, rng: np.random.Generator) -> np.ndarray:
    v = rng.standard_normal((*shape, D))
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def generate_sphere_dataset(n: int, rng: np.random.Generator, M: int = 3) -> LabeledPointSets:
    """Atoms uniform on the unit sphere surface, each molecule randomly rotated.

    The label is computed on the raw on-sphere coordinates; ``points`` holds
    the zero-CoM projection used for training.
    """
    if n < 1:
        raise InvalidInputError("n must be >= 1")
    raw = sample_unit_sphere((n, M), 3, rng)
    for i in range(n):
        raw[i] = apply_rigid(raw[i], RigidTransform(random_rotation(3, rng), np.zeros(3)))
    labels = surrogate_energy(raw)
    return LabeledPointSets("sphere", raw, project_zero_com(raw), labels)


def generate_ring_dataset(n: int, rng: np.random.Generator) -> LabeledPointSets:
    """Two mirrored points on the unit circle; label is the first point's angle in (-pi, pi]."""
    if n < 1:
        raise InvalidInputError("n must be >= 1")
    theta = np.pi - 2 * np.pi * rng.random(n)
    p = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    raw = np.stack([p, -p], axis=1)
    return LabeledPointSets("ring", raw, project_zero_com(raw), theta)


@dataclass
class TaskSpec:
    name: str
    M: int
    D: int
    generate: Callable[[int, np.random.Generator], LabeledPointSets]
    prop: PropertyEstimator
    manifold_distance: Callable[[np.ndarray], np.ndarray]


def get_task(name: str) -> TaskSpec:
    if name == "sphere":
        return TaskSpec("sphere", 3, 3, generate_sphere_dataset, energy_property(), sphere_fit_distance)
    if name == "ring":
        return TaskSpec("ring", 2, 2, generate_ring_dataset, angle_property(), sphere_manifold_distance)
    raise InvalidInputError(f"unknown task {name!r}")
