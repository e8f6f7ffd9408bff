"""Molecule value type, rigid motions, and zero center-of-mass machinery."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from repmolgen.errors import InvariantViolationError

_ORTHO_TOL = 1e-10


class Molecule:
    """A 3D typed point cloud: coords (N, 3) and one-hot types (N, d)."""

    __slots__ = ("coords", "types")

    def __init__(self, coords: np.ndarray, types: np.ndarray):
        coords = np.asarray(coords, dtype=np.float64)
        types = np.asarray(types, dtype=np.float64)
        if coords.ndim != 2 or coords.shape[1] != 3:
            raise InvariantViolationError(f"coords must be (N, 3), got {coords.shape}")
        if coords.shape[0] < 1:
            raise InvariantViolationError("molecule needs at least one atom")
        if types.shape[0] != coords.shape[0] or types.ndim != 2:
            raise InvariantViolationError(
                f"types shape {types.shape} incompatible with coords {coords.shape}"
            )
        if not np.isfinite(coords).all():
            raise InvariantViolationError("coords contain non-finite values")
        one_hot = (types == 1.0).sum(axis=1) == 1
        zeros = (types == 0.0).sum(axis=1) == types.shape[1] - 1
        if not (one_hot & zeros).all():
            raise InvariantViolationError("every row of types must be one-hot")
        self.coords = coords
        self.types = types

    @property
    def n_atoms(self) -> int:
        return self.coords.shape[0]

    @property
    def type_indices(self) -> np.ndarray:
        return np.argmax(self.types, axis=1)

    def __repr__(self) -> str:
        return f"Molecule(n_atoms={self.n_atoms})"


@dataclass(frozen=True)
class RigidMotion:
    """Orthogonal transform plus translation; det may be -1 (reflection)."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64)
        tr = np.asarray(self.translation, dtype=np.float64)
        if rot.shape != (3, 3) or tr.shape != (3,):
            raise InvariantViolationError("rigid motion needs a 3x3 matrix and 3-vector")
        if np.abs(rot @ rot.T - np.eye(3)).max() > _ORTHO_TOL:
            raise InvariantViolationError("rotation matrix is not orthogonal")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", tr)


def apply_motion(m: Molecule, g: RigidMotion) -> Molecule:
    """coords' = coords R^T + t, types unchanged."""
    return Molecule(m.coords @ g.rotation.T + g.translation, m.types.copy())


def random_rotation(rng: np.random.Generator, allow_reflection: bool = False) -> np.ndarray:
    """Random orthogonal 3x3 matrix; proper rotation unless reflections are allowed."""
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if not allow_reflection and np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    if allow_reflection and rng.random() < 0.5 and np.linalg.det(q) > 0:
        q[:, 0] = -q[:, 0]
    return q


def random_rigid_motion(rng: np.random.Generator, allow_reflection: bool = False,
                        translation_scale: float = 2.0) -> RigidMotion:
    return RigidMotion(random_rotation(rng, allow_reflection),
                       translation_scale * rng.standard_normal(3))


def project_zero_com(noise: np.ndarray) -> np.ndarray:
    """Subtract the row mean over the atom axis; supports (N, 3) and batched (..., N, 3)."""
    noise = np.asarray(noise, dtype=np.float64)
    return noise - noise.mean(axis=-2, keepdims=True)


def sample_subspace_noise(n_atoms: int, d_types: int, rng: np.random.Generator):
    """Standard Gaussian noise for a molecule; the coordinate part is projected to zero CoM."""
    if n_atoms < 1:
        raise InvariantViolationError("need at least one atom")
    eps_x = project_zero_com(rng.standard_normal((n_atoms, 3)))
    if n_atoms == 1:
        eps_x = np.zeros((1, 3))
    eps_h = rng.standard_normal((n_atoms, d_types))
    return eps_x, eps_h


def assert_centered(coords: np.ndarray, tol: float = 1e-9, what: str = "coordinates") -> None:
    com = np.asarray(coords).mean(axis=-2)
    if np.linalg.norm(com, axis=-1).max() > tol:
        raise InvariantViolationError(f"{what} are not centered (CoM norm > {tol})")
