"""Molecule data model, group actions, toy corpus generation, and XYZ IO."""

from repmolgen.data.alphabet import DEFAULT_ALPHABET, Element, ElementAlphabet
from repmolgen.data.molecule import (
    Molecule,
    RigidMotion,
    apply_motion,
    project_zero_com,
    random_rigid_motion,
    random_rotation,
    sample_subspace_noise,
)
from repmolgen.data.corpus import CorpusConfig, generate_toy_corpus
from repmolgen.data.xyz import read_xyz, write_xyz

__all__ = [
    "DEFAULT_ALPHABET",
    "Element",
    "ElementAlphabet",
    "Molecule",
    "RigidMotion",
    "apply_motion",
    "project_zero_com",
    "random_rigid_motion",
    "random_rotation",
    "sample_subspace_noise",
    "CorpusConfig",
    "generate_toy_corpus",
    "read_xyz",
    "write_xyz",
]
