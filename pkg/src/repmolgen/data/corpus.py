"""Synthetic toy-chemistry corpus: random bonded skeletons relaxed by a spring energy."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from repmolgen.data.alphabet import DEFAULT_ALPHABET, ElementAlphabet
from repmolgen.data.molecule import Molecule, project_zero_com


@dataclass
class CorpusConfig:
    n_molecules: int = 2000
    n_min: int = 4
    n_max: int = 16
    ring_prob: float = 0.35
    force_tol: float = 1e-6
    max_attempts: int = 40
    repulsion_margin: float = 1.45
    repulsion_strength: float = 0.5

    def validate(self) -> None:
        if self.n_molecules < 0:
            raise ValueError("n_molecules must be non-negative")
        if not 1 <= self.n_min <= self.n_max:
            raise ValueError("need 1 <= n_min <= n_max")
        if not 0.0 <= self.ring_prob <= 1.0:
            raise ValueError("ring_prob must lie in [0, 1]")


def _random_skeleton(n: int, rng: np.random.Generator, ring_prob: float,
                     max_degree: int) -> list[tuple[int, int]]:
    """Random attachment tree with a degree cap, optionally closed into one ring."""
    edges: list[tuple[int, int]] = []
    degree = np.zeros(n, dtype=int)
    for i in range(1, n):
        candidates = [j for j in range(i) if degree[j] < max_degree]
        j = int(candidates[rng.integers(len(candidates))])
        edges.append((j, i))
        degree[j] += 1
        degree[i] += 1
    if n >= 4 and rng.random() < ring_prob:
        adjacent = {frozenset(e) for e in edges}
        open_pairs = [
            (a, b)
            for a in range(n)
            for b in range(a + 1, n)
            if degree[a] < max_degree and degree[b] < max_degree
            and frozenset((a, b)) not in adjacent
        ]
        if open_pairs:
            a, b = open_pairs[rng.integers(len(open_pairs))]
            edges.append((a, b))
    return edges


def _spring_energy_and_grad(flat: np.ndarray, n: int, bond_pairs: np.ndarray,
                            rest: np.ndarray, nb_pairs: np.ndarray, cutoff: np.ndarray,
                            k_rep: float):
    x = flat.reshape(n, 3)
    grad = np.zeros_like(x)
    energy = 0.0
    if len(bond_pairs):
        diff = x[bond_pairs[:, 0]] - x[bond_pairs[:, 1]]
        dist = np.linalg.norm(diff, axis=1)
        stretch = dist - rest
        energy += float((stretch ** 2).sum())
        coeff = (2.0 * stretch / np.maximum(dist, 1e-12))[:, None] * diff
        np.add.at(grad, bond_pairs[:, 0], coeff)
        np.add.at(grad, bond_pairs[:, 1], -coeff)
    if len(nb_pairs):
        diff = x[nb_pairs[:, 0]] - x[nb_pairs[:, 1]]
        dist = np.linalg.norm(diff, axis=1)
        overlap = np.maximum(0.0, cutoff - dist)
        energy += float(k_rep * (overlap ** 2).sum())
        coeff = (-2.0 * k_rep * overlap / np.maximum(dist, 1e-12))[:, None] * diff
        np.add.at(grad, nb_pairs[:, 0], coeff)
        np.add.at(grad, nb_pairs[:, 1], -coeff)
    return energy, grad.reshape(-1)


def _relax(n: int, edges: list[tuple[int, int]], element_idx: np.ndarray,
           alphabet: ElementAlphabet, cfg: CorpusConfig,
           rng: np.random.Generator) -> np.ndarray | None:
    bond_set = {frozenset(e) for e in edges}
    bond_pairs = np.array(edges, dtype=int).reshape(-1, 2)
    rest = np.array([alphabet.rest_length(element_idx[i], element_idx[j]) for i, j in edges])
    nb = [
        (a, b)
        for a in range(n)
        for b in range(a + 1, n)
        if frozenset((a, b)) not in bond_set
    ]
    nb_pairs = np.array(nb, dtype=int).reshape(-1, 2)
    cutoff = np.array(
        [cfg.repulsion_margin * alphabet.rest_length(element_idx[a], element_idx[b])
         for a, b in nb]
    )
    scale = max(1.0, 0.8 * float(np.mean(rest)) * n ** (1.0 / 3.0))
    x0 = (scale * rng.standard_normal((n, 3))).reshape(-1)
    result = minimize(
        _spring_energy_and_grad,
        x0,
        args=(n, bond_pairs, rest, nb_pairs, cutoff, cfg.repulsion_strength),
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": 2000, "gtol": cfg.force_tol, "ftol": 1e-14},
    )
    coords = result.x.reshape(n, 3)
    _, grad = _spring_energy_and_grad(result.x, n, bond_pairs, rest, nb_pairs, cutoff,
                                      cfg.repulsion_strength)
    if np.abs(grad).max() > max(cfg.force_tol, 1e-5):
        return None
    # Geometry must realise exactly the intended bond graph, otherwise the
    # relaxation landed in a frustrated minimum: reject and resample.
    inferred = set()
    for a in range(n):
        for b in range(a + 1, n):
            lo, hi = alphabet.bond_window(element_idx[a], element_idx[b])
            if lo <= np.linalg.norm(coords[a] - coords[b]) <= hi:
                inferred.add(frozenset((a, b)))
    if inferred != bond_set:
        return None
    return project_zero_com(coords)


def _one_molecule(n: int, alphabet: ElementAlphabet, cfg: CorpusConfig,
                  rng: np.random.Generator) -> Molecule:
    max_valence = max(e.valence for e in alphabet.elements)
    for _ in range(cfg.max_attempts):
        edges = _random_skeleton(n, rng, cfg.ring_prob, max_valence)
        degree = np.zeros(n, dtype=int)
        for i, j in edges:
            degree[i] += 1
            degree[j] += 1
        try:
            element_idx = np.array([alphabet.element_for_valence(int(d)) for d in degree])
        except KeyError:
            continue
        coords = _relax(n, edges, element_idx, alphabet, cfg, rng)
        if coords is None:
            continue
        types = np.zeros((n, alphabet.n_elements))
        types[np.arange(n), element_idx] = 1.0
        return Molecule(coords, types)
    raise RuntimeError(
        f"could not relax a molecule of size {n} within {cfg.max_attempts} attempts"
    )


def generate_toy_corpus(cfg: CorpusConfig, rng: np.random.Generator,
                        alphabet: ElementAlphabet = DEFAULT_ALPHABET) -> list[Molecule]:
    """Corpus of relaxed toy molecules; per-molecule RNG streams keep it order-independent."""
    cfg.validate()
    if cfg.n_min == 1 and cfg.n_max == 1:
        raise ValueError("single-atom molecules have no bonds; use n_min >= 2")
    streams = rng.spawn(cfg.n_molecules)
    molecules = []
    for child in streams:
        n = int(child.integers(cfg.n_min, cfg.n_max + 1))
        if n == 1:
            n = 2
        molecules.append(_one_molecule(n, alphabet, cfg, child))
    return molecules
