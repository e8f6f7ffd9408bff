"""Sample-quality metrics for generated molecule batches.

Stability counts inferred single bonds against element valences; validity is
a desk-scale stand-in for parseability (connected bond graph whose valence
deficiencies admit a perfect-matching completion into multiple bonds);
uniqueness and novelty rely on an exact canonical form of the typed bond
graph; geometric quality is measured by type-weighted 1-Wasserstein
distances between bond-length and bond-angle distributions.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

import networkx as nx
import numpy as np
from scipy.stats import wasserstein_distance

from repmolgen.data.alphabet import ElementAlphabet
from repmolgen.data.molecule import Molecule
from repmolgen.errors import InvariantViolationError
from repmolgen.moldiff import infer_bonds

# ---------------------------------------------------------------------------
# stability
# ---------------------------------------------------------------------------


def _degrees(m: Molecule, bonds) -> np.ndarray:
    deg = np.zeros(m.n_atoms, dtype=int)
    for i, j in bonds:
        deg[i] += 1
        deg[j] += 1
    return deg


def _valences(m: Molecule, alphabet: ElementAlphabet) -> np.ndarray:
    return np.array([alphabet.elements[int(k)].valence for k in m.type_indices])


def atom_stability(batch, alphabet: ElementAlphabet) -> float:
    """Fraction of atoms whose inferred bond count equals their valence."""
    total = 0
    stable = 0
    for m in batch:
        deg = _degrees(m, infer_bonds(m, alphabet))
        stable += int((deg == _valences(m, alphabet)).sum())
        total += m.n_atoms
    return stable / total if total else 0.0


def molecule_stability(batch, alphabet: ElementAlphabet) -> float:
    """Fraction of molecules in which every atom has exactly its valence in bonds."""
    batch = list(batch)
    if not batch:
        return 0.0
    good = 0
    for m in batch:
        deg = _degrees(m, infer_bonds(m, alphabet))
        good += int(bool((deg == _valences(m, alphabet)).all()))
    return good / len(batch)


# ---------------------------------------------------------------------------
# validity, uniqueness, novelty
# ---------------------------------------------------------------------------


def _is_valid(m: Molecule, bonds, alphabet: ElementAlphabet) -> bool:
    """Connected, no over-bonded atom, and valence deficiencies completable.

    Completability: clone every atom once per missing bond, connect clones of
    bonded atoms, and require a perfect matching (each matched clone pair is
    one extra bond order on an existing edge).
    """
    g = nx.Graph()
    g.add_nodes_from(range(m.n_atoms))
    g.add_edges_from(bonds)
    if not nx.is_connected(g):
        return False
    deg = _degrees(m, bonds)
    val = _valences(m, alphabet)
    if (deg > val).any():
        return False
    deficiency = val - deg
    if deficiency.sum() == 0:
        return True
    if deficiency.sum() % 2 == 1:
        return False
    aux = nx.Graph()
    clones = {i: [(i, k) for k in range(int(deficiency[i]))] for i in range(m.n_atoms)}
    for nodes in clones.values():
        aux.add_nodes_from(nodes)
    for i, j in bonds:
        for ci in clones[i]:
            for cj in clones[j]:
                aux.add_edge(ci, cj)
    matching = nx.max_weight_matching(aux, maxcardinality=True)
    return 2 * len(matching) == aux.number_of_nodes()


def _canonical_form(symbols, bonds, n):
    """Exact canonical form of a typed graph via refinement with individualization."""
    adj = [[] for _ in range(n)]
    edges = [tuple(sorted(e)) for e in bonds]
    for i, j in edges:
        adj[i].append(j)
        adj[j].append(i)

    def refine(colors):
        while True:
            sigs = [(colors[i], tuple(sorted(colors[j] for j in adj[i])))
                    for i in range(n)]
            lut = {s: k for k, s in enumerate(sorted(set(sigs)))}
            new = tuple(lut[s] for s in sigs)
            if new == colors:
                return colors
            colors = new

    def search(colors):
        colors = refine(colors)
        cells = {}
        for i, c in enumerate(colors):
            cells.setdefault(c, []).append(i)
        split = [c for c in sorted(cells) if len(cells[c]) > 1]
        if not split:
            order = sorted(range(n), key=lambda i: colors[i])
            pos = {node: k for k, node in enumerate(order)}
            t_seq = tuple(symbols[i] for i in order)
            e_seq = tuple(sorted(tuple(sorted((pos[i], pos[j]))) for i, j in edges))
            return (t_seq, e_seq)
        best = None
        for v in cells[split[0]]:
            broken = list(colors)
            broken[v] = n + 1  # fresh color: individualize v, then re-refine
            cand = search(tuple(broken))
            if best is None or cand < best:
                best = cand
        return best

    rank = {s: k for k, s in enumerate(sorted(set(symbols)))}
    return search(tuple(rank[s] for s in symbols))


def canonical_hash(m: Molecule, alphabet: ElementAlphabet) -> str:
    """Permutation- and rigid-motion-invariant hash of (types, bond graph)."""
    symbols = [alphabet.elements[int(k)].symbol for k in m.type_indices]
    form = _canonical_form(symbols, infer_bonds(m, alphabet), m.n_atoms)
    return hashlib.sha256(repr((m.n_atoms, form)).encode()).hexdigest()


def validity_and_uniqueness(batch, alphabet: ElementAlphabet,
                            training_hashes=None) -> tuple[float, float, float]:
    """(validity, valid_and_unique, novelty), all as fractions of the batch.

    Novelty counts distinct valid graphs whose canonical hash is absent from
    `training_hashes`; with no training set every distinct valid graph is new.
    """
    batch = list(batch)
    if not batch:
        return 0.0, 0.0, 0.0
    train = training_hashes or set()
    n_valid = 0
    seen = set()
    novel = set()
    for m in batch:
        bonds = infer_bonds(m, alphabet)
        if not _is_valid(m, bonds, alphabet):
            continue
        n_valid += 1
        h = canonical_hash(m, alphabet)
        seen.add(h)
        if h not in train:
            novel.add(h)
    n = len(batch)
    return n_valid / n, len(seen) / n, len(novel) / n


# ---------------------------------------------------------------------------
# geometric W1 statistics
# ---------------------------------------------------------------------------


def wasserstein_distance_1d(a, b) -> float:
    """Exact 1-Wasserstein distance between two empirical distributions."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples must be non-empty")
    return float(wasserstein_distance(a, b))


def collect_bond_lengths(batch, alphabet: ElementAlphabet) -> dict:
    """Bond lengths grouped by sorted element-symbol pair."""
    out: dict = {}
    for m in batch:
        for i, j in infer_bonds(m, alphabet):
            si = alphabet.elements[int(m.type_indices[i])].symbol
            sj = alphabet.elements[int(m.type_indices[j])].symbol
            key = tuple(sorted((si, sj)))
            out.setdefault(key, []).append(
                float(np.linalg.norm(m.coords[i] - m.coords[j])))
    return {k: np.asarray(v) for k, v in sorted(out.items())}


def collect_bond_angles(batch, alphabet: ElementAlphabet) -> dict:
    """Bond angles in degrees grouped by center-atom element symbol.

    An angle is recorded at every atom with two or more bonded neighbors,
    once per unordered neighbor pair.
    """
    out: dict = {}
    for m in batch:
        neighbors: dict = {}
        for i, j in infer_bonds(m, alphabet):
            neighbors.setdefault(i, []).append(j)
            neighbors.setdefault(j, []).append(i)
        for center, nbrs in neighbors.items():
            if len(nbrs) < 2:
                continue
            sym = alphabet.elements[int(m.type_indices[center])].symbol
            nbrs = sorted(nbrs)
            for a in range(len(nbrs)):
                for b in range(a + 1, len(nbrs)):
                    u = m.coords[nbrs[a]] - m.coords[center]
                    v = m.coords[nbrs[b]] - m.coords[center]
                    cos = np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v))
                    out.setdefault(sym, []).append(
                        float(np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))))
    return {k: np.asarray(v) for k, v in sorted(out.items())}


def _grouped_w1(gen_groups: dict, ref_groups: dict) -> float:
    """Type-weighted sum of per-group W1 distances.

    Weights are the average of the two batches' type frequencies, which makes
    the statistic exactly symmetric in its arguments. A type present on only
    one side is measured against the other side's pooled values; a type
    absent from both carries no weight.
    """
    n_gen = sum(len(v) for v in gen_groups.values())
    n_ref = sum(len(v) for v in ref_groups.values())
    if n_gen == 0 and n_ref == 0:
        return 0.0
    gen_pool = np.concatenate(list(gen_groups.values())) if n_gen else None
    ref_pool = np.concatenate(list(ref_groups.values())) if n_ref else None
    total = 0.0
    for key in sorted(set(gen_groups) | set(ref_groups)):
        a = gen_groups.get(key)
        b = ref_groups.get(key)
        q_gen = (len(a) / n_gen) if (a is not None and n_gen) else 0.0
        q_ref = (len(b) / n_ref) if (b is not None and n_ref) else 0.0
        weight = 0.5 * (q_gen + q_ref)
        if a is not None and b is not None:
            dist = wasserstein_distance_1d(a, b)
        elif a is not None:
            dist = wasserstein_distance_1d(a, ref_pool) if ref_pool is not None else 0.0
        elif b is not None:
            dist = wasserstein_distance_1d(b, gen_pool) if gen_pool is not None else 0.0
        else:
            dist = 0.0
        total += weight * dist
    return total


def bond_lengths_w1(generated, reference, alphabet: ElementAlphabet) -> float:
    """Type-frequency-weighted W1 between bond-length distributions."""
    return _grouped_w1(collect_bond_lengths(generated, alphabet),
                       collect_bond_lengths(reference, alphabet))


def bond_angles_w1(generated, reference, alphabet: ElementAlphabet) -> float:
    """Center-element-weighted W1 between bond-angle distributions (degrees)."""
    return _grouped_w1(collect_bond_angles(generated, alphabet),
                       collect_bond_angles(reference, alphabet))


# ---------------------------------------------------------------------------
# toy property and conditional error
# ---------------------------------------------------------------------------


def toy_property(m: Molecule) -> float:
    """Radius of gyration of the coordinates: sqrt(mean squared distance to centroid)."""
    centered = m.coords - m.coords.mean(axis=0)
    return float(np.sqrt((centered ** 2).sum() / m.n_atoms))


def conditional_mae(batch, targets) -> float:
    """Mean absolute error between each molecule's toy property and its target."""
    batch = list(batch)
    targets = np.asarray(targets, dtype=np.float64)
    if len(batch) != targets.size:
        raise ValueError(f"{len(batch)} molecules vs {targets.size} targets")
    if not batch:
        return 0.0
    values = np.array([toy_property(m) for m in batch])
    return float(np.abs(values - targets).mean())


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

SCHEMA_VERSION = 1

METRIC_REPORT_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "atom_stability": {"type": "number", "minimum": 0, "maximum": 1},
        "mol_stability": {"type": "number", "minimum": 0, "maximum": 1},
        "validity": {"type": "number", "minimum": 0, "maximum": 1},
        "valid_and_unique": {"type": "number", "minimum": 0, "maximum": 1},
        "novelty": {"type": "number", "minimum": 0, "maximum": 1},
        "bond_length_w1": {"type": "number", "minimum": 0},
        "bond_angle_w1": {"type": "number", "minimum": 0},
        "conditional_mae": {"type": ["number", "null"], "minimum": 0},
        "n_samples": {"type": "integer", "minimum": 0},
        "seed": {"type": "integer"},
    },
    "required": [
        "schema_version", "atom_stability", "mol_stability", "validity",
        "valid_and_unique", "novelty", "bond_length_w1", "bond_angle_w1",
        "conditional_mae", "n_samples", "seed",
    ],
    "additionalProperties": False,
}

_CSV_FIELDS = [
    "schema_version", "seed", "n_samples", "atom_stability", "mol_stability",
    "validity", "valid_and_unique", "novelty", "bond_length_w1",
    "bond_angle_w1", "conditional_mae",
]


@dataclass(frozen=True)
class MetricReport:
    """Aggregate quality metrics for one sampled batch."""

    atom_stability: float
    mol_stability: float
    validity: float
    valid_and_unique: float
    novelty: float
    bond_length_w1: float
    bond_angle_w1: float
    conditional_mae: float | None
    n_samples: int
    seed: int

    def __post_init__(self):
        fractions = {
            "atom_stability": self.atom_stability,
            "mol_stability": self.mol_stability,
            "validity": self.validity,
            "valid_and_unique": self.valid_and_unique,
            "novelty": self.novelty,
        }
        for name, value in fractions.items():
            if not 0.0 <= value <= 1.0:
                raise InvariantViolationError(f"{name} must lie in [0, 1], got {value}")
        if self.valid_and_unique > self.validity + 1e-12:
            raise InvariantViolationError(
                "valid_and_unique cannot exceed validity "
                f"({self.valid_and_unique} > {self.validity})")
        for name in ("bond_length_w1", "bond_angle_w1"):
            if getattr(self, name) < 0.0:
                raise InvariantViolationError(f"{name} must be non-negative")
        if self.conditional_mae is not None and self.conditional_mae < 0.0:
            raise InvariantViolationError("conditional_mae must be non-negative")
        if self.n_samples < 0:
            raise InvariantViolationError("n_samples must be non-negative")

    def to_dict(self) -> dict:
        out = {"schema_version": SCHEMA_VERSION}
        out.update(asdict(self))
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        data = json.loads(text)
        version = data.pop("schema_version", None)
        if version != SCHEMA_VERSION:
            raise InvariantViolationError(
                f"unsupported report schema version {version!r}")
        return cls(**data)

    @staticmethod
    def csv_header() -> str:
        return ",".join(_CSV_FIELDS)

    def to_csv_row(self) -> str:
        data = self.to_dict()
        cells = []
        for field in _CSV_FIELDS:
            value = data[field]
            cells.append("" if value is None else repr(value))
        return ",".join(cells)


def compute_report(samples, reference, alphabet: ElementAlphabet, seed: int,
                   training_hashes=None, targets=None) -> MetricReport:
    """Evaluate a sampled batch against a reference batch."""
    samples = list(samples)
    validity, valid_and_unique, novelty = validity_and_uniqueness(
        samples, alphabet, training_hashes=training_hashes)
    if samples and list(reference):
        blw = bond_lengths_w1(samples, reference, alphabet)
        baw = bond_angles_w1(samples, reference, alphabet)
    else:
        blw = baw = 0.0
    mae = None
    if targets is not None:
        mae = conditional_mae(samples, targets)
    return MetricReport(
        atom_stability=atom_stability(samples, alphabet),
        mol_stability=molecule_stability(samples, alphabet),
        validity=validity,
        valid_and_unique=valid_and_unique,
        novelty=novelty,
        bond_length_w1=blw,
        bond_angle_w1=baw,
        conditional_mae=mae,
        n_samples=len(samples),
        seed=seed,
    )
