"""Multi-frame XYZ files for typed point clouds.

Coordinates are written with 17 significant digits so that float64 values
survive a write/read round trip bit-exactly, which keeps file hashes stable
across repeated runs with the same seed.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from repmolgen.data.alphabet import ElementAlphabet
from repmolgen.data.molecule import Molecule
from repmolgen.errors import ParseError


def format_xyz(molecules, alphabet: ElementAlphabet) -> str:
    """Render molecules as concatenated XYZ frames."""
    symbols = alphabet.symbols
    lines: list[str] = []
    for m in molecules:
        lines.append(str(m.n_atoms))
        lines.append("")
        for idx, (x, y, z) in zip(m.type_indices, m.coords):
            lines.append(f"{symbols[idx]} {x:.17g} {y:.17g} {z:.17g}")
    return "\n".join(lines) + ("\n" if lines else "")


def write_xyz(path, molecules, alphabet: ElementAlphabet) -> None:
    """Write molecules to `path` atomically (temp file + rename)."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(format_xyz(molecules, alphabet))
    tmp.replace(path)


def parse_xyz(text: str, alphabet: ElementAlphabet, source: str = "<string>"
              ) -> list[Molecule]:
    """Parse concatenated XYZ frames into molecules."""
    index = {sym: i for i, sym in enumerate(alphabet.symbols)}
    n_elements = alphabet.n_elements
    lines = text.splitlines()
    mols: list[Molecule] = []
    pos = 0
    while pos < len(lines):
        if not lines[pos].strip():
            pos += 1
            continue
        try:
            n_atoms = int(lines[pos].strip())
        except ValueError as exc:
            raise ParseError(
                f"{source}, line {pos + 1}: expected an atom count, got "
                f"{lines[pos]!r}") from exc
        if n_atoms < 1:
            raise ParseError(f"{source}, line {pos + 1}: atom count must be >= 1")
        coords = np.zeros((n_atoms, 3))
        types = np.zeros((n_atoms, n_elements))
        for k in range(n_atoms):
            line_no = pos + 2 + k
            if line_no >= len(lines):
                raise ParseError(
                    f"{source}, line {pos + 1}: record declares {n_atoms} atoms "
                    "but the file ends early")
            parts = lines[line_no].split()
            if len(parts) != 4:
                raise ParseError(
                    f"{source}, line {line_no + 1}: expected 'symbol x y z', "
                    f"got {lines[line_no]!r}")
            sym = parts[0]
            if sym not in index:
                raise ParseError(
                    f"{source}, line {line_no + 1}: unknown element symbol "
                    f"{sym!r}")
            try:
                coords[k] = [float(v) for v in parts[1:]]
            except ValueError as exc:
                raise ParseError(
                    f"{source}, line {line_no + 1}: malformed coordinate in "
                    f"{lines[line_no]!r}") from exc
            types[k, index[sym]] = 1.0
        mols.append(Molecule(coords, types))
        pos += 2 + n_atoms
    return mols


def read_xyz(path, alphabet: ElementAlphabet) -> list[Molecule]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read XYZ file {path}: {exc}") from exc
    return parse_xyz(text, alphabet, source=str(path))
