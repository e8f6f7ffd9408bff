"""Element alphabet with valences and a distance-window bond lookup table."""
from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class Element:
    symbol: str
    valence: int
    radius: float

    def __post_init__(self):
        if self.valence < 1:
            raise ValueError(f"element {self.symbol}: valence must be positive")
        if self.radius <= 0:
            raise ValueError(f"element {self.symbol}: radius must be positive")


class ElementAlphabet:
    """Typed element set; bonds are inferred from distance windows around rest lengths.

    The rest length of a pair is the sum of the two covalent radii; a pair is
    bonded when its distance falls within rest*(1 - margin) .. rest*(1 + margin).
    The window table is keyed by the unordered element pair and bond order;
    only order 1 is populated for the toy chemistry.
    """

    def __init__(self, elements: list[Element], window_margin: float = 0.15):
        if not elements:
            raise ValueError("alphabet needs at least one element")
        if not 0.0 < window_margin < 1.0:
            raise ValueError("window margin must lie in (0, 1)")
        self.elements = list(elements)
        self.window_margin = float(window_margin)
        self._index = {e.symbol: i for i, e in enumerate(self.elements)}
        if len(self._index) != len(self.elements):
            raise ValueError("duplicate element symbols")
        self._windows: dict[tuple[int, int], dict[int, tuple[float, float]]] = {}
        n = len(self.elements)
        for i in range(n):
            for j in range(i, n):
                rest = self.elements[i].radius + self.elements[j].radius
                self._windows[(i, j)] = {
                    1: (rest * (1.0 - window_margin), rest * (1.0 + window_margin))
                }

    # -- lookups ----------------------------------------------------------------
    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def symbols(self) -> list[str]:
        return [e.symbol for e in self.elements]

    def index_of(self, symbol: str) -> int:
        if symbol not in self._index:
            raise KeyError(f"unknown element symbol {symbol!r}")
        return self._index[symbol]

    def rest_length(self, i: int, j: int) -> float:
        return self.elements[i].radius + self.elements[j].radius

    def bond_window(self, i: int, j: int, order: int = 1) -> tuple[float, float]:
        key = (i, j) if i <= j else (j, i)
        return self._windows[key][order]

    def max_window(self) -> float:
        return max(w[1] for orders in self._windows.values() for w in orders.values())

    def element_for_valence(self, valence: int) -> int:
        for i, e in enumerate(self.elements):
            if e.valence == valence:
                return i
        raise KeyError(f"no element with valence {valence}")


# Four toy elements with valences 1/2/3/4; radii in dimensionless toy units.
DEFAULT_ALPHABET = ElementAlphabet(
    [
        Element("H", 1, 0.37),
        Element("O", 2, 0.66),
        Element("N", 3, 0.71),
        Element("C", 4, 0.77),
    ]
)
