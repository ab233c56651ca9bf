"""SMILES parsing, atom/bond featurization and hashed Morgan fingerprints.

Only a SMILES subset is understood: organic-subset atoms, bracket atoms with
charge and hydrogen count, explicit bonds ``- = # :``, lowercase aromatic
atoms, branches, ring closures (digits and ``%nn``) and ``.`` separated
components. Stereo marks (``/ \\ @``), isotopes and atom classes are read and
discarded.
"""

from __future__ import annotations

import re
import struct
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    EmptyInput,
    SmilesError,
    UnbalancedParenthesis,
    UnknownSymbol,
    UnmatchedRingBond,
)

__all__ = [
    "ELEMENTS",
    "BOND_ORDERS",
    "N_ATOM_FEATURES",
    "N_BOND_FEATURES",
    "AtomRecord",
    "BondRecord",
    "MolecularGraph",
    "Fingerprint",
    "parse_smiles",
    "atom_features",
    "bond_features",
    "morgan_identifiers",
    "morgan_fingerprint",
    "permute_atoms",
    "fnv1a_64",
]

ELEMENTS = ("B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I")
AROMATIC_ELEMENTS = {"b": "B", "c": "C", "n": "N", "o": "O", "p": "P", "s": "S"}
BOND_ORDERS = ("single", "double", "triple", "aromatic")

_VALENCES = {
    "B": (3,),
    "C": (4,),
    "N": (3,),
    "O": (2,),
    "P": (3, 5),
    "S": (2, 4, 6),
    "F": (1,),
    "Cl": (1,),
    "Br": (1,),
    "I": (1,),
}
_BOND_SYMBOLS = {"-": "single", "=": "double", "#": "triple", ":": "aromatic"}
_BOND_VALENCE = {"single": 1, "double": 2, "triple": 3, "aromatic": 1}

N_ATOM_FEATURES = 23
N_BOND_FEATURES = 4


@dataclass(frozen=True)
class AtomRecord:
    element: str
    formal_charge: int = 0
    aromatic: bool = False
    h_count: int = 0
    degree: int = 0


@dataclass(frozen=True)
class BondRecord:
    i: int
    j: int
    order: str = "single"


@dataclass(frozen=True)
class MolecularGraph:
    """Simple undirected molecular graph; hydrogens are implicit."""

    atoms: tuple[AtomRecord, ...]
    bonds: tuple[BondRecord, ...]

    def __post_init__(self):
        if not self.atoms:
            raise ValueError("a molecular graph needs at least one atom")
        n = len(self.atoms)
        seen = set()
        degree = [0] * n
        for bond in self.bonds:
            if not (0 <= bond.i < n and 0 <= bond.j < n) or bond.i == bond.j:
                raise ValueError(f"invalid bond endpoints ({bond.i}, {bond.j})")
            key = (min(bond.i, bond.j), max(bond.i, bond.j))
            if key in seen:
                raise ValueError(f"duplicate bond between atoms {key}")
            if bond.order not in BOND_ORDERS:
                raise ValueError(f"unknown bond order {bond.order!r}")
            seen.add(key)
            degree[bond.i] += 1
            degree[bond.j] += 1
        for atom, d in zip(self.atoms, degree):
            if atom.degree != d:
                raise ValueError("atom degree does not match its incident bonds")

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)

    @property
    def n_bonds(self) -> int:
        return len(self.bonds)

    def neighbors(self) -> list[list[tuple[int, int]]]:
        """Per-atom list of ``(bond_order_code, neighbor_index)``."""
        out: list[list[tuple[int, int]]] = [[] for _ in self.atoms]
        for bond in self.bonds:
            code = BOND_ORDERS.index(bond.order)
            out[bond.i].append((code, bond.j))
            out[bond.j].append((code, bond.i))
        return out

    def edge_index(self) -> np.ndarray:
        """Bond endpoints as a ``(2, n_bonds)`` integer array, bond order."""
        if not self.bonds:
            return np.zeros((2, 0), dtype=np.int64)
        return np.array([[b.i for b in self.bonds], [b.j for b in self.bonds]], dtype=np.int64)


@dataclass(frozen=True, eq=False)
class Fingerprint:
    """Binary folded fingerprint."""

    bits: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, Fingerprint):
            return NotImplemented
        return self.bits.shape == other.bits.shape and bool(np.array_equal(self.bits, other.bits))

    def __len__(self) -> int:
        return int(self.bits.shape[0])

    @property
    def popcount(self) -> int:
        return int(self.bits.sum())

    @property
    def on_bits(self) -> list[int]:
        return np.flatnonzero(self.bits).tolist()


# --------------------------------------------------------------------------
# parsing

_BRACKET = re.compile(
    r"""
    (?P<isotope>\d+)?
    (?P<symbol>[A-Z][a-z]?|[a-z][a-z]?)
    (?P<chiral>@(?:@|TH[12]|AL[12]|SP[123]|TB\d{1,2}|OH\d{1,2})?)?
    (?P<hcount>H\d*)?
    (?P<charge>\+\d+|-\d+|\++|-+)?
    (?::(?P<klass>\d+))?
    $""",
    re.VERBOSE,
)


class _AtomDraft:
    __slots__ = ("element", "aromatic", "charge", "h_explicit", "bracket")

    def __init__(self, element, aromatic, charge=0, h_explicit=0, bracket=False):
        self.element = element
        self.aromatic = aromatic
        self.charge = charge
        self.h_explicit = h_explicit
        self.bracket = bracket


def _element_from_symbol(symbol: str, *, bracket: bool) -> tuple[str, bool]:
    if symbol in AROMATIC_ELEMENTS:
        return AROMATIC_ELEMENTS[symbol], True
    if symbol in _VALENCES:
        return symbol, False
    where = "bracket atom" if bracket else "atom"
    raise UnknownSymbol(f"unsupported {where} symbol {symbol!r}")


def _parse_bracket(body: str) -> _AtomDraft:
    m = _BRACKET.match(body)
    if m is None:
        raise UnknownSymbol(f"cannot read bracket atom [{body}]")
    symbol = m.group("symbol")
    # "[Hg]", "[Sc]" etc. land here as two-letter symbols; "[se]" as aromatic
    element, aromatic = _element_from_symbol(symbol, bracket=True)
    hcount = m.group("hcount")
    h = 0
    if hcount:
        h = int(hcount[1:]) if len(hcount) > 1 else 1
    charge_text = m.group("charge")
    charge = 0
    if charge_text:
        sign = 1 if charge_text[0] == "+" else -1
        if len(charge_text) > 1 and charge_text[1].isdigit():
            charge = sign * int(charge_text[1:])
        else:
            charge = sign * len(charge_text)
    return _AtomDraft(element, aromatic, charge, h, bracket=True)


def parse_smiles(text: str) -> MolecularGraph:
    """Parse a SMILES string into a :class:`MolecularGraph`.

    Raises:
        EmptyInput: ``text`` is empty or whitespace.
        UnbalancedParenthesis: a branch is opened and never closed, or closed
            without being opened.
        UnmatchedRingBond: a ring-closure label is left open.
        UnknownSymbol: an element outside the supported set, or a character
            outside the grammar.
        SmilesError: other syntax problems (dangling bond, empty branch).
    """
    if text is None or not text.strip():
        raise EmptyInput("empty SMILES string")
    text = text.strip()

    drafts: list[_AtomDraft] = []
    bonds: dict[tuple[int, int], str | None] = {}
    prev: int | None = None
    pending: str | None = None  # explicit bond symbol waiting for its second atom
    branch_stack: list[int] = []
    rings: dict[int, tuple[int, str | None]] = {}

    def add_bond(a: int, b: int, symbol: str | None, where: int):
        if a == b:
            raise SmilesError(f"atom bonded to itself at position {where}")
        key = (min(a, b), max(a, b))
        if key in bonds:
            raise SmilesError(f"duplicate bond between atoms {key} at position {where}")
        bonds[key] = symbol

    def add_atom(draft: _AtomDraft, where: int):
        nonlocal prev, pending
        drafts.append(draft)
        idx = len(drafts) - 1
        if prev is not None:
            add_bond(prev, idx, pending, where)
        elif pending is not None:
            raise SmilesError(f"bond symbol without a preceding atom at position {where}")
        pending = None
        prev = idx

    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == "[":
            close = text.find("]", i + 1)
            if close < 0:
                raise UnknownSymbol(f"unterminated bracket atom at position {i}")
            add_atom(_parse_bracket(text[i + 1 : close]), i)
            i = close + 1
            continue
        if ch in ("C", "B") and i + 1 < n and text[i : i + 2] in ("Cl", "Br"):
            add_atom(_AtomDraft(text[i : i + 2], False), i)
            i += 2
            continue
        if ch.isalpha():
            element, aromatic = _element_from_symbol(ch, bracket=False)
            add_atom(_AtomDraft(element, aromatic), i)
            i += 1
            continue
        if ch in _BOND_SYMBOLS:
            if pending is not None:
                raise SmilesError(f"two bond symbols in a row at position {i}")
            pending = ch
            i += 1
            continue
        if ch in "/\\":
            # stereo bond marks: plain (implicit) bonds
            i += 1
            continue
        if ch == "(":
            if prev is None:
                raise SmilesError(f"branch opened before any atom at position {i}")
            branch_stack.append(prev)
            i += 1
            continue
        if ch == ")":
            if not branch_stack:
                raise UnbalancedParenthesis(f"')' without matching '(' at position {i}")
            if pending is not None:
                raise SmilesError(f"dangling bond before ')' at position {i}")
            prev = branch_stack.pop()
            i += 1
            continue
        if ch.isdigit() or ch == "%":
            if ch == "%":
                label_text = text[i + 1 : i + 3]
                if len(label_text) != 2 or not label_text.isdigit():
                    raise SmilesError(f"'%' must be followed by two digits at position {i}")
                label = int(label_text)
                width = 3
            else:
                label = int(ch)
                width = 1
            if prev is None:
                raise SmilesError(f"ring closure before any atom at position {i}")
            if label in rings:
                opener, symbol = rings.pop(label)
                if symbol is not None and pending is not None and symbol != pending:
                    raise SmilesError(f"conflicting ring bond symbols for label {label}")
                add_bond(opener, prev, pending if pending is not None else symbol, i)
            else:
                rings[label] = (prev, pending)
            pending = None
            i += width
            continue
        if ch == ".":
            if branch_stack:
                raise UnbalancedParenthesis(f"'.' inside an open branch at position {i}")
            if pending is not None:
                raise SmilesError(f"dangling bond before '.' at position {i}")
            prev = None
            i += 1
            continue
        raise UnknownSymbol(f"unexpected character {ch!r} at position {i}")

    if branch_stack:
        raise UnbalancedParenthesis(f"{len(branch_stack)} branch(es) left open")
    if rings:
        labels = ", ".join(str(k) for k in sorted(rings))
        raise UnmatchedRingBond(f"ring bond label(s) {labels} never closed")
    if pending is not None:
        raise SmilesError("SMILES ends with a bond symbol")
    if not drafts:
        raise EmptyInput("no atoms in SMILES string")

    bond_records = []
    for (a, b), symbol in bonds.items():
        if symbol is None:
            order = "aromatic" if drafts[a].aromatic and drafts[b].aromatic else "single"
        else:
            order = _BOND_SYMBOLS[symbol]
        bond_records.append(BondRecord(a, b, order))

    degree = [0] * len(drafts)
    valence_sum = [0] * len(drafts)
    aromatic_bonds = [0] * len(drafts)
    for bond in bond_records:
        for k in (bond.i, bond.j):
            degree[k] += 1
            valence_sum[k] += _BOND_VALENCE[bond.order]
            if bond.order == "aromatic":
                aromatic_bonds[k] += 1

    atoms = []
    for k, draft in enumerate(drafts):
        if draft.bracket:
            h = draft.h_explicit
        else:
            h = _implicit_hydrogens(draft, valence_sum[k], aromatic_bonds[k])
        atoms.append(AtomRecord(draft.element, draft.charge, draft.aromatic, h, degree[k]))
    return MolecularGraph(tuple(atoms), tuple(bond_records))


def _implicit_hydrogens(draft: _AtomDraft, bond_sum: int, n_aromatic: int) -> int:
    valences = _VALENCES[draft.element]
    if draft.aromatic:
        # one extra electron goes to the pi system
        used = bond_sum + (1 if n_aromatic else 0)
        return max(0, valences[0] - used)
    for v in valences:
        if v >= bond_sum:
            return v - bond_sum
    return 0


# --------------------------------------------------------------------------
# features


def atom_features(g: MolecularGraph) -> np.ndarray:
    """Atom feature matrix of shape ``(n_atoms, 23)``.

    Columns: element one-hot over the ten supported symbols plus an "other"
    slot (0-10), degree one-hot 0..5 (11-16, clipped), formal charge (17),
    aromatic flag (18), hydrogen count one-hot 0..3 (19-22, clipped).
    """
    x = np.zeros((g.n_atoms, N_ATOM_FEATURES), dtype=np.float64)
    for row, atom in enumerate(g.atoms):
        el = ELEMENTS.index(atom.element) if atom.element in ELEMENTS else len(ELEMENTS)
        x[row, el] = 1.0
        x[row, 11 + min(atom.degree, 5)] = 1.0
        x[row, 17] = float(atom.formal_charge)
        x[row, 18] = 1.0 if atom.aromatic else 0.0
        x[row, 19 + min(atom.h_count, 3)] = 1.0
    return x


def bond_features(g: MolecularGraph) -> np.ndarray:
    """One-hot bond order matrix of shape ``(n_bonds, 4)`` in bond order."""
    x = np.zeros((g.n_bonds, N_BOND_FEATURES), dtype=np.float64)
    for row, bond in enumerate(g.bonds):
        x[row, BOND_ORDERS.index(bond.order)] = 1.0
    return x


# --------------------------------------------------------------------------
# fingerprints

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def fnv1a_64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


def _initial_identifier(atom: AtomRecord) -> int:
    payload = b"\x00" + atom.element.encode("ascii").ljust(2, b"\x00")
    payload += struct.pack("<HhHB", atom.degree, atom.formal_charge, atom.h_count, int(atom.aromatic))
    return fnv1a_64(payload)


def _next_identifier(radius: int, own: int, neighborhood: Sequence[tuple[int, int]]) -> int:
    payload = b"\x01" + struct.pack("<IQI", radius, own, len(neighborhood))
    for code, ident in neighborhood:
        payload += struct.pack("<BQ", code, ident)
    return fnv1a_64(payload)


def morgan_identifiers(g: MolecularGraph, radius: int = 2) -> list[int]:
    """Deduplicated 64-bit environment identifiers, sorted ascending.

    Identifiers are refined for ``radius`` rounds; an environment survives
    only if no lower-radius environment covers the same atom set (ties at
    equal radius keep the smallest identifier).
    """
    if radius < 0:
        raise ValueError("radius must be >= 0")
    nbrs = g.neighbors()
    ids = [_initial_identifier(a) for a in g.atoms]
    cover = [1 << k for k in range(g.n_atoms)]
    best: dict[int, tuple[int, int]] = {}

    def offer(r: int):
        for atom, mask in enumerate(cover):
            cand = (r, ids[atom])
            if mask not in best or cand < best[mask]:
                best[mask] = cand

    offer(0)
    for r in range(1, radius + 1):
        new_ids = []
        new_cover = []
        for atom in range(g.n_atoms):
            hood = sorted((code, ids[nb]) for code, nb in nbrs[atom])
            new_ids.append(_next_identifier(r, ids[atom], hood))
            mask = cover[atom]
            for _, nb in nbrs[atom]:
                mask |= cover[nb]
            new_cover.append(mask)
        ids, cover = new_ids, new_cover
        offer(r)
    return sorted({ident for _, ident in best.values()})


def morgan_fingerprint(g: MolecularGraph, radius: int = 2, n_bits: int = 256) -> Fingerprint:
    """Binary hashed Morgan fingerprint (FNV-1a environment hashing)."""
    if n_bits < 1:
        raise ValueError("n_bits must be >= 1")
    bits = np.zeros(n_bits, dtype=np.uint8)
    for ident in morgan_identifiers(g, radius):
        bits[ident % n_bits] = 1
    return Fingerprint(bits)


def permute_atoms(g: MolecularGraph, perm: Iterable[int]) -> MolecularGraph:
    """Relabel atoms so that old atom ``k`` becomes new atom ``perm[k]``."""
    perm = list(perm)
    if sorted(perm) != list(range(g.n_atoms)):
        raise ValueError("perm must be a permutation of the atom indices")
    atoms: list[AtomRecord | None] = [None] * g.n_atoms
    for old, new in enumerate(perm):
        atoms[new] = g.atoms[old]
    bonds = tuple(BondRecord(perm[b.i], perm[b.j], b.order) for b in g.bonds)
    return MolecularGraph(tuple(atoms), bonds)
