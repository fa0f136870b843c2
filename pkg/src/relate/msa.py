"""Alignment of consonant-class sequences and the concatenated matrix.

Each concept's words are aligned progressively: pairwise scores feed an
average-linkage guide tree, profiles are merged bottom-up with an affine-gap
dynamic program, and the per-concept alignments are concatenated into one
character matrix whose columns are the sites of the phylogenetic model.
All tie-breaking is fixed (diagonal over up over left in the dynamic
program, lowest index pair in the guide tree) so the output is a pure
function of the input.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import soundclass
from .errors import (
    EmptyConceptError,
    InsufficientDataError,
    ParseError,
    SchemaError,
)
from .lexdata import Wordlist
from .soundclass import GAP, ClassAlphabet, ClassSequence

logger = logging.getLogger(__name__)

_NEG_INF = float("-inf")


@dataclass(frozen=True)
class AlignScoring:
    """Affine-gap scoring. The first symbol of a gap run costs ``gap_open``,
    every further symbol ``gap_extend``."""

    match: float = 2.0
    mismatch: float = -1.0
    gap_open: float = -2.0
    gap_extend: float = -2.0

    def __post_init__(self):
        if self.match <= self.mismatch:
            raise ValueError("match score must exceed mismatch score")
        if self.gap_open > 0 or self.gap_extend > 0:
            raise ValueError("gap penalties must not be positive")


def _gotoh(
    n_a: int,
    n_b: int,
    column_score: Callable[[int, int], float],
    scoring: AlignScoring,
) -> tuple[list[tuple[int | None, int | None]], float]:
    """Affine-gap alignment of two column sequences given by length.

    Returns the aligned column pairs (``None`` marks a gap) and the optimal
    score. State M pairs two columns, X consumes an A column against a gap,
    Y a B column against a gap; ties prefer M, then X, then Y, which makes
    the traceback prefer diagonal, then up, then left.
    """
    open_, ext = scoring.gap_open, scoring.gap_extend
    if n_a == 0 and n_b == 0:
        return [], 0.0
    if n_a == 0:
        return [(None, j) for j in range(n_b)], open_ + ext * (n_b - 1)
    if n_b == 0:
        return [(i, None) for i in range(n_a)], open_ + ext * (n_a - 1)

    shape = (n_a + 1, n_b + 1)
    m_mat = np.full(shape, _NEG_INF)
    x_mat = np.full(shape, _NEG_INF)
    y_mat = np.full(shape, _NEG_INF)
    # Predecessor state per cell: 0 = M, 1 = X, 2 = Y.
    m_ptr = np.zeros(shape, dtype=np.int8)
    x_ptr = np.zeros(shape, dtype=np.int8)
    y_ptr = np.zeros(shape, dtype=np.int8)

    m_mat[0, 0] = 0.0
    for i in range(1, n_a + 1):
        x_mat[i, 0] = open_ + ext * (i - 1)
        x_ptr[i, 0] = 1 if i > 1 else 0
    for j in range(1, n_b + 1):
        y_mat[0, j] = open_ + ext * (j - 1)
        y_ptr[0, j] = 2 if j > 1 else 0

    def argbest(m: float, x: float, y: float) -> tuple[float, int]:
        if m >= x and m >= y:
            return m, 0
        if x >= y:
            return x, 1
        return y, 2

    for i in range(1, n_a + 1):
        for j in range(1, n_b + 1):
            best, state = argbest(
                m_mat[i - 1, j - 1], x_mat[i - 1, j - 1], y_mat[i - 1, j - 1]
            )
            m_mat[i, j] = best + column_score(i - 1, j - 1)
            m_ptr[i, j] = state
            best, state = argbest(
                m_mat[i - 1, j] + open_,
                x_mat[i - 1, j] + ext,
                y_mat[i - 1, j] + open_,
            )
            x_mat[i, j] = best
            x_ptr[i, j] = state
            best, state = argbest(
                m_mat[i, j - 1] + open_,
                x_mat[i, j - 1] + open_,
                y_mat[i, j - 1] + ext,
            )
            y_mat[i, j] = best
            y_ptr[i, j] = state

    score, state = argbest(m_mat[n_a, n_b], x_mat[n_a, n_b], y_mat[n_a, n_b])
    pairs: list[tuple[int | None, int | None]] = []
    i, j = n_a, n_b
    while i > 0 or j > 0:
        if state == 0:
            pairs.append((i - 1, j - 1))
            state = m_ptr[i, j]
            i, j = i - 1, j - 1
        elif state == 1:
            pairs.append((i - 1, None))
            state = x_ptr[i, j]
            i -= 1
        else:
            pairs.append((None, j - 1))
            state = y_ptr[i, j]
            j -= 1
    pairs.reverse()
    return pairs, float(score)


def pairwise_align(
    a: ClassSequence,
    b: ClassSequence,
    scoring: AlignScoring = AlignScoring(),
) -> tuple[ClassSequence, ClassSequence, float]:
    """Optimal affine-gap alignment of two encoded words.

    Returns gap-padded versions of ``a`` and ``b`` and the score.
    """

    def column_score(i: int, j: int) -> float:
        return scoring.match if a[i] == b[j] else scoring.mismatch

    pairs, score = _gotoh(len(a), len(b), column_score, scoring)
    out_a = tuple(GAP if i is None else a[i] for i, _ in pairs)
    out_b = tuple(GAP if j is None else b[j] for _, j in pairs)
    return out_a, out_b, score


def _pair_symbol_score(x: str, y: str, scoring: AlignScoring) -> float:
    if x == GAP and y == GAP:
        return 0.0
    if x == GAP or y == GAP:
        return scoring.gap_extend
    return scoring.match if x == y else scoring.mismatch


def _merge_profiles(
    rows_a: list[list[str]],
    rows_b: list[list[str]],
    scoring: AlignScoring,
) -> list[list[str]]:
    """Align two gap-padded profiles column against column.

    A column pair is scored by the mean pairwise symbol score over all row
    combinations; new gap columns pay the affine penalties unscaled, which
    keeps them on the same footing as the averaged column scores.
    """
    n_a = len(rows_a[0]) if rows_a else 0
    n_b = len(rows_b[0]) if rows_b else 0
    cols_a = [[row[i] for row in rows_a] for i in range(n_a)]
    cols_b = [[row[j] for row in rows_b] for j in range(n_b)]

    def column_score(i: int, j: int) -> float:
        total = 0.0
        for x in cols_a[i]:
            for y in cols_b[j]:
                total += _pair_symbol_score(x, y, scoring)
        return total / (len(cols_a[i]) * len(cols_b[j]))

    pairs, _ = _gotoh(n_a, n_b, column_score, scoring)
    merged: list[list[str]] = [[] for _ in range(len(rows_a) + len(rows_b))]
    for i, j in pairs:
        col_a = cols_a[i] if i is not None else [GAP] * len(rows_a)
        col_b = cols_b[j] if j is not None else [GAP] * len(rows_b)
        for r, symbol in enumerate(col_a + col_b):
            merged[r].append(symbol)
    return merged


@dataclass(frozen=True)
class ConceptAlignment:
    """The aligned words of one concept, one row per language."""

    concept: str
    rows: tuple[ClassSequence, ...]
    width: int

    def __post_init__(self):
        if self.width < 1:
            raise SchemaError("alignment width must be at least 1")
        for row in self.rows:
            if len(row) != self.width:
                raise SchemaError("ragged alignment rows")


def _average_linkage_order(dist: np.ndarray) -> list[tuple[int, int]]:
    """Merge order of average-linkage clustering on a condensed matrix.

    Returns (i, j) cluster-index pairs; the merged cluster takes index i.
    Ties go to the lowest (i, j) pair.
    """
    n = dist.shape[0]
    active = list(range(n))
    sizes = {i: 1 for i in range(n)}
    d = {frozenset((i, j)): dist[i, j] for i in range(n) for j in range(i + 1, n)}
    merges = []
    while len(active) > 1:
        best_pair = None
        best_val = None
        for ai in range(len(active)):
            for aj in range(ai + 1, len(active)):
                i, j = active[ai], active[aj]
                val = d[frozenset((i, j))]
                if best_val is None or val < best_val:
                    best_val = val
                    best_pair = (i, j)
        i, j = best_pair
        merges.append((i, j))
        for k in active:
            if k in (i, j):
                continue
            new = (
                sizes[i] * d[frozenset((i, k))] + sizes[j] * d[frozenset((j, k))]
            ) / (sizes[i] + sizes[j])
            d[frozenset((i, k))] = new
        sizes[i] += sizes[j]
        active.remove(j)
    return merges


def progressive_align(
    seqs: Sequence[ClassSequence],
    scoring: AlignScoring = AlignScoring(),
    concept: str = "?",
) -> ConceptAlignment:
    """Align one concept's words across languages.

    ``seqs`` holds one encoded word per language, the empty tuple standing
    for a missing word; missing words come back as all-gap rows. Raises
    :class:`EmptyConceptError` when no language has a word.
    """
    present = [i for i, s in enumerate(seqs) if s]
    if not present:
        raise EmptyConceptError(f"concept {concept!r} has no encodable word")

    if len(present) == 1:
        width = len(seqs[present[0]])
        aligned = {present[0]: list(seqs[present[0]])}
    else:
        k = len(present)
        dist = np.zeros((k, k))
        for a in range(k):
            for b in range(a + 1, k):
                sa, sb = seqs[present[a]], seqs[present[b]]
                _, _, score = pairwise_align(sa, sb, scoring)
                limit = scoring.match * max(len(sa), len(sb))
                dist[a, b] = dist[b, a] = 1.0 - score / limit
        profiles: dict[int, list[list[str]]] = {
            a: [list(seqs[present[a]])] for a in range(k)
        }
        members: dict[int, list[int]] = {a: [present[a]] for a in range(k)}
        for i, j in _average_linkage_order(dist):
            profiles[i] = _merge_profiles(profiles[i], profiles[j], scoring)
            members[i] = members[i] + members[j]
            del profiles[j], members[j]
        (root,) = profiles
        width = len(profiles[root][0])
        aligned = dict(zip(members[root], profiles[root]))

    rows = tuple(
        tuple(aligned[i]) if i in aligned else (GAP,) * width
        for i in range(len(seqs))
    )
    keep = [c for c in range(width) if any(row[c] != GAP for row in rows)]
    if len(keep) != width:
        rows = tuple(tuple(row[c] for c in keep) for row in rows)
        width = len(keep)
    return ConceptAlignment(concept=concept, rows=rows, width=width)


class CharacterMatrix:
    """Concatenated per-concept alignments: taxa by sites, gap = ``-``.

    ``concept_bounds`` records, per concept, the half-open column range it
    occupies. ``cells`` is a read-only array of single-character strings.
    """

    def __init__(
        self,
        taxa: Sequence[str],
        cells: np.ndarray | Sequence[Sequence[str]],
        concept_bounds: Sequence[tuple[str, int, int]] = (),
    ):
        self.taxa = tuple(taxa)
        array = np.array(cells, dtype="<U1")
        if array.ndim != 2:
            raise SchemaError("cells must be two-dimensional")
        if array.shape[0] != len(self.taxa):
            raise SchemaError("one row per taxon required")
        if len(set(self.taxa)) != len(self.taxa):
            raise SchemaError("duplicate taxon names")
        if array.shape[1] < 1:
            raise InsufficientDataError("matrix has no sites")
        array.setflags(write=False)
        self.cells = array
        if not concept_bounds:
            concept_bounds = (("all", 0, array.shape[1]),)
        self.concept_bounds = tuple(
            (str(c), int(lo), int(hi)) for c, lo, hi in concept_bounds
        )
        for _, lo, hi in self.concept_bounds:
            if not (0 <= lo < hi <= array.shape[1]):
                raise SchemaError("concept bounds out of range")

    @property
    def sites(self) -> int:
        return self.cells.shape[1]

    def gap_mask(self) -> np.ndarray:
        return self.cells == GAP

    def row(self, taxon: str) -> np.ndarray:
        return self.cells[self.taxa.index(taxon)]

    def __eq__(self, other) -> bool:
        if not isinstance(other, CharacterMatrix):
            return NotImplemented
        return (
            self.taxa == other.taxa
            and self.concept_bounds == other.concept_bounds
            and np.array_equal(self.cells, other.cells)
        )

    def __repr__(self) -> str:
        return f"CharacterMatrix({len(self.taxa)} taxa, {self.sites} sites)"

    def to_alignment_text(self) -> str:
        """Relaxed phylip: a count header, then one name and row per taxon."""
        lines = [f"{len(self.taxa)} {self.sites}"]
        for t, taxon in enumerate(self.taxa):
            lines.append(f"{taxon}\t{''.join(self.cells[t])}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_alignment_text(cls, text: str) -> "CharacterMatrix":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise ParseError("empty alignment")
        head = lines[0].split()
        if len(head) != 2 or not all(p.isdigit() for p in head):
            raise ParseError("alignment header must be '<taxa> <sites>'", line=1)
        m, n = int(head[0]), int(head[1])
        if len(lines) - 1 != m:
            raise ParseError(f"expected {m} rows, found {len(lines) - 1}")
        taxa, rows = [], []
        for lineno, line in enumerate(lines[1:], start=2):
            parts = line.split(None, 1)
            if len(parts) != 2:
                raise ParseError("expected '<name> <row>'", line=lineno)
            name, row = parts[0], parts[1].replace(" ", "")
            if len(row) != n:
                raise ParseError(
                    f"row has {len(row)} sites, expected {n}", line=lineno
                )
            taxa.append(name)
            rows.append(list(row))
        return cls(taxa=taxa, cells=rows)

    def to_fasta(self) -> str:
        lines = []
        for t, taxon in enumerate(self.taxa):
            lines.append(f">{taxon}")
            lines.append("".join(self.cells[t]))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_fasta(cls, text: str) -> "CharacterMatrix":
        taxa, rows, current = [], [], None
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith(">"):
                name = line[1:].strip()
                if not name:
                    raise ParseError("empty FASTA header", line=lineno)
                taxa.append(name)
                current = []
                rows.append(current)
            else:
                if current is None:
                    raise ParseError("sequence before first header", line=lineno)
                current.extend(line)
        if not taxa:
            raise ParseError("no FASTA records")
        widths = {len(r) for r in rows}
        if len(widths) != 1:
            raise ParseError("FASTA rows have unequal lengths")
        return cls(taxa=taxa, cells=rows)

    def to_dict(self) -> dict:
        return {
            "taxa": list(self.taxa),
            "rows": ["".join(r) for r in self.cells],
            "concept_bounds": [list(b) for b in self.concept_bounds],
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "CharacterMatrix":
        try:
            taxa = payload["taxa"]
            rows = [list(r) for r in payload["rows"]]
            bounds = [tuple(b) for b in payload.get("concept_bounds", [])]
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"bad matrix payload: {exc}") from exc
        return cls(taxa=taxa, cells=rows, concept_bounds=bounds)


def build_character_matrix(
    wl: Wordlist,
    alphabet: ClassAlphabet | None = None,
    scoring: AlignScoring = AlignScoring(),
) -> CharacterMatrix:
    """Encode, align and concatenate a preprocessed wordlist.

    Every (language, concept) slot must hold at most one entry. Concepts
    with no encodable word are skipped with a warning; having fewer than two
    languages with any data raises :class:`InsufficientDataError`.
    """
    if alphabet is None:
        alphabet = soundclass.default_alphabet()
    slots = wl.entries_by_slot()
    for (language, concept), entries in slots.items():
        if len(entries) > 1:
            raise SchemaError(
                f"{language!r} / {concept!r} holds {len(entries)} forms; "
                f"reduce to one per slot first"
            )
    if len(wl.languages) < 2:
        raise InsufficientDataError("need at least 2 languages")
    populated = {e.language for e in wl.entries}
    if len(populated) < 2:
        raise InsufficientDataError("need at least 2 languages with data")

    columns: list[list[str]] = [[] for _ in wl.languages]
    bounds = []
    cursor = 0
    for concept in wl.concepts:
        seqs = []
        for language in wl.languages:
            entries = slots.get((language, concept))
            if not entries:
                seqs.append(())
                continue
            entry = entries[0]
            if entry.segments is not None:
                seqs.append(
                    soundclass.encode_segments(entry.segments, alphabet, form=entry.form)
                )
            else:
                seqs.append(soundclass.encode_form(entry.form, alphabet))
        if not any(seqs):
            logger.warning("concept %r has no encodable word; skipped", concept)
            continue
        alignment = progressive_align(seqs, scoring, concept)
        for row, aligned in zip(columns, alignment.rows):
            row.extend(aligned)
        bounds.append((concept, cursor, cursor + alignment.width))
        cursor += alignment.width

    if cursor == 0:
        raise InsufficientDataError("no alignable concepts")
    return CharacterMatrix(taxa=wl.languages, cells=columns, concept_bounds=bounds)
