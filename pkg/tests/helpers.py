"""Shared builders for synthetic wordlists, matrices, and models."""

from __future__ import annotations

import numpy as np

from relate.msa import CharacterMatrix
from relate.submodel import SubstitutionModel

CONSONANTS = "ptkbdgsznmrlfwjh"
VOWELS = "aeiou"


def wordlist_text(rows, header=("LANGUAGE", "CONCEPT", "FORM")) -> str:
    lines = ["\t".join(header)]
    for row in rows:
        lines.append("\t".join(str(x) for x in row))
    return "\n".join(lines) + "\n"


def random_word(rng: np.random.Generator, min_syllables: int = 2,
                max_syllables: int = 3) -> str:
    """CV-syllable word over segments the default class table covers."""
    n = int(rng.integers(min_syllables, max_syllables + 1))
    parts = []
    for _ in range(n):
        parts.append(str(rng.choice(list(CONSONANTS))))
        parts.append(str(rng.choice(list(VOWELS))))
    if rng.random() < 0.5:
        parts.append(str(rng.choice(list(CONSONANTS))))
    return "".join(parts)


def random_wordlist_rows(n_languages: int, n_concepts: int, seed: int,
                         missing: float = 0.0) -> list[tuple[str, str, str]]:
    """Unrelated languages: every slot drawn independently."""
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(n_languages):
        lang = f"L{i:02d}"
        for j in range(n_concepts):
            if missing and rng.random() < missing:
                continue
            rows.append((lang, f"c{j:03d}", random_word(rng)))
    return rows


def related_wordlist_rows(n_languages: int, n_concepts: int, seed: int,
                          mutation: float = 0.25) -> list[tuple[str, str, str]]:
    """Languages copied from one proto-stock with per-slot mutations."""
    rng = np.random.default_rng(seed)
    proto = [random_word(rng) for _ in range(n_concepts)]
    rows = []
    for i in range(n_languages):
        lang = f"L{i:02d}"
        for j in range(n_concepts):
            word = proto[j]
            if rng.random() < mutation:
                word = random_word(rng)
            rows.append((lang, f"c{j:03d}", word))
    return rows


def matrix_from_rows(taxa, rows, bounds=None) -> CharacterMatrix:
    cells = [list(r) for r in rows]
    if bounds is None:
        bounds = [("c0", 0, len(cells[0]))]
    return CharacterMatrix(taxa, cells, bounds)


def random_matrix(n_taxa: int, n_sites: int, states: str, seed: int,
                  gap_rate: float = 0.0) -> CharacterMatrix:
    rng = np.random.default_rng(seed)
    symbols = list(states)
    cells = rng.choice(symbols, size=(n_taxa, n_sites))
    if gap_rate:
        mask = rng.random((n_taxa, n_sites)) < gap_rate
        cells = np.where(mask, "-", cells)
    taxa = [f"t{i}" for i in range(n_taxa)]
    return CharacterMatrix(taxa, cells, [("c0", 0, n_sites)])


def random_freq_model(n_states: int, seed: int, p_inv: float = 0.0,
                      gamma_shape: float | None = None,
                      n_rate_cats: int = 1) -> SubstitutionModel:
    rng = np.random.default_rng(seed)
    freqs = rng.dirichlet(np.full(n_states, 5.0))
    alphabet = tuple("ABCDEFGHIJ"[:n_states])
    mu = 1.0 / (1.0 - float(freqs @ freqs))
    return SubstitutionModel(
        alphabet=alphabet,
        freqs=tuple(freqs),
        mu=mu,
        p_inv=p_inv,
        gamma_shape=gamma_shape,
        n_rate_cats=n_rate_cats,
    )


def leaf_symbol_map(tree, matrix) -> dict[int, list[str]]:
    """Bridge a Phylogeny + CharacterMatrix into oracle-friendly form."""
    return {tree.leaf_node(name): list(matrix.row(name))
            for name in matrix.taxa}
