"""Permutation test of multilateral lexical similarity.

Word distances are crude by design: two words count as similar when their
first consonant classes (or first two, for the stricter variant) agree.
Language distance is the mean word distance over concepts both languages
attest; cluster distance is the mean over all cross-language pairs. The
significance of a fixed cluster pair is the probability, under independent
per-language shuffles of words across attested concept slots, of a cluster
distance at most as small as the observed one. Shuffling only within a
language preserves each language's sound inventory and gap pattern while
destroying any cross-language alignment of meanings.

The merge tree cannot reuse the fixed-pair null: agglomeration picks out
whichever clusters happen to look similar, so every merge it reports is
biased low relative to a null that holds the pair fixed. Each permutation
is therefore clustered from scratch and merges of equal rank are compared.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass
from typing import IO, Mapping, NamedTuple

import numpy as np

from . import soundclass
from .errors import (
    DistanceUndefinedError,
    EmptyInputError,
    ExternalLookupError,
    InsufficientDataError,
    ParseError,
    SchemaError,
)
from .lexdata import Wordlist
from .soundclass import ClassAlphabet, ClassSequence

logger = logging.getLogger(__name__)

P1_DOLGO = "P1_DOLGO"
TURCHIN = "TURCHIN"
EXTERNAL = "EXTERNAL"

RELATED = "RELATED"
NOT_SUPPORTED = "NOT_SUPPORTED"

#: Seed offset between pairwise-table cells, so each pair's permutation
#: batch draws from its own stream.
PAIR_SEED_STRIDE = 104729


@dataclass(frozen=True)
class WordMetric:
    """A word-level distance: a named rule or an externally supplied table."""

    name: str
    external_table: Mapping[tuple[str, str, str, str], float] | None = None

    def __post_init__(self):
        if self.name not in (P1_DOLGO, TURCHIN, EXTERNAL):
            raise SchemaError(f"unknown metric {self.name!r}")
        if self.name == EXTERNAL and self.external_table is None:
            raise SchemaError("EXTERNAL metric requires a distance table")
        if self.name != EXTERNAL and self.external_table is not None:
            raise SchemaError(f"{self.name} does not take a distance table")

    @classmethod
    def p1_dolgo(cls) -> "WordMetric":
        return cls(name=P1_DOLGO)

    @classmethod
    def turchin(cls) -> "WordMetric":
        return cls(name=TURCHIN)

    @classmethod
    def external(cls, table) -> "WordMetric":
        return cls(name=EXTERNAL, external_table=table)


def load_external_table(source: IO | bytes | str) -> dict[tuple[str, str, str, str], float]:
    """Read a word-distance table from TSV.

    Columns LANG_A, WORD_A, LANG_B, WORD_B, DIST. Both orientations of each
    pair are stored so lookups need not worry about order.
    """
    if isinstance(source, bytes):
        text = source.decode("utf-8")
    elif isinstance(source, str):
        text = source
    else:
        raw = source.read()
        text = raw.decode("utf-8") if isinstance(raw, bytes) else raw
    if not text.strip():
        raise EmptyInputError("distance table is empty")
    reader = csv.reader(io.StringIO(text), delimiter="\t")
    header = [h.strip() for h in next(reader)]
    required = ["LANG_A", "WORD_A", "LANG_B", "WORD_B", "DIST"]
    if any(col not in header for col in required):
        raise SchemaError(f"distance table needs columns {required}, got {header}")
    idx = {col: header.index(col) for col in required}
    table: dict[tuple[str, str, str, str], float] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields", line=lineno)
        la, wa = row[idx["LANG_A"]].strip(), row[idx["WORD_A"]].strip()
        lb, wb = row[idx["LANG_B"]].strip(), row[idx["WORD_B"]].strip()
        try:
            dist = float(row[idx["DIST"]].strip())
        except ValueError:
            raise ParseError("DIST must be a number", line=lineno) from None
        if dist < 0:
            raise ParseError("DIST must be non-negative", line=lineno)
        table[(la, wa, lb, wb)] = dist
        table[(lb, wb, la, wa)] = dist
    return table


def word_distance(metric: WordMetric, a: ClassSequence, b: ClassSequence) -> float:
    """Distance between two encoded words under a named rule.

    The EXTERNAL metric needs language context and is rejected here; use
    the wordlist-level operations for it.
    """
    if metric.name == EXTERNAL:
        raise SchemaError("EXTERNAL distances require language context")
    if not a and not b:
        return 0.0
    if not a or not b:
        return 1.0
    if metric.name == P1_DOLGO:
        return 0.0 if a[0] == b[0] else 1.0
    k = min(2, len(a), len(b))
    return 0.0 if a[:k] == b[:k] else 1.0


_NO_WORD = -9
_EMPTY = -1
_NO_SECOND = -1


class _Engine:
    """Per-wordlist caches that make permutation batches cheap.

    Every language gets an integer array over concepts pointing into its
    word list (``_NO_WORD`` marks empty slots); metric-specific arrays over
    words make a pair distance a handful of vectorized comparisons.
    Permutations shuffle the pointer arrays, never the caches.
    """

    def __init__(self, metric: WordMetric, wl: Wordlist, alphabet: ClassAlphabet | None):
        if alphabet is None and metric.name != EXTERNAL:
            alphabet = soundclass.default_alphabet()
        self.metric = metric
        self.languages = wl.languages
        self.concepts = wl.concepts
        slots = wl.entries_by_slot()
        for (language, concept), entries in slots.items():
            if len(entries) > 1:
                raise SchemaError(
                    f"{language!r} / {concept!r} holds {len(entries)} forms; "
                    f"reduce to one per slot first"
                )

        self.slot_word: dict[str, np.ndarray] = {}
        self.forms: dict[str, list[str]] = {}
        self.first: dict[str, np.ndarray] = {}
        self.second: dict[str, np.ndarray] = {}
        class_index = (
            {c: i for i, c in enumerate(alphabet.classes)} if alphabet else {}
        )
        for language in wl.languages:
            pointers = np.full(len(wl.concepts), _NO_WORD, dtype=np.int64)
            forms: list[str] = []
            firsts: list[int] = []
            seconds: list[int] = []
            for c, concept in enumerate(wl.concepts):
                entries = slots.get((language, concept))
                if not entries:
                    continue
                entry = entries[0]
                pointers[c] = len(forms)
                forms.append(entry.form)
                if metric.name != EXTERNAL:
                    if entry.segments is not None:
                        seq = soundclass.encode_segments(
                            entry.segments, alphabet, form=entry.form
                        )
                    else:
                        seq = soundclass.encode_form(entry.form, alphabet)
                    firsts.append(class_index[seq[0]] if seq else _EMPTY)
                    seconds.append(
                        class_index[seq[1]] if len(seq) > 1 else _NO_SECOND
                    )
            self.slot_word[language] = pointers
            self.forms[language] = forms
            self.first[language] = np.asarray(firsts, dtype=np.int64)
            self.second[language] = np.asarray(seconds, dtype=np.int64)

        self._pair_table: dict[tuple[str, str], np.ndarray] = {}

    def _external_matrix(self, lang_a: str, lang_b: str) -> np.ndarray:
        """Dense word-by-word distance matrix for one language pair.

        Built eagerly over all word combinations because a permutation can
        pair any two attested words; a hole in the table is an error even
        if the observed arrangement never hits it.
        """
        key = (lang_a, lang_b)
        cached = self._pair_table.get(key)
        if cached is not None:
            return cached
        table = self.metric.external_table
        out = np.empty((len(self.forms[lang_a]), len(self.forms[lang_b])))
        for i, form_a in enumerate(self.forms[lang_a]):
            for j, form_b in enumerate(self.forms[lang_b]):
                value = table.get((lang_a, form_a, lang_b, form_b))
                if value is None:
                    raise ExternalLookupError(
                        f"no distance for {lang_a!r} {form_a!r} vs "
                        f"{lang_b!r} {form_b!r}"
                    )
                out[i, j] = value
        self._pair_table[key] = out
        self._pair_table[(lang_b, lang_a)] = out.T
        return out

    def language_distance(
        self,
        lang_a: str,
        lang_b: str,
        slots_a: np.ndarray | None = None,
        slots_b: np.ndarray | None = None,
    ) -> float:
        wa = self.slot_word[lang_a] if slots_a is None else slots_a
        wb = self.slot_word[lang_b] if slots_b is None else slots_b
        shared = (wa != _NO_WORD) & (wb != _NO_WORD)
        n = int(shared.sum())
        if n == 0:
            raise DistanceUndefinedError(
                f"{lang_a!r} and {lang_b!r} share no attested concepts"
            )
        ia, ib = wa[shared], wb[shared]
        if self.metric.name == EXTERNAL:
            values = self._external_matrix(lang_a, lang_b)[ia, ib]
            return float(values.mean())
        fa, fb = self.first[lang_a][ia], self.first[lang_b][ib]
        if self.metric.name == P1_DOLGO:
            return float(np.mean(fa != fb))
        sa, sb = self.second[lang_a][ia], self.second[lang_b][ib]
        equal = (fa == fb) & ((sa == sb) | (sa == _NO_SECOND) | (sb == _NO_SECOND))
        return float(1.0 - np.mean(equal))

    def cluster_distance(
        self,
        cluster_a,
        cluster_b,
        slots: dict[str, np.ndarray] | None = None,
    ) -> float:
        total = 0.0
        for lang_a in cluster_a:
            for lang_b in cluster_b:
                total += self.language_distance(
                    lang_a,
                    lang_b,
                    None if slots is None else slots[lang_a],
                    None if slots is None else slots[lang_b],
                )
        return total / (len(cluster_a) * len(cluster_b))

    def permuted_slots(
        self, languages, rng: np.random.Generator
    ) -> dict[str, np.ndarray]:
        """Shuffle each language's words across its attested slots."""
        out = {}
        for language in sorted(languages):
            pointers = self.slot_word[language].copy()
            attested = np.nonzero(pointers != _NO_WORD)[0]
            pointers[attested] = rng.permutation(pointers[attested])
            out[language] = pointers
        return out


def _check_clusters(wl: Wordlist, cluster_a, cluster_b):
    a, b = set(cluster_a), set(cluster_b)
    if not a or not b:
        raise SchemaError("clusters must be non-empty")
    if a & b:
        raise SchemaError(f"clusters overlap on {sorted(a & b)}")
    stray = (a | b) - set(wl.languages)
    if stray:
        raise SchemaError(f"unknown languages {sorted(stray)}")


def language_distance(
    metric: WordMetric,
    wl: Wordlist,
    lang_a: str,
    lang_b: str,
    alphabet: ClassAlphabet | None = None,
) -> float:
    """Mean word distance over the concepts both languages attest."""
    _check_clusters(wl, [lang_a], [lang_b])
    return _Engine(metric, wl, alphabet).language_distance(lang_a, lang_b)


def cluster_distance(
    metric: WordMetric,
    wl: Wordlist,
    cluster_a,
    cluster_b,
    alphabet: ClassAlphabet | None = None,
) -> float:
    """Mean language distance over all cross-cluster pairs."""
    _check_clusters(wl, cluster_a, cluster_b)
    return _Engine(metric, wl, alphabet).cluster_distance(
        sorted(cluster_a), sorted(cluster_b)
    )


class PermutationResult(NamedTuple):
    s_hat: float
    p_value: float
    expected_distance: float
    degenerate: bool


def _significance(
    engine: _Engine,
    cluster_a,
    cluster_b,
    n_perm: int,
    seed: int,
) -> tuple[float, PermutationResult]:
    cluster_a, cluster_b = sorted(cluster_a), sorted(cluster_b)
    observed = engine.cluster_distance(cluster_a, cluster_b)
    rng = np.random.default_rng(seed)
    union = cluster_a + cluster_b
    draws = np.empty(n_perm)
    for i in range(n_perm):
        slots = engine.permuted_slots(union, rng)
        draws[i] = engine.cluster_distance(cluster_a, cluster_b, slots)
    expected = float(draws.mean())
    p_value = (int(np.count_nonzero(draws <= observed)) + 1) / (n_perm + 1)
    degenerate = expected == 0.0
    if degenerate:
        logger.warning(
            "all permuted distances are zero for %r vs %r", cluster_a, cluster_b
        )
        s_hat = 0.0
    else:
        s_hat = (expected - observed) / expected
    return observed, PermutationResult(
        s_hat=float(s_hat),
        p_value=float(p_value),
        expected_distance=expected,
        degenerate=degenerate,
    )


def permutation_significance(
    metric: WordMetric,
    wl: Wordlist,
    cluster_a,
    cluster_b,
    n_perm: int = 1000,
    seed: int = 42,
    alphabet: ClassAlphabet | None = None,
) -> PermutationResult:
    """Similarity score and permutation p-value for one cluster pair.

    The score is the relative drop of the observed cluster distance below
    its permutation expectation; the p-value uses the add-one estimator
    (count of permuted distances at most the observed, plus one, over
    ``n_perm`` plus one).
    """
    if n_perm < 1:
        raise ValueError("need at least one permutation")
    _check_clusters(wl, cluster_a, cluster_b)
    engine = _Engine(metric, wl, alphabet)
    _, result = _significance(engine, cluster_a, cluster_b, n_perm, seed)
    return result


@dataclass(frozen=True)
class Merge:
    """One agglomeration step with its statistics."""

    left: tuple[str, ...]
    right: tuple[str, ...]
    distance: float
    s_hat: float
    p_value: float
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {
            "left": list(self.left),
            "right": list(self.right),
            "distance": self.distance,
            "s_hat": self.s_hat,
            "p": self.p_value,
            "degenerate": self.degenerate,
        }


@dataclass(frozen=True)
class MergeTree:
    """Agglomerative clustering of the languages with per-merge statistics.

    The last merge joins everything; its p-value is the multilateral test
    of the whole group.
    """

    languages: tuple[str, ...]
    merges: tuple[Merge, ...]

    @property
    def root(self) -> Merge:
        return self.merges[-1]

    def verdict(self, alpha: float = 0.05) -> str:
        return RELATED if self.root.p_value < alpha else NOT_SUPPORTED

    def to_dict(self) -> dict:
        return {
            "languages": list(self.languages),
            "merges": [m.to_dict() for m in self.merges],
            "verdict": self.verdict(),
        }


def _pair_matrix(
    engine: _Engine,
    languages: list[str],
    slots: dict[str, np.ndarray] | None = None,
) -> np.ndarray:
    out = np.zeros((len(languages), len(languages)))
    for i, lang_a in enumerate(languages):
        for j in range(i + 1, len(languages)):
            lang_b = languages[j]
            out[i, j] = out[j, i] = engine.language_distance(
                lang_a,
                lang_b,
                None if slots is None else slots[lang_a],
                None if slots is None else slots[lang_b],
            )
    return out


def _agglomerate(
    base: np.ndarray, languages: list[str]
) -> list[tuple[tuple[str, ...], tuple[str, ...], float]]:
    """Average-linkage merge sequence over a language distance matrix.

    Candidate distances are recomputed from the base matrix as the mean
    over all cross-language pairs, so heights match ``cluster_distance``
    exactly rather than drifting through incremental linkage updates.
    """
    index = {lang: k for k, lang in enumerate(languages)}
    clusters = [(lang,) for lang in languages]
    rows = {cluster: [index[cluster[0]]] for cluster in clusters}
    stages = []
    while len(clusters) > 1:
        best = None
        for i in range(len(clusters)):
            for j in range(i + 1, len(clusters)):
                block = base[np.ix_(rows[clusters[i]], rows[clusters[j]])]
                key = (float(block.mean()), tuple(sorted((clusters[i], clusters[j]))))
                if best is None or key < best[0]:
                    best = (key, i, j)
        (distance, (left, right)), i, j = best
        stages.append((left, right, distance))
        merged = tuple(sorted(left + right))
        rows[merged] = sorted(rows[clusters[i]] + rows[clusters[j]])
        clusters = [c for k, c in enumerate(clusters) if k not in (i, j)]
        clusters.append(merged)
    return stages


def run_permtest(
    metric: WordMetric,
    wl: Wordlist,
    n_perm: int = 1000,
    seed: int = 42,
    alphabet: ClassAlphabet | None = None,
) -> MergeTree:
    """Cluster languages bottom-up, testing every merge against permutations.

    Average-linkage agglomeration on the language distance matrix: the
    closest cluster pair (ties to the lexicographically smallest pair)
    merges first. Every permutation replicate reshuffles each language and
    is clustered from scratch, and the k-th merge of the data is compared
    against the k-th merge of each replicate; average-linkage heights never
    decrease across steps, so equal ranks are the comparable events. A null
    that held the observed pair fixed would ignore that agglomeration
    deliberately picks similar clusters and would push root p-values
    toward 1 even on random data.
    """
    if n_perm < 1:
        raise ValueError("need at least one permutation")
    if len(wl.languages) < 2:
        raise InsufficientDataError("clustering needs at least 2 languages")
    engine = _Engine(metric, wl, alphabet)
    languages = sorted(wl.languages)
    observed = _agglomerate(_pair_matrix(engine, languages), languages)
    rng = np.random.default_rng(seed)
    heights = np.empty((n_perm, len(observed)))
    for r in range(n_perm):
        slots = engine.permuted_slots(languages, rng)
        stages = _agglomerate(_pair_matrix(engine, languages, slots), languages)
        heights[r] = [h for _, _, h in stages]
    merges: list[Merge] = []
    for k, (left, right, distance) in enumerate(observed):
        draws = heights[:, k]
        expected = float(draws.mean())
        p_value = (int(np.count_nonzero(draws <= distance)) + 1) / (n_perm + 1)
        degenerate = expected == 0.0
        if degenerate:
            logger.warning(
                "all permuted merge heights are zero at rank %d (%r vs %r)",
                k,
                left,
                right,
            )
            s_hat = 0.0
        else:
            s_hat = (expected - distance) / expected
        merges.append(
            Merge(
                left=left,
                right=right,
                distance=float(distance),
                s_hat=float(s_hat),
                p_value=float(p_value),
                degenerate=degenerate,
            )
        )
    return MergeTree(languages=wl.languages, merges=tuple(merges))


def pairwise_significance(
    metric: WordMetric,
    wl: Wordlist,
    n_perm: int = 1000,
    seed: int = 42,
    alphabet: ClassAlphabet | None = None,
) -> list[dict]:
    """Permutation statistics for every language pair, as TSV-ready rows."""
    engine = _Engine(metric, wl, alphabet)
    rows = []
    pair_no = 0
    for i, lang_a in enumerate(wl.languages):
        for lang_b in wl.languages[i + 1 :]:
            pair_no += 1
            pair_seed = seed + pair_no * PAIR_SEED_STRIDE
            observed, result = _significance(
                engine, [lang_a], [lang_b], n_perm, pair_seed
            )
            rows.append(
                {
                    "LANG_A": lang_a,
                    "LANG_B": lang_b,
                    "DIST": observed,
                    "S_HAT": result.s_hat,
                    "P": result.p_value,
                }
            )
    return rows
