"""Unrooted phylogenies, Newick input and output, and tree likelihoods.

A tree is stored as a symmetric adjacency map from node id to
{neighbor: branch length}. Leaves carry taxon names; internal nodes are
anonymous and, in a :class:`Phylogeny`, have degree three (trees with fewer
than three leaves degenerate to a single edge or a single node).

Likelihoods follow the pruning algorithm with per-site rescaling, so
underflow cannot occur for any usable matrix size. Sites are a mixture of
an invariant component (weight ``p_inv``) and the variable component
averaged over the model's rate categories; the invariant component of a
site is the stationary probability of its shared state when the non-gap
cells agree and zero otherwise.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass

import numpy as np

from .errors import (
    NumericalUnderflowError,
    ParseError,
    SchemaError,
    TaxaMismatchError,
)
from .msa import CharacterMatrix
from .soundclass import GAP
from .submodel import SubstitutionModel, transition_prob

#: Bounds applied to branch lengths during inference.
MIN_BRANCH_LENGTH = 1e-6
MAX_BRANCH_LENGTH = 10.0

#: Length substituted for branches a Newick string leaves unspecified.
DEFAULT_BRANCH_LENGTH = 0.05


class Phylogeny:
    """Unrooted binary tree over named leaves.

    ``adjacency`` maps node id to {neighbor id: branch length} and is kept
    symmetric; ``leaf_names`` names exactly the degree-one nodes. The
    structure is mutable (search code adjusts lengths and swaps subtrees in
    place) and revalidated only on construction.
    """

    def __init__(self, adjacency: dict[int, dict[int, float]], leaf_names: dict[int, str]):
        self.adjacency = {u: dict(nbrs) for u, nbrs in adjacency.items()}
        self.leaf_names = dict(leaf_names)
        self._validate()

    def _validate(self):
        nodes = set(self.adjacency)
        if not nodes:
            raise SchemaError("tree has no nodes")
        n_edges = 0
        for u, nbrs in self.adjacency.items():
            for v, length in nbrs.items():
                if v not in nodes:
                    raise SchemaError(f"edge to unknown node {v}")
                if self.adjacency[v].get(u) != length:
                    raise SchemaError(f"asymmetric edge ({u}, {v})")
                if length < 0:
                    raise SchemaError(f"negative branch length on ({u}, {v})")
                n_edges += 1
        n_edges //= 2
        seen = {next(iter(nodes))}
        stack = list(seen)
        while stack:
            u = stack.pop()
            for v in self.adjacency[u]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        if seen != nodes:
            raise SchemaError("tree is not connected")
        if n_edges != len(nodes) - 1:
            raise SchemaError("tree contains a cycle")
        names = list(self.leaf_names.values())
        if len(set(names)) != len(names):
            raise SchemaError("duplicate leaf names")
        for u in nodes:
            degree = len(self.adjacency[u])
            if degree <= 1:
                if u not in self.leaf_names:
                    raise SchemaError(f"unnamed leaf node {u}")
            elif u in self.leaf_names:
                raise SchemaError(f"named internal node {u}")
            elif degree != 3:
                raise SchemaError(f"internal node {u} has degree {degree}, not 3")

    # -- structure queries -------------------------------------------------

    @property
    def n_leaves(self) -> int:
        return len(self.leaf_names)

    @property
    def taxa(self) -> tuple[str, ...]:
        return tuple(sorted(self.leaf_names.values()))

    def leaf_node(self, name: str) -> int:
        for node, leaf in self.leaf_names.items():
            if leaf == name:
                return node
        raise KeyError(name)

    def is_leaf(self, node: int) -> bool:
        return node in self.leaf_names

    def neighbors(self, node: int) -> tuple[int, ...]:
        return tuple(sorted(self.adjacency[node]))

    def edges(self) -> tuple[tuple[int, int, float], ...]:
        out = []
        for u, nbrs in self.adjacency.items():
            for v, length in nbrs.items():
                if u < v:
                    out.append((u, v, length))
        return tuple(sorted(out))

    def internal_edges(self) -> tuple[tuple[int, int], ...]:
        return tuple(
            (u, v) for u, v, _ in self.edges()
            if not self.is_leaf(u) and not self.is_leaf(v)
        )

    def length(self, u: int, v: int) -> float:
        return self.adjacency[u][v]

    def set_length(self, u: int, v: int, value: float):
        if value < 0:
            raise ValueError("branch length must be non-negative")
        if v not in self.adjacency[u]:
            raise KeyError(f"no edge ({u}, {v})")
        self.adjacency[u][v] = value
        self.adjacency[v][u] = value

    def total_length(self) -> float:
        return sum(length for _, _, length in self.edges())

    def copy(self) -> "Phylogeny":
        dup = object.__new__(Phylogeny)
        dup.adjacency = {u: dict(nbrs) for u, nbrs in self.adjacency.items()}
        dup.leaf_names = dict(self.leaf_names)
        return dup

    def __repr__(self) -> str:
        return f"Phylogeny({self.n_leaves} leaves)"


# -- Newick ----------------------------------------------------------------

_UNQUOTED_LABEL = re.compile(r"[^\s,():;\[\]']+")
_NUMBER = re.compile(r"[-+]?(\d+\.?\d*|\.\d+)([eE][-+]?\d+)?")


class _NewickReader:
    """Recursive-descent reader producing (label, length, children) nodes."""

    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def error(self, message: str) -> ParseError:
        return ParseError(message, position=self.pos)

    def skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self) -> str:
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def read_tree(self) -> dict:
        self.skip_ws()
        node = self.read_subtree()
        self.skip_ws()
        if self.peek() != ";":
            raise self.error("expected ';' at end of tree")
        self.pos += 1
        self.skip_ws()
        if self.pos != len(self.text):
            raise self.error("trailing text after ';'")
        return node

    def read_subtree(self) -> dict:
        self.skip_ws()
        children = []
        if self.peek() == "(":
            self.pos += 1
            while True:
                children.append(self.read_subtree())
                self.skip_ws()
                if self.peek() == ",":
                    self.pos += 1
                    continue
                if self.peek() == ")":
                    self.pos += 1
                    break
                raise self.error("expected ',' or ')'")
        label = self.read_label()
        length = None
        self.skip_ws()
        if self.peek() == ":":
            self.pos += 1
            length = self.read_number()
        if not children and not label:
            raise self.error("leaf without a label")
        return {"label": label, "length": length, "children": children}

    def read_label(self) -> str:
        self.skip_ws()
        if self.peek() == "'":
            self.pos += 1
            out = []
            while True:
                if self.pos >= len(self.text):
                    raise self.error("unterminated quoted label")
                ch = self.text[self.pos]
                if ch == "'":
                    if self.text[self.pos : self.pos + 2] == "''":
                        out.append("'")
                        self.pos += 2
                        continue
                    self.pos += 1
                    return "".join(out)
                out.append(ch)
                self.pos += 1
        match = _UNQUOTED_LABEL.match(self.text, self.pos)
        if not match:
            return ""
        self.pos = match.end()
        return match.group()

    def read_number(self) -> float:
        self.skip_ws()
        match = _NUMBER.match(self.text, self.pos)
        if not match:
            raise self.error("expected a branch length after ':'")
        self.pos = match.end()
        value = float(match.group())
        if value < 0:
            raise ParseError("negative branch length", position=self.pos)
        return value


def _topology_from_text(
    text: str, default_length: float = DEFAULT_BRANCH_LENGTH
) -> tuple[dict[int, dict[int, float]], dict[int, str]]:
    """Parse Newick into a cleaned unrooted adjacency.

    Unnamed dangling nodes are removed and degree-two nodes (including a
    rooted tree's root) are fused, their lengths summed. Multifurcations
    are preserved; callers decide whether to allow them.
    """
    if not text or not text.strip():
        raise ParseError("empty Newick input")
    ast = _NewickReader(text).read_tree()

    adjacency: dict[int, dict[int, float]] = {}
    labels: dict[int, str] = {}
    counter = 0

    def add_node() -> int:
        nonlocal counter
        adjacency[counter] = {}
        counter += 1
        return counter - 1

    def build(node: dict) -> int:
        idx = add_node()
        if node["label"] and not node["children"]:
            labels[idx] = node["label"]
        for child in node["children"]:
            cidx = build(child)
            length = child["length"]
            if length is None:
                length = default_length
            adjacency[idx][cidx] = length
            adjacency[cidx][idx] = length
        return idx

    build(ast)

    changed = True
    while changed:
        changed = False
        for node in list(adjacency):
            degree = len(adjacency[node])
            if degree == 0 and len(adjacency) > 1:
                del adjacency[node]
                changed = True
            elif degree == 1 and node not in labels:
                (nbr,) = adjacency[node]
                del adjacency[nbr][node]
                del adjacency[node]
                changed = True
            elif degree == 2 and node not in labels:
                (a, la), (b, lb) = sorted(adjacency[node].items())
                del adjacency[a][node]
                del adjacency[b][node]
                del adjacency[node]
                adjacency[a][b] = la + lb
                adjacency[b][a] = la + lb
                changed = True

    names = list(labels.values())
    if len(set(names)) != len(names):
        duplicate = sorted({n for n in names if names.count(n) > 1})
        raise ParseError(f"duplicate leaf labels {duplicate}")
    leaf_names = {node: labels[node] for node in adjacency if node in labels}
    if not leaf_names:
        raise ParseError("tree has no labeled leaves")
    for node in adjacency:
        if len(adjacency[node]) <= 1 and node not in leaf_names:
            raise ParseError("tree retains an unlabeled leaf")
    return adjacency, leaf_names


def parse_newick(text: str) -> Phylogeny:
    """Parse a Newick string into an unrooted binary :class:`Phylogeny`.

    Rooted inputs are unrooted by fusing the degree-two root; missing
    branch lengths default to ``DEFAULT_BRANCH_LENGTH``. Multifurcations
    raise :class:`ParseError` here; use the gold-tree reader for those.
    """
    adjacency, leaf_names = _topology_from_text(text)
    for node, nbrs in adjacency.items():
        if len(nbrs) > 3:
            raise ParseError(
                f"node of degree {len(nbrs)} is a multifurcation; "
                f"binary tree required"
            )
    return Phylogeny(adjacency, leaf_names)


def _format_length(x: float) -> str:
    return f"{x:.10g}"


def _format_label(name: str) -> str:
    if re.fullmatch(_UNQUOTED_LABEL, name):
        return name
    return "'" + name.replace("'", "''") + "'"


def write_newick(tree: Phylogeny) -> str:
    """Canonical Newick: anchored at the internal node next to the smallest
    leaf, children ordered by their smallest contained leaf, lengths with 10
    significant digits. Equal trees therefore serialize identically."""
    if tree.n_leaves == 1:
        (node,) = tree.leaf_names
        return f"{_format_label(tree.leaf_names[node])};"
    if tree.n_leaves == 2:
        (a, b) = sorted(tree.leaf_names.values())
        node_a = tree.leaf_node(a)
        total = tree.length(node_a, tree.neighbors(node_a)[0])
        return f"({_format_label(a)}:{_format_length(total)},{_format_label(b)}:0);"

    smallest = min(tree.leaf_names.values())
    anchor = tree.neighbors(tree.leaf_node(smallest))[0]

    def render(node: int, parent: int) -> tuple[str, str]:
        length = tree.length(parent, node)
        if tree.is_leaf(node):
            name = tree.leaf_names[node]
            return f"{_format_label(name)}:{_format_length(length)}", name
        parts = sorted(
            (render(child, node) for child in tree.neighbors(node) if child != parent),
            key=lambda pair: pair[1],
        )
        inner = ",".join(text for text, _ in parts)
        return f"({inner}):{_format_length(length)}", min(m for _, m in parts)

    parts = sorted(
        (render(child, anchor) for child in tree.neighbors(anchor)),
        key=lambda pair: pair[1],
    )
    return "(" + ",".join(text for text, _ in parts) + ");"


def random_tree(
    labels,
    seed: int = 42,
    min_length: float = 0.05,
    max_length: float = 0.5,
) -> Phylogeny:
    """Random binary topology over ``labels`` with uniform branch lengths.

    Leaves are attached one at a time to a uniformly chosen existing edge;
    the same seed always yields the same tree.
    """
    labels = list(labels)
    if len(labels) < 2:
        raise ValueError("need at least 2 labels")
    if len(set(labels)) != len(labels):
        raise ValueError("labels must be distinct")
    rng = random.Random(seed)

    def draw() -> float:
        return rng.uniform(min_length, max_length)

    leaf_names = {i: name for i, name in enumerate(labels)}
    if len(labels) == 2:
        length = draw()
        return Phylogeny({0: {1: length}, 1: {0: length}}, leaf_names)

    adjacency: dict[int, dict[int, float]] = {i: {} for i in range(len(labels))}
    center = len(labels)
    adjacency[center] = {}
    for leaf in (0, 1, 2):
        length = draw()
        adjacency[center][leaf] = length
        adjacency[leaf][center] = length
    next_id = center + 1
    for leaf in range(3, len(labels)):
        edges = sorted(
            (u, v) for u, nbrs in adjacency.items() for v in nbrs if u < v
        )
        u, v = edges[rng.randrange(len(edges))]
        old = adjacency[u][v]
        split = rng.random()
        joint = next_id
        next_id += 1
        del adjacency[u][v], adjacency[v][u]
        adjacency[joint] = {}
        adjacency[u][joint] = old * split
        adjacency[joint][u] = old * split
        adjacency[joint][v] = old * (1 - split)
        adjacency[v][joint] = old * (1 - split)
        pendant = draw()
        adjacency[joint][leaf] = pendant
        adjacency[leaf][joint] = pendant
    return Phylogeny(adjacency, leaf_names)


# -- likelihood ------------------------------------------------------------


@dataclass(frozen=True)
class LikelihoodResult:
    total_log_likelihood: float
    per_site_log_likelihoods: np.ndarray


@dataclass(frozen=True)
class SitePrep:
    """Matrix recoded against a model: integer states and the per-site
    invariant-component likelihoods."""

    taxa: tuple[str, ...]
    codes: np.ndarray      # (m, N) state indices, -1 at gaps
    log_inv: np.ndarray    # (N,) log invariant contribution


def prepare_sites(model: SubstitutionModel, matrix: CharacterMatrix) -> SitePrep:
    """Recode a matrix for repeated likelihood evaluation under ``model``."""
    codes = np.full(matrix.cells.shape, -1, dtype=np.int16)
    for idx, symbol in enumerate(model.alphabet):
        codes[matrix.cells == symbol] = idx
    unknown = (codes < 0) & (matrix.cells != GAP)
    if unknown.any():
        rows, cols = np.nonzero(unknown)
        symbol = matrix.cells[rows[0], cols[0]]
        raise ValueError(f"matrix symbol {symbol!r} is not a model state")

    top = codes.max(axis=0)
    all_gap = top < 0
    uniform = np.all((codes == top[None, :]) | (codes < 0), axis=0) & ~all_gap
    inv = np.zeros(matrix.sites)
    inv[uniform] = model.freqs[top[uniform]]
    inv[all_gap] = 1.0
    with np.errstate(divide="ignore"):
        log_inv = np.log(inv)
    return SitePrep(taxa=matrix.taxa, codes=codes, log_inv=log_inv)


def _check_taxa(tree: Phylogeny, prep: SitePrep):
    tree_taxa = set(tree.leaf_names.values())
    matrix_taxa = set(prep.taxa)
    if tree_taxa != matrix_taxa:
        raise TaxaMismatchError(
            "tree and matrix name different taxa",
            missing=matrix_taxa - tree_taxa,
            extra=tree_taxa - matrix_taxa,
        )


def _default_root(tree: Phylogeny) -> int:
    node = tree.leaf_node(min(tree.leaf_names.values()))
    if tree.n_leaves <= 2:
        return node
    return tree.neighbors(node)[0]


def _leaf_partial(model: SubstitutionModel, codes_row: np.ndarray) -> np.ndarray:
    states = np.arange(model.n_states)[:, None]
    return ((codes_row[None, :] == states) | (codes_row[None, :] < 0)).astype(float)


def _root_partial(
    tree: Phylogeny,
    model: SubstitutionModel,
    codes: np.ndarray,
    row_of: dict[int, int],
    root: int,
    rate: float,
    block: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Scaled partial likelihoods at ``root`` and the per-site log scale.

    ``block`` hides one neighbor of ``root``, which evaluates the partial of
    the component on ``root``'s side of that edge.
    """
    order = []
    stack = [(root, block)]
    while stack:
        node, parent = stack.pop()
        order.append((node, parent))
        for nbr in tree.neighbors(node):
            if nbr != parent:
                stack.append((nbr, node))

    n_sites = codes.shape[1]
    partial: dict[int, np.ndarray] = {}
    scale_log: dict[int, np.ndarray] = {}
    for node, parent in reversed(order):
        children = [nbr for nbr in tree.neighbors(node) if nbr != parent]
        if tree.is_leaf(node):
            value = _leaf_partial(model, codes[row_of[node]])
            logs = np.zeros(n_sites)
        else:
            value = np.ones((model.n_states, n_sites))
            logs = np.zeros(n_sites)
        for child in children:
            p = transition_prob(model, tree.length(node, child), rate)
            value = value * (p @ partial.pop(child))
            logs = logs + scale_log.pop(child)
        if children:
            peak = value.max(axis=0)
            if not np.all(peak > 0):
                site = int(np.nonzero(peak <= 0)[0][0])
                raise NumericalUnderflowError(
                    f"partial likelihood underflowed at site {site}"
                )
            value = value / peak
            logs = logs + np.log(peak)
        partial[node] = value
        scale_log[node] = logs
    return partial[root], scale_log[root]


def _variable_site_logs(
    tree: Phylogeny,
    model: SubstitutionModel,
    prep: SitePrep,
    root: int,
) -> np.ndarray:
    """Log likelihood of each site's variable component, per rate category."""
    row_of = {
        node: prep.taxa.index(name) for node, name in tree.leaf_names.items()
    }
    out = np.empty((len(model.rates), prep.codes.shape[1]))
    for k, rate in enumerate(model.rates):
        value, logs = _root_partial(tree, model, prep.codes, row_of, root, rate)
        with np.errstate(divide="ignore"):
            out[k] = np.log(model.freqs @ value) + logs
    return out


def _logmeanexp(rows: np.ndarray) -> np.ndarray:
    peak = rows.max(axis=0)
    safe = np.where(np.isfinite(peak), peak, 0.0)
    mean = np.mean(np.exp(rows - safe[None, :]), axis=0)
    with np.errstate(divide="ignore"):
        return np.where(np.isfinite(peak), safe + np.log(mean), peak)


def _mix_invariant(
    var_logs: np.ndarray, log_inv: np.ndarray, p_inv: float
) -> np.ndarray:
    site_logs = _logmeanexp(var_logs)
    if p_inv > 0.0:
        site_logs = np.logaddexp(
            np.log1p(-p_inv) + site_logs, np.log(p_inv) + log_inv
        )
    bad = ~np.isfinite(site_logs)
    if bad.any():
        raise NumericalUnderflowError(
            f"site {int(np.nonzero(bad)[0][0])} has zero likelihood"
        )
    return site_logs


def site_log_likelihoods(
    tree: Phylogeny,
    model: SubstitutionModel,
    source: CharacterMatrix | SitePrep,
    root: int | None = None,
) -> np.ndarray:
    """Per-site log likelihood of the invariant/variable mixture.

    The virtual root is arbitrary; ``root`` exists so tests can verify
    root-placement invariance.
    """
    prep = source if isinstance(source, SitePrep) else prepare_sites(model, source)
    _check_taxa(tree, prep)
    if root is None:
        root = _default_root(tree)
    var_logs = _variable_site_logs(tree, model, prep, root)
    return _mix_invariant(var_logs, prep.log_inv, model.p_inv)


def total_log_likelihood(
    tree: Phylogeny,
    model: SubstitutionModel,
    source: CharacterMatrix | SitePrep,
) -> LikelihoodResult:
    """Total and per-site log likelihood of ``source`` under the model."""
    per_site = site_log_likelihoods(tree, model, source)
    return LikelihoodResult(
        total_log_likelihood=float(per_site.sum()),
        per_site_log_likelihoods=per_site,
    )


def site_conditionals(
    tree: Phylogeny,
    model: SubstitutionModel,
    matrix: CharacterMatrix,
    site: int,
    rate: float = 1.0,
) -> np.ndarray:
    """Unscaled per-state conditional likelihoods of one site at the
    default virtual root (variable component, one rate)."""
    prep = prepare_sites(model, matrix)
    _check_taxa(tree, prep)
    root = _default_root(tree)
    row_of = {node: prep.taxa.index(n) for node, n in tree.leaf_names.items()}
    codes = prep.codes[:, site : site + 1]
    value, logs = _root_partial(tree, model, codes, row_of, root, rate)
    return value[:, 0] * np.exp(logs[0])


def edge_log_likelihood_fn(
    tree: Phylogeny,
    model: SubstitutionModel,
    prep: SitePrep,
    u: int,
    v: int,
):
    """Total log likelihood as a function of the length of edge (u, v).

    Along one edge the variable component of a site is affine in
    x = exp(-mu * rate * t), so the expensive pruning passes happen once
    here and each candidate length costs only vector arithmetic. The other
    branch lengths are taken as they currently stand.
    """
    if v not in tree.adjacency[u]:
        raise KeyError(f"no edge ({u}, {v})")
    row_of = {node: prep.taxa.index(n) for node, n in tree.leaf_names.items()}
    freqs = model.freqs
    terms = []
    for rate in model.rates:
        side_u, logs_u = _root_partial(tree, model, prep.codes, row_of, u, rate, block=v)
        side_v, logs_v = _root_partial(tree, model, prep.codes, row_of, v, rate, block=u)
        stationary = (freqs @ side_u) * (freqs @ side_v)
        joint = (freqs[:, None] * side_u * side_v).sum(axis=0)
        terms.append((stationary, joint - stationary, logs_u + logs_v, model.mu * rate))

    log_inv = prep.log_inv
    p_inv = model.p_inv

    def log_likelihood(t: float) -> float:
        rows = np.empty((len(terms), prep.codes.shape[1]))
        for k, (a, b, logs, beta) in enumerate(terms):
            # Cancellation can push a tiny positive value below zero; the
            # floor keeps the optimizer away instead of crashing the log.
            value = np.maximum(a + b * np.exp(-beta * t), 1e-300)
            rows[k] = np.log(value) + logs
        return float(_mix_invariant(rows, log_inv, p_inv).sum())

    return log_likelihood
