"""Gene interaction graphs and the sparse adjacency masks derived from them.

An edge list (one interaction per line, two whitespace-separated gene
symbols) becomes a ``GeneGraph``; intersecting its vertex set with the
expression panel and adding self-loops yields the binary ``AdjacencyMask``
that restricts the first network layer to known gene-gene interactions.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, ParseError

# Column names commonly used in interaction-file headers; a first line made
# only of these (case-insensitive) is treated as a header, not an edge.
_HEADER_WORDS = {
    "gene1", "gene2", "genea", "geneb", "gene_a", "gene_b",
    "protein1", "protein2", "proteina", "proteinb", "protein_a", "protein_b",
    "source", "target", "node1", "node2", "from", "to",
    "symbol1", "symbol2", "interactor_a", "interactor_b",
}


@dataclass
class GeneGraph:
    """Undirected interaction graph over named genes.

    ``edges`` holds deduplicated, canonically ordered (min, max) symbol
    pairs; self-pairs are never stored (self-loops only appear when the
    adjacency mask is built).
    """

    genes: tuple[str, ...]
    edges: frozenset[tuple[str, str]]
    _adj: dict[str, set[str]] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if len(set(self.genes)) != len(self.genes):
            raise DataError("duplicate gene symbols in graph")
        if not self._adj:
            adj: dict[str, set[str]] = {g: set() for g in self.genes}
            for a, b in self.edges:
                if a == b:
                    raise DataError(f"self-pair ({a!r}, {b!r}) in edge set")
                if a not in adj or b not in adj:
                    raise DataError(f"edge endpoint not in gene list: ({a!r}, {b!r})")
                adj[a].add(b)
                adj[b].add(a)
            object.__setattr__(self, "_adj", adj)

    @property
    def n_genes(self) -> int:
        return len(self.genes)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def neighbors(self, gene: str) -> frozenset[str]:
        if gene not in self._adj:
            raise KeyError(f"gene {gene!r} not in graph")
        return frozenset(self._adj[gene])

    def subgraph(self, keep: list[str] | tuple[str, ...]) -> "GeneGraph":
        """Restrict to ``keep`` (order preserved); edges touching dropped
        genes are removed."""
        keep_set = set(keep)
        missing = keep_set - set(self.genes)
        if missing:
            raise KeyError(f"genes not in graph: {sorted(missing)[:5]}")
        edges = frozenset(
            (a, b) for a, b in self.edges if a in keep_set and b in keep_set)
        return GeneGraph(genes=tuple(keep), edges=edges)


def _canonical(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a <= b else (b, a)


def parse_edge_list(path, has_header: bool | None = None) -> GeneGraph:
    """Read an interaction edge list.

    Each non-blank, non-comment ('#'-prefixed) line must hold exactly two
    whitespace-separated symbols. Duplicate pairs (either orientation)
    collapse to one undirected edge and self-pairs are dropped, though
    their symbols still count as genes. ``has_header=None`` auto-detects a
    leading header line by its vocabulary; pass True/False to force.
    """
    path = Path(path)
    genes: list[str] = []
    seen: set[str] = set()
    edges: set[tuple[str, str]] = set()
    first_data_line = True
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            tokens = line.split()
            if len(tokens) != 2:
                raise ParseError(
                    f"{path.name}:{lineno}: expected 2 columns, got {len(tokens)}")
            if first_data_line:
                first_data_line = False
                is_header = has_header
                if is_header is None:
                    is_header = all(t.lower() in _HEADER_WORDS for t in tokens)
                if is_header:
                    continue
            a, b = tokens
            for g in (a, b):
                if g not in seen:
                    seen.add(g)
                    genes.append(g)
            if a != b:
                edges.add(_canonical(a, b))
    if not edges:
        warnings.warn(f"{path.name}: no edges parsed", stacklevel=2)
    return GeneGraph(genes=tuple(genes), edges=frozenset(edges))


def serialize_graph(graph: GeneGraph, path) -> None:
    """Write the graph back out as a two-column edge list (sorted)."""
    with open(path, "w", encoding="utf-8") as fh:
        for a, b in sorted(graph.edges):
            fh.write(f"{a}\t{b}\n")


def intersect_features(graph: GeneGraph, panel: list[str] | tuple[str, ...]) -> tuple[GeneGraph, tuple[str, ...]]:
    """Restrict graph and expression panel to their shared genes.

    Returns (subgraph, kept_panel) where kept_panel preserves the panel's
    own ordering, and the subgraph's vertex order follows it. Raises
    ConfigError when the intersection is empty.
    """
    if len(set(panel)) != len(panel):
        raise DataError("expression panel contains duplicate gene names")
    graph_set = set(graph.genes)
    kept = tuple(g for g in panel if g in graph_set)
    if not kept:
        raise ConfigError(
            "no overlap between interaction graph and expression panel")
    return graph.subgraph(list(kept)), kept


@dataclass
class AdjacencyMask:
    """Binary p x p mask with self-loops, aligned to a fixed gene order.

    ``rows``/``cols`` list the coordinates of the nonzeros; the constructor
    sorts them row-major and rejects duplicates, so downstream sparse
    kernels can treat the coordinate list as CSR structure directly.
    """

    genes: tuple[str, ...]
    rows: np.ndarray
    cols: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rows, dtype=np.intp)
        c = np.asarray(self.cols, dtype=np.intp)
        if r.shape != c.shape or r.ndim != 1:
            raise DataError("mask rows/cols must be equal-length vectors")
        order = np.lexsort((c, r))
        r, c = r[order], c[order]
        if len(r) > 1 and np.any((r[1:] == r[:-1]) & (c[1:] == c[:-1])):
            raise DataError("duplicate mask coordinates")
        self.rows, self.cols = r, c

    @property
    def dim(self) -> int:
        return len(self.genes)

    @property
    def nnz(self) -> int:
        return len(self.rows)

    def dense(self) -> np.ndarray:
        m = np.zeros((self.dim, self.dim))
        m[self.rows, self.cols] = 1.0
        return m

    def save(self, path) -> None:
        """Write 'dim<TAB>n' header then one 'row<TAB>col' line per nonzero."""
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"dim\t{self.dim}\n")
            for r, c in zip(self.rows, self.cols):
                fh.write(f"{r}\t{c}\n")

    @classmethod
    def load(cls, path, genes: tuple[str, ...]) -> "AdjacencyMask":
        path = Path(path)
        rows: list[int] = []
        cols: list[int] = []
        dim = None
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.strip()
                if not line:
                    continue
                tokens = line.split("\t")
                if len(tokens) != 2:
                    raise ParseError(
                        f"{path.name}:{lineno}: expected 2 columns, got {len(tokens)}")
                if lineno == 1:
                    if tokens[0] != "dim":
                        raise ParseError(f"{path.name}:1: missing 'dim' header")
                    dim = int(tokens[1])
                    continue
                rows.append(int(tokens[0]))
                cols.append(int(tokens[1]))
        if dim is None:
            raise ParseError(f"{path.name}: empty mask file")
        if dim != len(genes):
            raise DataError(
                f"mask dimension {dim} != gene-list length {len(genes)}")
        r = np.asarray(rows, dtype=np.intp)
        c = np.asarray(cols, dtype=np.intp)
        if len(r) and (r.min() < 0 or r.max() >= dim or c.min() < 0 or c.max() >= dim):
            raise DataError(f"{path.name}: mask coordinates out of range")
        return cls(genes=genes, rows=r, cols=c)


def build_adjacency(graph: GeneGraph, order: tuple[str, ...] | None = None) -> AdjacencyMask:
    """Binary adjacency over ``order`` (default: graph vertex order), with
    every diagonal entry forced to 1 so each gene always sees itself."""
    genes = tuple(order) if order is not None else graph.genes
    index = {g: i for i, g in enumerate(genes)}
    missing = [g for g in genes if g not in set(graph.genes)]
    if missing:
        raise KeyError(f"genes not in graph: {missing[:5]}")
    coords: set[tuple[int, int]] = {(i, i) for i in range(len(genes))}
    for a, b in graph.edges:
        if a in index and b in index:
            i, j = index[a], index[b]
            coords.add((i, j))
            coords.add((j, i))
    ordered = sorted(coords)
    rows = np.asarray([r for r, _ in ordered], dtype=np.intp)
    cols = np.asarray([c for _, c in ordered], dtype=np.intp)
    return AdjacencyMask(genes=genes, rows=rows, cols=cols)
