"""Word embeddings with knowledge-graph retrofitting.

Ships a deterministic desk-scale base table over the domain vocabulary
plus a small knowledge graph; retrofitting pulls graph neighbors
together in the embedding space, which is what lets the policy transfer
behavior to object classes it never saw in training.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

KG_RELATIONS = ("SimilarTo", "IsA", "UsedFor", "PartOf", "CapableOf")

# Relation weights used by the retrofit update, ordered by semantic
# tightness of the link.
DEFAULT_BETAS = {
    "SimilarTo": 1.0,
    "IsA": 0.8,
    "UsedFor": 0.6,
    "PartOf": 0.5,
    "CapableOf": 0.5,
}


class EmbeddingError(Exception):
    pass


@dataclass(frozen=True)
class KnowledgeGraph:
    edges: tuple  # (src, relation, dst) triples

    def __post_init__(self):
        for src, rel, dst in self.edges:
            if rel not in KG_RELATIONS:
                raise EmbeddingError(f"unknown KG relation {rel!r}")
            if src == dst:
                raise EmbeddingError(f"self-loop on {src!r}")
            if src != src.lower() or dst != dst.lower():
                raise EmbeddingError("KG tokens must be lowercase")

    def neighbors(self, token: str) -> list:
        """Undirected weighted neighborhood: (other, relation) pairs."""
        out = []
        for src, rel, dst in self.edges:
            if src == token:
                out.append((dst, rel))
            elif dst == token:
                out.append((src, rel))
        return out

    def tokens(self) -> set:
        out = set()
        for src, _, dst in self.edges:
            out.add(src)
            out.add(dst)
        return out


@dataclass
class EmbeddingTable:
    dim: int
    entries: dict  # token -> np.ndarray of shape (dim,)
    provenance: str = "base"
    kg: Optional[KnowledgeGraph] = None

    def __post_init__(self):
        for tok, vec in self.entries.items():
            if vec.shape != (self.dim,):
                raise EmbeddingError(f"{tok}: vector has shape {vec.shape}, want ({self.dim},)")

    def embed(self, token: str) -> np.ndarray:
        """Total lookup: unknown tokens fall back to the mean of their
        known KG neighbors, then to the zero vector."""
        token = token.lower()
        if token in self.entries:
            return self.entries[token]
        if self.kg is not None:
            known = [self.entries[n] for n, _ in self.kg.neighbors(token) if n in self.entries]
            if known:
                return np.mean(known, axis=0)
        return np.zeros(self.dim)

    def with_entry(self, token: str, vec: np.ndarray) -> "EmbeddingTable":
        entries = dict(self.entries)
        entries[token.lower()] = np.asarray(vec, dtype=np.float64)
        return EmbeddingTable(self.dim, entries, self.provenance, self.kg)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def nearest_class(token: str, candidates: Sequence[str], table: EmbeddingTable) -> str:
    """Candidate with the highest cosine similarity; lexicographic tie-break."""
    if not candidates:
        raise EmbeddingError("nearest_class needs at least one candidate")
    anchor = table.embed(token)
    best = None
    for cand in sorted(candidates):
        score = cosine(anchor, table.embed(cand))
        if best is None or score > best[0] + 1e-15:
            best = (score, cand)
    return best[1]


def retrofit(
    table: EmbeddingTable,
    kg: KnowledgeGraph,
    iterations: int = 10,
    lam: float = 1.0,
    betas: Mapping = DEFAULT_BETAS,
) -> EmbeddingTable:
    """Iterative retrofit: each token is pulled toward its KG neighbors,
    anchored at its base vector with weight lam.

        e'(w) <- (lam * e_base(w) + sum_n beta_rel * e'(n)) / (lam + sum_n beta_rel)

    Tokens absent from the graph are left bit-identical.
    """
    if iterations < 1:
        raise EmbeddingError("iterations must be >= 1")
    if lam <= 0:
        raise EmbeddingError("lam must be > 0")
    base = {t: v.copy() for t, v in table.entries.items()}
    current = {t: v.copy() for t, v in table.entries.items()}
    in_graph = kg.tokens() & set(base)
    for _ in range(iterations):
        for tok in sorted(in_graph):
            num = lam * base[tok]
            den = lam
            for nbr, rel in kg.neighbors(tok):
                if nbr not in current:
                    continue
                b = betas[rel]
                num = num + b * current[nbr]
                den += b
            current[tok] = num / den
    return EmbeddingTable(table.dim, current, provenance="retrofitted", kg=kg)


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------


def save_table(table: EmbeddingTable, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"q={table.dim}\n")
        for tok in sorted(table.entries):
            vals = " ".join(repr(float(v)) for v in table.entries[tok])
            fh.write(f"{tok} {vals}\n")


def load_table(path, kg: Optional[KnowledgeGraph] = None) -> EmbeddingTable:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if not header.startswith("q="):
            raise EmbeddingError(f"bad header {header!r}, expected q=<int>")
        dim = int(header[2:])
        entries = {}
        for line_no, line in enumerate(fh, start=2):
            parts = line.split()
            if not parts:
                continue
            tok, vals = parts[0], parts[1:]
            if len(vals) != dim:
                raise EmbeddingError(f"line {line_no}: expected {dim} values, got {len(vals)}")
            entries[tok] = np.array([float(v) for v in vals])
    return EmbeddingTable(dim, entries, provenance="base", kg=kg)


def save_kg(kg: KnowledgeGraph, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for src, rel, dst in kg.edges:
            fh.write(f"{src} {rel} {dst}\n")


def load_kg(path) -> KnowledgeGraph:
    edges = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 3:
                raise EmbeddingError(f"bad KG line {line!r}")
            edges.append((parts[0], parts[1], parts[2]))
    return KnowledgeGraph(tuple(edges))


# ---------------------------------------------------------------------------
# Shipped desk-scale table
# ---------------------------------------------------------------------------

# Anchor groups: tokens in a group share a base direction so that
# functionally similar classes start near each other even pre-retrofit.
_ANCHOR_GROUPS = {
    "carrier": ("tray", "box", "basket"),
    "climb-aid": ("stool", "ladder", "ramp"),
    "reacher": ("stick", "pole"),
    "cleaner": ("mop", "vacuum", "cloth"),
    "adhesive": ("tape", "glue"),
    "fruit": ("apple", "orange", "banana"),
    "enclosure": ("fridge", "cupboard", "drawer"),
    "furniture": ("table", "couch", "shelf", "counter"),
    "fixture": ("light", "fan", "wall", "floor"),
    "small-item": ("milk", "cereal", "toy", "book", "cup", "plate", "bottle", "paper", "nail", "pillow", "brick"),
}

_RELATION_TOKENS = ("ontop", "inside", "near", "connectedto", "on", "open", "grabbed", "sticky", "dirty")

_HUB_TOKENS = ("container", "tool", "climbing", "reaching", "cleaning", "storage")


def _token_rng(token: str, salt: str = "") -> np.random.Generator:
    digest = hashlib.sha256((salt + token).encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def default_knowledge_graph() -> KnowledgeGraph:
    edges = [
        ("box", "SimilarTo", "tray"),
        ("basket", "SimilarTo", "tray"),
        ("basket", "SimilarTo", "box"),
        ("tray", "UsedFor", "storage"),
        ("box", "UsedFor", "storage"),
        ("basket", "UsedFor", "storage"),
        ("box", "IsA", "container"),
        ("basket", "IsA", "container"),
        ("fridge", "IsA", "container"),
        ("cupboard", "IsA", "container"),
        ("drawer", "IsA", "container"),
        ("ladder", "SimilarTo", "stool"),
        ("ramp", "SimilarTo", "stool"),
        ("stool", "UsedFor", "climbing"),
        ("ladder", "UsedFor", "climbing"),
        ("ramp", "UsedFor", "climbing"),
        ("stool", "IsA", "tool"),
        ("ladder", "IsA", "tool"),
        ("stick", "UsedFor", "reaching"),
        ("pole", "UsedFor", "reaching"),
        ("pole", "SimilarTo", "stick"),
        ("stick", "IsA", "tool"),
        ("tray", "IsA", "tool"),
        ("box", "IsA", "tool"),
        ("mop", "UsedFor", "cleaning"),
        ("vacuum", "UsedFor", "cleaning"),
        ("cloth", "UsedFor", "cleaning"),
        ("vacuum", "SimilarTo", "mop"),
        ("cloth", "SimilarTo", "mop"),
        ("mop", "IsA", "tool"),
        ("tape", "SimilarTo", "glue"),
        ("tape", "CapableOf", "sticky"),
        ("glue", "CapableOf", "sticky"),
        ("apple", "IsA", "fruit"),
        ("orange", "IsA", "fruit"),
        ("banana", "IsA", "fruit"),
        ("apple", "SimilarTo", "orange"),
        ("banana", "SimilarTo", "apple"),
        ("milk", "SimilarTo", "bottle"),
        ("cereal", "SimilarTo", "box"),
        ("cup", "SimilarTo", "bottle"),
        ("plate", "SimilarTo", "tray"),
        ("shelf", "PartOf", "cupboard"),
        ("drawer", "PartOf", "cupboard"),
        ("couch", "SimilarTo", "table"),
        ("counter", "SimilarTo", "table"),
        ("shelf", "SimilarTo", "table"),
        ("table", "UsedFor", "storage"),
        ("shelf", "UsedFor", "storage"),
        ("cupboard", "UsedFor", "storage"),
        ("fridge", "UsedFor", "storage"),
        ("light", "SimilarTo", "fan"),
        ("nail", "CapableOf", "connectedto"),
        ("paper", "CapableOf", "connectedto"),
        ("toy", "SimilarTo", "book"),
        ("pillow", "SimilarTo", "cloth"),
        ("brick", "SimilarTo", "box"),
        ("inside", "SimilarTo", "container"),
        ("ontop", "SimilarTo", "near"),
    ]
    return KnowledgeGraph(tuple(edges))


def base_table(dim: int = 32) -> EmbeddingTable:
    """Deterministic hand-constructed base table over the domain tokens."""
    entries: dict = {}
    anchors = {g: _unit(_token_rng(g, "anchor:").standard_normal(dim)) for g in _ANCHOR_GROUPS}
    for group, tokens in _ANCHOR_GROUPS.items():
        for tok in tokens:
            noise = _token_rng(tok, "tok:").standard_normal(dim)
            entries[tok] = _unit(anchors[group] + 0.6 * _unit(noise))
    for tok in _RELATION_TOKENS + _HUB_TOKENS:
        if tok not in entries:
            entries[tok] = _unit(_token_rng(tok, "tok:").standard_normal(dim))
    return EmbeddingTable(dim, entries, provenance="base", kg=default_knowledge_graph())


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


def retrofitted_table(dim: int = 32) -> EmbeddingTable:
    return retrofit(base_table(dim), default_knowledge_graph())


def random_embedding(dim: int, seed: int) -> np.ndarray:
    """Control vector for generalization comparisons: an arbitrary
    direction unrelated to the knowledge graph."""
    return _unit(np.random.default_rng(seed).standard_normal(dim))
