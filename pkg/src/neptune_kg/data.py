"""Triple datasets: parsing, vocabularies, reciprocal relations, filtering.

Datasets follow the FB15k-237 / WN18RR distribution layout: a directory
with ``train.txt``, ``valid.txt`` and ``test.txt``, one
``head<TAB>relation<TAB>tail`` triple per line.
"""

import hashlib
import os
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

SPLITS = ("train", "valid", "test")
RECIPROCAL_SUFFIX = "_reciprocal"


class DataFormatError(ValueError):
    """A dataset file could not be parsed."""


def load_split(path):
    """Read one split file into a list of ``(head, relation, tail)`` strings."""
    triples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataFormatError(
                    f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}"
                )
            triples.append(tuple(p.strip() for p in parts))
    return triples


class Vocab:
    """Dense bidirectional label <-> id map, ids assigned on first sight."""

    def __init__(self, labels=()):
        self.labels = []
        self.index = {}
        for label in labels:
            self.add(label)

    def add(self, label):
        idx = self.index.get(label)
        if idx is None:
            idx = len(self.labels)
            self.index[label] = idx
            self.labels.append(label)
        return idx

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, label):
        return self.index[label]

    def __contains__(self, label):
        return label in self.index

    def label(self, idx):
        return self.labels[idx]

    def digest(self):
        """sha256 over the ordered labels; pins ids inside checkpoints."""
        h = hashlib.sha256()
        for label in self.labels:
            h.update(label.encode("utf-8"))
            h.update(b"\n")
        return h.digest()


@dataclass
class KnowledgeGraph:
    entities: Vocab
    relations: Vocab
    n_raw_relations: int
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    filter_index: dict = field(repr=False)

    @property
    def n_entities(self):
        return len(self.entities)

    @property
    def n_relations(self):
        return len(self.relations)

    def split(self, name):
        if name not in SPLITS:
            raise KeyError(f"unknown split {name!r}")
        return getattr(self, name)

    def inverse_relation(self, r):
        """Id of the reciprocal of ``r`` (works in both directions)."""
        n = self.n_raw_relations
        return r + n if r < n else r - n


def _augment(ids, n_raw):
    if len(ids) == 0:
        return ids.reshape(0, 3)
    inv = np.stack([ids[:, 2], ids[:, 1] + n_raw, ids[:, 0]], axis=1)
    return np.concatenate([ids, inv], axis=0)


def build_graph(train, valid, test):
    """Build vocabularies and reciprocal-augmented id arrays.

    Ids follow first occurrence over train, then valid, then test (head
    before tail within a triple). Relation ``r`` gets the reciprocal
    ``r + n_raw`` labelled ``<r>_reciprocal``. The filter index maps
    ``(head, relation)`` to every known tail across all three splits.
    """
    entities = Vocab()
    raw_relations = Vocab()
    for split in (train, valid, test):
        for h, r, t in split:
            entities.add(h)
            raw_relations.add(r)
            entities.add(t)
    n_raw = len(raw_relations)
    relations = Vocab(raw_relations.labels)
    for label in raw_relations.labels:
        relations.add(label + RECIPROCAL_SUFFIX)

    arrays = []
    for split in (train, valid, test):
        ids = np.array(
            [(entities[h], raw_relations[r], entities[t]) for h, r, t in split],
            dtype=np.int64,
        ).reshape(-1, 3)
        arrays.append(_augment(ids, n_raw))

    filter_index = defaultdict(set)
    for ids in arrays:
        for h, r, t in ids.tolist():
            filter_index[(h, r)].add(t)
    filter_index = {key: frozenset(tails) for key, tails in filter_index.items()}
    return KnowledgeGraph(entities, relations, n_raw, *arrays, filter_index=filter_index)


def load_dataset(directory):
    """Load ``train.txt``, ``valid.txt`` and ``test.txt`` from ``directory``."""
    splits = []
    for name in SPLITS:
        path = os.path.join(directory, f"{name}.txt")
        if not os.path.isfile(path):
            raise FileNotFoundError(f"missing dataset file: {path}")
        splits.append(load_split(path))
    return build_graph(*splits)


def candidate_filter(g, h, r, t_true):
    """Known-true tails of ``(h, r)`` other than ``t_true``."""
    return set(g.filter_index.get((h, r), ())) - {t_true}


def filter_csr(g, triples):
    """Filter sets for a batch of triples as ``(indptr, indices)`` arrays.

    Row ``b`` lists, sorted and without duplicates, the tails to drop when
    ranking ``triples[b]``; the true tail itself is never listed.
    """
    indptr = np.zeros(len(triples) + 1, dtype=np.int64)
    chunks = []
    for b, (h, r, t) in enumerate(np.asarray(triples).tolist()):
        known = g.filter_index.get((h, r), ())
        row = np.fromiter((x for x in known if x != t), dtype=np.int64)
        row.sort()
        chunks.append(row)
        indptr[b + 1] = indptr[b] + len(row)
    indices = np.concatenate(chunks) if chunks else np.zeros(0, dtype=np.int64)
    return indptr, indices


def group_by_query(ids):
    """Collapse triples into 1-N rows: sorted ``(h, r)`` keys and tail sets."""
    groups = defaultdict(set)
    for h, r, t in np.asarray(ids).tolist():
        groups[(h, r)].add(t)
    keys = sorted(groups)
    return (np.array(keys, dtype=np.int64).reshape(-1, 2),
            [np.array(sorted(groups[k]), dtype=np.int64) for k in keys])


def write_vocab(path, vocab):
    with open(path, "w", encoding="utf-8") as fh:
        for idx, label in enumerate(vocab.labels):
            fh.write(f"{idx}\t{label}\n")


def write_split(path, triples):
    with open(path, "w", encoding="utf-8") as fh:
        for h, r, t in triples:
            fh.write(f"{h}\t{r}\t{t}\n")


def synthetic_triples(n_entities, n_relations, n_triples, seed=0):
    """Distinct uniformly random triples over labels ``e<i>`` / ``r<j>``.

    Every entity and relation label appears at least once so the vocabulary
    sizes are exact.
    """
    if n_triples > n_entities * n_relations * n_entities:
        raise ValueError("more triples requested than exist")
    if n_triples < (n_entities + 1) // 2 + n_relations:
        raise ValueError("too few triples to cover every entity and relation")
    rng = np.random.default_rng(seed)
    chosen = set()
    # seed coverage first: pair up entities and cycle relations
    perm = rng.permutation(n_entities)
    for i in range(0, n_entities, 2):
        h, t = int(perm[i]), int(perm[(i + 1) % n_entities])
        chosen.add((h, (i // 2) % n_relations, t))
    for r in range(n_relations):
        if not any(tr[1] == r for tr in chosen):
            chosen.add((int(rng.integers(n_entities)), r, int(rng.integers(n_entities))))
    while len(chosen) < n_triples:
        chosen.add((int(rng.integers(n_entities)), int(rng.integers(n_relations)),
                    int(rng.integers(n_entities))))
    ordered = sorted(chosen)
    order = rng.permutation(len(ordered))
    return [(f"e{ordered[i][0]}", f"r{ordered[i][1]}", f"e{ordered[i][2]}") for i in order]


def write_synthetic_dataset(directory, n_entities=64, n_relations=8, n_triples=512,
                            holdout=64, seed=0):
    """Write a memorization benchmark: valid/test are subsets of train."""
    triples = synthetic_triples(n_entities, n_relations, n_triples, seed)
    rng = np.random.default_rng(seed + 1)
    picks = rng.choice(len(triples), size=2 * holdout, replace=False)
    os.makedirs(directory, exist_ok=True)
    write_split(os.path.join(directory, "train.txt"), triples)
    write_split(os.path.join(directory, "valid.txt"), [triples[i] for i in picks[:holdout]])
    write_split(os.path.join(directory, "test.txt"), [triples[i] for i in picks[holdout:]])
    return triples
