"""Text vectorization: frequency vocabularies, UNK padding, embeddings."""

from __future__ import annotations

import csv
import hashlib
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from neunets.errors import SerializationError

_TOKEN = re.compile(r"[a-z0-9']+")

# A fixed list of common English function words excluded from vocabularies.
STOP_WORDS = frozenset("""
a about above after again against all am an and any are aren't as at be
because been before being below between both but by can't cannot could
couldn't did didn't do does doesn't doing don't down during each few for
from further had hadn't has hasn't have haven't having he he'd he'll he's
her here here's hers herself him himself his how how's i i'd i'll i'm i've
if in into is isn't it it's its itself let's me more most mustn't my myself
no nor not of off on once only or other ought our ours ourselves out over
own same shan't she she'd she'll she's should shouldn't so some such than
that that's the their theirs them themselves then there there's these they
they'd they'll they're they've this those through to too under until up
very was wasn't we we'd we'll we're we've were weren't what what's when
when's where where's which while who who's whom why why's with won't would
wouldn't you you'd you'll you're you've your yours yourself yourselves
""".split())


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


@dataclass
class TextDataset:
    """Fixed-width token-id rows plus the vocabulary that produced them."""

    ids: np.ndarray  # (n, MAX) int32
    labels: np.ndarray
    n_classes: int
    vocab: dict[str, int]
    unk_id: int
    max_len: int
    splits: dict[str, np.ndarray] = field(default_factory=dict)
    class_names: list[str] | None = None

    def __post_init__(self):
        if self.ids.ndim != 2 or self.ids.shape[1] != self.max_len:
            raise SerializationError(
                f"ids must be (n, {self.max_len}), got {self.ids.shape}"
            )
        if self.ids.size and self.ids.max() > self.unk_id:
            raise SerializationError("token id outside vocabulary range")

    @property
    def vocab_size(self) -> int:
        """Rows an embedding table needs: K words plus the UNK slot."""
        return self.unk_id + 1

    def subset(self, split: str) -> tuple[np.ndarray, np.ndarray]:
        idx = self.splits[split]
        return self.ids[idx], self.labels[idx]


def build_vocab(texts, k: int) -> dict[str, int]:
    """Top-k non-stop-words; rank 0 is the most frequent, ties lexicographic."""
    counts = Counter()
    for text in texts:
        counts.update(t for t in tokenize(text) if t not in STOP_WORDS)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return {word: i for i, (word, _) in enumerate(ranked[:k])}


def encode_text(text: str, vocab: dict[str, int], unk_id: int,
                max_len: int) -> np.ndarray:
    ids = [vocab.get(t, unk_id) for t in tokenize(text)][:max_len]
    ids += [unk_id] * (max_len - len(ids))
    return np.asarray(ids, dtype=np.int32)


def vectorize_text(texts, labels, k: int, max_len: int,
                   split_seed: int = 0, class_names=None) -> TextDataset:
    """Rank words by corpus frequency and encode every row to max_len ids."""
    if k < 1 or max_len < 1:
        raise ValueError("K and MAX must both be at least 1")
    texts = list(texts)
    if not texts:
        raise SerializationError("empty corpus")
    vocab = build_vocab(texts, k)
    unk_id = len(vocab)  # one reserved id right after the vocabulary
    ids = np.stack([encode_text(t, vocab, unk_id, max_len) for t in texts])
    labels = np.asarray(labels)
    n_classes = int(labels.max()) + 1 if class_names is None else len(class_names)
    from neunets.data.images import assign_splits

    return TextDataset(
        ids=ids, labels=labels, n_classes=n_classes, vocab=vocab,
        unk_id=unk_id, max_len=max_len,
        splits=assign_splits(len(texts), seed=split_seed),
        class_names=class_names,
    )


def load_text_csv(path) -> tuple[list[str], np.ndarray, list[str]]:
    """Read a `label,text` CSV (with header); labels map to sorted class ids."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header[:2]] != ["label", "text"]:
            raise SerializationError(f"expected 'label,text' header, got {header}")
        rows = [(r[0], r[1]) for r in reader if len(r) >= 2]
    if not rows:
        raise SerializationError("empty corpus")
    class_names = sorted({label for label, _ in rows})
    to_id = {name: i for i, name in enumerate(class_names)}
    labels = np.asarray([to_id[label] for label, _ in rows])
    texts = [text for _, text in rows]
    return texts, labels, class_names


def _seeded_row(word: str, dim: int, seed: int) -> np.ndarray:
    digest = hashlib.sha256(word.encode("utf-8")).digest()
    stream = np.random.default_rng([seed, int.from_bytes(digest[:8], "little")])
    return stream.uniform(-0.05, 0.05, size=dim).astype(np.float32)


def load_embeddings(path, vocab: dict[str, int], unk_id: int | None = None,
                    seed: int = 0) -> np.ndarray:
    """Embedding matrix whose row i is the vector of the word with id i.

    Vectors come verbatim from a GloVe-style text file (``word v1 .. vd``);
    words the file does not cover get a reproducible random row derived
    from (seed, word).
    """
    vectors: dict[str, np.ndarray] = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            word, values = parts[0], parts[1:]
            if dim is None:
                dim = len(values)
                if dim == 0:
                    raise SerializationError(f"line {line_no}: no vector values")
            elif len(values) != dim:
                raise SerializationError(
                    f"line {line_no}: expected {dim} values, got {len(values)}"
                )
            vectors[word] = np.asarray([float(v) for v in values], dtype=np.float32)
    if dim is None:
        raise SerializationError("embedding file is empty")
    if unk_id is None:
        unk_id = len(vocab)
    table = np.empty((unk_id + 1, dim), dtype=np.float32)
    for word, idx in vocab.items():
        table[idx] = vectors.get(word, _seeded_row(word, dim, seed))
    table[unk_id] = _seeded_row("<unk>", dim, seed)
    return table
