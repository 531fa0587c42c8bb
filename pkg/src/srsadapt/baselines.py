"""Feature-extraction baselines: frozen features plus a linear classifier.

``PoolingBaseline`` averages per-word static vectors built from two
independently trained embedding sets (PPMI + SVD over co-occurrence
windows of different widths) concatenated per word.  The frozen-sentence
baseline mean-pools a frozen encoder's hidden states.  In both cases only
the linear layer trains; the feature source never receives gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Corpus, NUM_SPECIALS, UNK_ID, Vocabulary, tokenize
from .optim import AdamW
from .seeding import derive_rng
from .tensor import Tape, Tensor, add, matmul, softmax_cross_entropy


def train_static_embeddings(
    corpus: Corpus, vocab: Vocabulary, dim: int, window: int, seed: int
) -> np.ndarray:
    """Static word vectors: PPMI of windowed co-occurrence counts, reduced
    by truncated SVD.  Rows align with vocabulary ids; special tokens other
    than UNK get zero vectors."""
    v = len(vocab)
    counts = np.zeros((v, v), dtype=np.float64)
    for doc in corpus:
        ids = [vocab.id(tok) for tok in tokenize(doc.summary)]
        for i, a in enumerate(ids):
            lo = max(0, i - window)
            for b in ids[lo:i]:
                counts[a, b] += 1.0
                counts[b, a] += 1.0

    total = counts.sum()
    if total == 0:
        raise ValueError("cannot train embeddings on an empty corpus")
    row = counts.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        pmi = np.log(counts * total / np.outer(row, row))
    pmi[~np.isfinite(pmi)] = 0.0
    ppmi = np.maximum(pmi, 0.0)

    u, s, _ = np.linalg.svd(ppmi, full_matrices=False)
    dim = min(dim, s.size)
    vectors = u[:, :dim] * np.sqrt(s[:dim])
    # Tiny seeded jitter so even words with empty contexts have distinct,
    # deterministic vectors.
    vectors = vectors + derive_rng(seed, "jitter", window).normal(0.0, 1e-4, vectors.shape)
    for special in range(NUM_SPECIALS):
        if special != UNK_ID:
            vectors[special] = 0.0
    return vectors


@dataclass
class PoolingBaseline:
    vectors: np.ndarray  # (V, D) frozen; D = sum of the two set widths
    classes: tuple[str, ...]
    weight: Tensor
    bias: Tensor
    vocab: Vocabulary

    @property
    def feature_dim(self) -> int:
        return self.vectors.shape[1]

    def document_vector(self, text: str) -> np.ndarray:
        ids = [self.vocab.id(tok) for tok in tokenize(text)]
        if not ids:
            return np.zeros(self.feature_dim)
        return self.vectors[ids].mean(axis=0)

    def features(self, documents) -> np.ndarray:
        return np.stack([self.document_vector(doc.summary) for doc in documents])

    def logits(self, documents) -> np.ndarray:
        return self.features(documents) @ self.weight.data + self.bias.data

    def predict(self, documents) -> list[str]:
        picks = np.argmax(self.logits(documents), axis=1)
        return [self.classes[int(i)] for i in picks]


def build_pooling_vectors(
    corpus: Corpus,
    vocab: Vocabulary,
    seed: int,
    dims: tuple[int, int] = (50, 50),
    windows: tuple[int, int] = (1, 2),
) -> np.ndarray:
    """Concatenate two independently trained static embedding sets."""
    first = train_static_embeddings(corpus, vocab, dims[0], windows[0], seed)
    second = train_static_embeddings(corpus, vocab, dims[1], windows[1], seed + 1)
    return np.concatenate([first, second], axis=1)


def train_linear_head(
    features: np.ndarray,
    labels: np.ndarray,
    n_classes: int,
    seed: int,
    lr: float = 0.05,
    epochs: int = 60,
    batch_size: int = 128,
) -> tuple[Tensor, Tensor]:
    """Train a softmax linear layer on frozen features."""
    n, dim = features.shape
    rng = derive_rng(seed, "linear-head")
    weight = Tensor(rng.normal(0.0, 0.02, (dim, n_classes)), track_grad=True, name="head.weight")
    bias = Tensor(np.zeros(n_classes), track_grad=True, name="head.bias")
    opt = AdamW({"head.weight": weight, "head.bias": bias}, lr=lr)
    for epoch in range(epochs):
        order = derive_rng(seed, "shuffle", epoch).permutation(n)
        for start in range(0, n, batch_size):
            take = order[start : start + batch_size]
            x = Tensor(features[take])
            with Tape() as tape:
                logits = add(matmul(x, weight), bias)
                loss = softmax_cross_entropy(logits, labels[take])
                tape.backward(loss)
            opt.step()
            opt.zero_grad()
    return weight, bias


def fit_pooling_baseline(
    vectors: np.ndarray,
    vocab: Vocabulary,
    train_docs,
    task: str,
    classes: tuple[str, ...],
    seed: int,
) -> PoolingBaseline:
    baseline = PoolingBaseline(
        vectors=vectors,
        classes=classes,
        weight=Tensor(np.zeros((vectors.shape[1], len(classes)))),
        bias=Tensor(np.zeros(len(classes))),
        vocab=vocab,
    )
    features = baseline.features(train_docs)
    index = {cls: i for i, cls in enumerate(classes)}
    labels = np.array([index[doc.label(task)] for doc in train_docs], dtype=np.int64)
    weight, bias = train_linear_head(features, labels, len(classes), seed)
    baseline.weight = weight
    baseline.bias = bias
    return baseline


@dataclass
class FrozenSentenceBaseline:
    """Linear classifier over frozen mean-pooled encoder features."""

    classes: tuple[str, ...]
    weight: Tensor
    bias: Tensor
    featurize: callable  # documents -> (N, H) array from the frozen encoder

    def predict(self, documents) -> list[str]:
        logits = self.featurize(documents) @ self.weight.data + self.bias.data
        return [self.classes[int(i)] for i in np.argmax(logits, axis=1)]


def fit_frozen_sentence_baseline(
    featurize,
    train_docs,
    task: str,
    classes: tuple[str, ...],
    seed: int,
) -> FrozenSentenceBaseline:
    features = featurize(train_docs)
    index = {cls: i for i, cls in enumerate(classes)}
    labels = np.array([index[doc.label(task)] for doc in train_docs], dtype=np.int64)
    weight, bias = train_linear_head(features, labels, len(classes), seed)
    return FrozenSentenceBaseline(classes=classes, weight=weight, bias=bias, featurize=featurize)
