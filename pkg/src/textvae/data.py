"""Corpus ingestion, vocabulary construction, batching, and synthetic
class-conditional Markov corpora for desk-scale experiments.

File formats (all UTF-8):
  corpus     one document per line; labeled form is "INT<TAB>TEXT"
  vocabulary one token per line, line number = id - 4; ids 0..3 are the
             implicit reserved PAD/BOS/EOS/UNK entries
  synthetic  key = value lines plus matrix blocks, see parse_synthetic_spec
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InputError, ParameterError, ParseError

PAD_ID, BOS_ID, EOS_ID, UNK_ID = 0, 1, 2, 3
RESERVED_TOKENS = ("<pad>", "<bos>", "<eos>", "<unk>")
NUM_RESERVED = len(RESERVED_TOKENS)


class Vocabulary:
    """Bidirectional token<->id map with reserved PAD/BOS/EOS/UNK ids."""

    def __init__(self, tokens: list[str]):
        self.id_to_token = list(RESERVED_TOKENS) + list(tokens)
        self.token_to_id = {tok: i for i, tok in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ConfigError("vocabulary contains duplicate tokens")

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    def lookup(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def token(self, token_id: int) -> str:
        return self.id_to_token[token_id]

    def encode(self, text: str) -> np.ndarray:
        """Lowercase, whitespace-split, wrap in BOS/EOS."""
        ids = [BOS_ID] + [self.lookup(tok) for tok in text.lower().split()] + [EOS_ID]
        return np.array(ids, dtype=np.int64)

    def decode(self, ids) -> list[str]:
        """Tokens for the given ids, reserved markers skipped."""
        return [self.id_to_token[i] for i in ids if i >= NUM_RESERVED or i == UNK_ID]

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self.id_to_token[NUM_RESERVED:]:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path: str) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            tokens = [line.rstrip("\n") for line in fh]
        return cls([t for t in tokens if t])


def build_vocab(lines, cap: int) -> Vocabulary:
    """Keep the (cap - 4) most frequent tokens; ties break lexicographically."""
    if cap <= NUM_RESERVED:
        raise ParameterError(f"vocabulary cap must exceed {NUM_RESERVED}, got {cap}")
    counts: Counter[str] = Counter()
    n_lines = 0
    for line in lines:
        n_lines += 1
        counts.update(line.lower().split())
    if n_lines == 0:
        raise InputError("empty corpus: no lines to build a vocabulary from")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocabulary([tok for tok, _ in ranked[: cap - NUM_RESERVED]])


@dataclass
class Document:
    """One tokenized line: BOS ... EOS, no PAD inside."""

    tokens: np.ndarray  # int64, starts with BOS, ends with EOS
    label: int | None
    line_no: int

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.int64)
        if self.tokens[0] != BOS_ID or self.tokens[-1] != EOS_ID:
            raise InputError(f"document {self.line_no} must start with BOS and end with EOS")

    def __len__(self) -> int:
        return len(self.tokens)


def encode_labeled_line(
    line: str,
    vocab: Vocabulary,
    labeled: bool = True,
    line_no: int = 0,
    num_classes: int | None = None,
) -> Document:
    """Parse one corpus line; labeled form is "INT<TAB>TEXT"."""
    line = line.rstrip("\n")
    label: int | None = None
    text = line
    if labeled:
        head, sep, text = line.partition("\t")
        if not sep:
            raise ParseError("expected 'label<TAB>text'", line_no)
        try:
            label = int(head)
        except ValueError:
            raise ParseError(f"label {head!r} is not an integer", line_no) from None
        if label < 0 or (num_classes is not None and label >= num_classes):
            raise ParseError(f"label {label} outside class range", line_no)
    return Document(tokens=vocab.encode(text), label=label, line_no=line_no)


def read_corpus(path: str, vocab: Vocabulary, labeled: bool = False, num_classes: int | None = None) -> list[Document]:
    docs = []
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            if line.strip() == "":
                continue
            docs.append(encode_labeled_line(line, vocab, labeled=labeled, line_no=i, num_classes=num_classes))
    if not docs:
        raise InputError(f"empty corpus: {path}")
    return docs


def write_corpus(path: str, docs: list[Document], vocab: Vocabulary) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            text = " ".join(vocab.decode(doc.tokens))
            if doc.label is not None:
                fh.write(f"{doc.label}\t{text}\n")
            else:
                fh.write(text + "\n")


# ---------------------------------------------------------------------------
# batching


@dataclass
class Batch:
    """PAD-filled token matrix plus masks; the unit of one optimizer step."""

    tokens: np.ndarray  # [batch, T] int64, PAD beyond each length
    lengths: np.ndarray  # [batch] int64
    mask: np.ndarray  # [batch, T] bool, True exactly on real tokens
    labels: np.ndarray | None  # [batch] int64, present when all docs carry one
    doc_ids: np.ndarray  # [batch] source line numbers

    @property
    def size(self) -> int:
        return self.tokens.shape[0]

    def decoder_inputs(self) -> np.ndarray:
        return self.tokens[:, :-1]

    def targets(self) -> np.ndarray:
        return self.tokens[:, 1:]

    def target_mask(self) -> np.ndarray:
        return self.mask[:, 1:]


def _make_batch(docs: list[Document]) -> Batch:
    width = max(len(d) for d in docs)
    tokens = np.full((len(docs), width), PAD_ID, dtype=np.int64)
    lengths = np.array([len(d) for d in docs], dtype=np.int64)
    for i, d in enumerate(docs):
        tokens[i, : len(d)] = d.tokens
    mask = np.arange(width)[None, :] < lengths[:, None]
    labels = None
    if all(d.label is not None for d in docs):
        labels = np.array([d.label for d in docs], dtype=np.int64)
    doc_ids = np.array([d.line_no for d in docs], dtype=np.int64)
    return Batch(tokens=tokens, lengths=lengths, mask=mask, labels=labels, doc_ids=doc_ids)


def batchify(
    documents: list[Document],
    batch_size: int,
    rng: np.random.Generator | None = None,
    sort_by_length: bool = False,
) -> list[Batch]:
    """Split an epoch into batches; every document appears exactly once.

    With sort_by_length, documents are bucketed by length before chunking
    (cheaper padding) and the batch order is shuffled; otherwise the document
    order itself is shuffled.  rng=None keeps corpus order (evaluation).
    """
    if batch_size < 1:
        raise ParameterError(f"batch size must be >= 1, got {batch_size}")
    docs = list(documents)
    if not docs:
        raise InputError("cannot batch an empty document list")
    if sort_by_length:
        docs.sort(key=lambda d: (len(d), d.line_no))
    elif rng is not None:
        docs = [docs[i] for i in rng.permutation(len(docs))]
    batches = [_make_batch(docs[i : i + batch_size]) for i in range(0, len(docs), batch_size)]
    if sort_by_length and rng is not None:
        batches = [batches[i] for i in rng.permutation(len(batches))]
    return batches


# ---------------------------------------------------------------------------
# synthetic class-conditional Markov corpora


@dataclass
class SyntheticSpec:
    """First-order Markov chain per class over tokens "w0".."w{V-1}".

    The exact entropy rate of each chain (stationary distribution times row
    entropies) is reported as the achievable per-token NLL floor.  `start`
    defaults to each chain's stationary distribution.
    """

    num_classes: int
    vocab_size: int
    transitions: list[np.ndarray]  # per class, [V, V] row-stochastic
    length_min: int
    length_max: int
    docs_per_class: int
    seed: int
    start: list[np.ndarray] | None = None

    def __post_init__(self):
        if self.num_classes < 1 or len(self.transitions) != self.num_classes:
            raise ConfigError("need one transition matrix per class")
        if self.length_min < 1 or self.length_max < self.length_min:
            raise ConfigError(f"bad length range [{self.length_min}, {self.length_max}]")
        v = self.vocab_size
        for c, m in enumerate(self.transitions):
            m = np.asarray(m, dtype=np.float64)
            if m.shape != (v, v):
                raise ConfigError(f"class {c} transition matrix must be {v}x{v}, got {m.shape}")
            sums = m.sum(axis=1)
            if (m < 0).any() or not np.allclose(sums, 1.0, atol=1e-9):
                bad = int(np.argmax(np.abs(sums - 1.0)))
                raise ConfigError(f"class {c} transition row {bad} is not stochastic (sum {sums[bad]:.6f})")
            self.transitions[c] = m
        if self.start is not None:
            for c, s in enumerate(self.start):
                s = np.asarray(s, dtype=np.float64)
                if s.shape != (v,) or (s < 0).any() or not np.isclose(s.sum(), 1.0, atol=1e-9):
                    raise ConfigError(f"class {c} start distribution is not a distribution over {v} tokens")
                self.start[c] = s


def stationary_distribution(transition: np.ndarray) -> np.ndarray:
    """Left eigenvector of the transition matrix for eigenvalue 1."""
    vals, vecs = np.linalg.eig(transition.T)
    idx = int(np.argmin(np.abs(vals - 1.0)))
    pi = np.real(vecs[:, idx])
    pi = np.abs(pi)
    return pi / pi.sum()


def entropy_rate(transition: np.ndarray) -> float:
    """Stationary-weighted row entropy in nats per token."""
    pi = stationary_distribution(transition)
    p = np.asarray(transition, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        logs = np.where(p > 0, np.log(p), 0.0)
    row_h = -(p * logs).sum(axis=1)
    return float(pi @ row_h)


def synthetic_vocab(vocab_size: int) -> Vocabulary:
    return Vocabulary([f"w{i}" for i in range(vocab_size)])


def generate_synthetic(spec: SyntheticSpec) -> tuple[list[Document], Vocabulary, dict]:
    """Sample labeled documents from the class-conditional chains.

    Returns (documents, vocabulary, info) where info carries the per-class
    entropy rates (the NLL-per-token floor a perfect model could reach on the
    in-chain tokens) and the start distributions actually used.
    """
    vocab = synthetic_vocab(spec.vocab_size)
    rng = np.random.default_rng(spec.seed)
    starts = (
        [np.asarray(s) for s in spec.start]
        if spec.start is not None
        else [stationary_distribution(m) for m in spec.transitions]
    )
    docs: list[Document] = []
    line_no = 0
    for c in range(spec.num_classes):
        trans = spec.transitions[c]
        for _ in range(spec.docs_per_class):
            length = int(rng.integers(spec.length_min, spec.length_max + 1))
            states = np.empty(length, dtype=np.int64)
            states[0] = rng.choice(spec.vocab_size, p=starts[c])
            for t in range(1, length):
                states[t] = rng.choice(spec.vocab_size, p=trans[states[t - 1]])
            tokens = np.concatenate(([BOS_ID], states + NUM_RESERVED, [EOS_ID]))
            docs.append(Document(tokens=tokens, label=c, line_no=line_no))
            line_no += 1
    info = {
        "entropy_rates": [entropy_rate(m) for m in spec.transitions],
        "starts": starts,
    }
    return docs, vocab, info


def parse_synthetic_spec(text: str) -> SyntheticSpec:
    """Parse the structured-text synthetic-corpus description.

    Scalar fields are "key = value" lines: classes, vocab, length_min,
    length_max, docs_per_class, seed.  Each "[transition C]" section header is
    followed by vocab-many rows of vocab-many probabilities; an optional
    "[start C]" section holds one row.  '#' starts a comment.
    """
    scalars: dict[str, int] = {}
    matrices: dict[tuple[str, int], list[list[float]]] = {}
    current: tuple[str, int] | None = None
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            parts = line[1:-1].split()
            if len(parts) != 2 or parts[0] not in ("transition", "start"):
                raise ParseError(f"bad section header {line!r}", i)
            try:
                current = (parts[0], int(parts[1]))
            except ValueError:
                raise ParseError(f"bad class index in {line!r}", i) from None
            matrices[current] = []
        elif "=" in line and current is None:
            key, _, value = line.partition("=")
            try:
                scalars[key.strip()] = int(value.strip())
            except ValueError:
                raise ParseError(f"value for {key.strip()!r} is not an integer", i) from None
        else:
            if current is None:
                raise ParseError(f"matrix row outside any section: {line!r}", i)
            try:
                matrices[current].append([float(tok) for tok in line.split()])
            except ValueError:
                raise ParseError(f"bad matrix row {line!r}", i) from None
    for key in ("classes", "vocab", "length_min", "length_max", "docs_per_class", "seed"):
        if key not in scalars:
            raise ParseError(f"missing required key {key!r}")
    c, v = scalars["classes"], scalars["vocab"]
    transitions = []
    for ci in range(c):
        if ("transition", ci) not in matrices:
            raise ParseError(f"missing [transition {ci}] section")
        transitions.append(np.array(matrices[("transition", ci)], dtype=np.float64))
    start = None
    if any(kind == "start" for kind, _ in matrices):
        start = []
        for ci in range(c):
            if ("start", ci) not in matrices:
                raise ParseError(f"missing [start {ci}] section (all or none)")
            start.append(np.array(matrices[("start", ci)][0], dtype=np.float64))
    return SyntheticSpec(
        num_classes=c,
        vocab_size=v,
        transitions=transitions,
        length_min=scalars["length_min"],
        length_max=scalars["length_max"],
        docs_per_class=scalars["docs_per_class"],
        seed=scalars["seed"],
        start=start,
    )
