"""Synthetic software-requirement corpus: schema, generation, tokenization.

The generator produces short requirement-style summaries with three
categorical labels (Priority, Severity, Type).  Text is assembled from
word pools: a core of function words, a shared content pool, and one
keyword pool per class.  ``signal_strength`` interpolates per content
slot between the owning class's pool and the shared pool, so the label
signal planted in the text is known and controllable.  ``domain_shift``
controls the fraction of the in-domain word inventory that never appears
in the generic pre-training corpus.

Generation is a pure function of (spec, seed): every document draws from
its own seeded substream, so documents may be generated in parallel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

TASKS = ("Priority", "Severity", "Type")


class CorpusError(ValueError):
    """Invalid corpus specification or malformed corpus data."""


@dataclass(frozen=True)
class LabelSchema:
    priority_classes: tuple[str, ...] = ("Unassigned", "High", "Medium", "Low")
    severity_classes: tuple[str, ...] = (
        "Normal",
        "Major",
        "Undecided",
        "Minor",
        "Critical",
        "Blocker",
    )
    type_classes: tuple[str, ...] = (
        "Enhancement",
        "Story",
        "Maintenance",
        "Other",
        "Test Task",
        "Plan Item",
        "JUnit",
    )

    def __post_init__(self):
        for name, classes in (
            ("priority", self.priority_classes),
            ("severity", self.severity_classes),
            ("type", self.type_classes),
        ):
            if len(set(classes)) != len(classes):
                raise CorpusError(f"duplicate class in {name} schema: {classes}")

    def classes_for(self, task: str) -> tuple[str, ...]:
        try:
            return {
                "Priority": self.priority_classes,
                "Severity": self.severity_classes,
                "Type": self.type_classes,
            }[task]
        except KeyError:
            raise CorpusError(f"unknown task {task!r}; expected one of {TASKS}") from None


DEFAULT_SCHEMA = LabelSchema()


@dataclass(frozen=True)
class Document:
    id: str
    summary: str
    priority: str | None = None
    severity: str | None = None
    type: str | None = None

    def __post_init__(self):
        if not self.summary:
            raise CorpusError(f"document {self.id!r} has an empty summary")

    def label(self, task: str) -> str | None:
        return {"Priority": self.priority, "Severity": self.severity, "Type": self.type}[task]

    @property
    def labeled(self) -> bool:
        return self.priority is not None


@dataclass
class Corpus:
    documents: list[Document]

    def __len__(self) -> int:
        return len(self.documents)

    def __iter__(self):
        return iter(self.documents)

    def labeled(self) -> "Corpus":
        return Corpus([d for d in self.documents if d.labeled])

    def unlabeled(self) -> "Corpus":
        return Corpus([d for d in self.documents if not d.labeled])

    def texts(self) -> list[str]:
        return [d.summary for d in self.documents]


# Class frequencies observed in a ~16.6k-document requirement tracker export;
# exact counts so each probability vector sums to 1.
_N_REFERENCE = 16590
DEFAULT_CLASS_PROBS = {
    "Priority": tuple(c / _N_REFERENCE for c in (11443, 2677, 1990, 480)),
    "Severity": tuple(c / _N_REFERENCE for c in (14348, 1127, 478, 284, 245, 108)),
    "Type": tuple(c / _N_REFERENCE for c in (5026, 4565, 2180, 1774, 1615, 885, 545)),
}

# Word count profile per Type class: Story runs longest, JUnit shortest;
# the mixture mean sits near 13 words with a median around 12.
DEFAULT_LENGTH_PROFILE = {
    "Enhancement": (13.0, 3.0),
    "Story": (17.0, 4.0),
    "Maintenance": (12.0, 3.0),
    "Other": (11.0, 3.0),
    "Test Task": (10.0, 2.0),
    "Plan Item": (12.0, 3.0),
    "JUnit": (7.0, 2.0),
}

DEFAULT_SIGNAL_STRENGTH = {"Priority": 0.5, "Severity": 0.15, "Type": 0.9}


@dataclass(frozen=True)
class CorpusSpec:
    n_labeled: int = 2400
    n_unlabeled: int = 2400
    n_generic: int = 3000
    class_probs: dict = field(default_factory=lambda: dict(DEFAULT_CLASS_PROBS))
    signal_strength: dict = field(default_factory=lambda: dict(DEFAULT_SIGNAL_STRENGTH))
    length_profile: dict = field(default_factory=lambda: dict(DEFAULT_LENGTH_PROFILE))
    domain_shift: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.n_labeled < 0 or self.n_unlabeled < 0 or self.n_generic < 0:
            raise CorpusError("corpus sizes must be non-negative")
        for task in TASKS:
            probs = self.class_probs.get(task)
            if probs is None:
                raise CorpusError(f"class_probs missing task {task!r}")
            if abs(sum(probs) - 1.0) > 1e-9:
                raise CorpusError(
                    f"class probabilities for {task} sum to {sum(probs)!r}, expected 1"
                )
            if any(p < 0 for p in probs):
                raise CorpusError(f"negative class probability for {task}")
            strength = self.signal_strength.get(task)
            if strength is None or not 0.0 <= strength <= 1.0:
                raise CorpusError(f"signal_strength for {task} must be in [0, 1]")
        if not 0.0 <= self.domain_shift <= 1.0:
            raise CorpusError("domain_shift must be in [0, 1]")

    def with_seed(self, seed: int) -> "CorpusSpec":
        return replace(self, seed=seed)


# ---------------------------------------------------------------------------
# word pools
# ---------------------------------------------------------------------------

CORE_WORDS = (
    "the a to for of in on and or not is are be should must can will "
    "when with as by from at this that user system new all"
).split()

SHARED_CONTENT_WORDS = (
    "server module artifact query page view editor client component resource "
    "dashboard login session export import report link folder file field "
    "form button menu dialog filter search index cache config setting "
    "profile account project release build deploy log error warning message "
    "notification email permission role access token api endpoint request "
    "response payload schema database table record entry sync backup restore "
    "upgrade migration plugin widget template layout theme locale timezone "
    "workflow queue job branch merge commit review snapshot wrapper list "
    "value label selection feed rename command interface baseline compare "
    "lock delivery refresh directory"
).split()

_TYPE_BASE_WORDS = {
    "Enhancement": (
        "improve update enhance polish refine streamline modernize simplify "
        "revamp rework usability responsiveness ergonomics facelift restyle "
        "tidy smooth clean fast friendly"
    ).split(),
    "Story": (
        "developer able implement support feature persona narrative stakeholder "
        "want need acceptance epic capability enablement scenario outcome "
        "journey actor goal benefit"
    ).split(),
    "Maintenance": (
        "maintain cleanup refactor deprecate remove consolidate prune housekeeping "
        "retire obsolete stale legacy dependency vacuum compact archive "
        "rotate expire purge decommission"
    ).split(),
    "Other": (
        "investigate clarify discuss misc general question spike followup "
        "triage ponder brainstorm survey inquiry memo agenda minutes "
        "sidebar digression notes catchall"
    ).split(),
    "Test Task": (
        "verify validate regression coverage testcase qa smoke checklist "
        "assert expectation flaky rerun sanity fuzz loadtest stress "
        "integration endtoend benchmark verification"
    ).split(),
    "Plan Item": (
        "plan roadmap milestone schedule iteration sprint backlog scope "
        "quarter deadline estimate capacity allocation timeline phase "
        "cadence objective target forecast horizon"
    ).split(),
    "JUnit": (
        "junit unittest harness fixture mock stub runner assertion "
        "setup teardown suite parametrize bytecode asserts testclass "
        "testmethod annotation reflection classpath maven"
    ).split(),
}

_TYPE_POOL_SIZE = 150


def _affix_family(bases: list[str], taken: set[str], size: int) -> list[str]:
    """Grow a keyword pool with morphological variants of its base words.

    Keeps the vocabulary per class much larger than the handful of labeled
    examples any single word gets, which is what makes unlabeled-text
    adaptation carry information that labeled fine-tuning alone cannot."""
    out = []
    for base in bases:
        for form in (
            base,
            base + "s",
            base + "ed",
            base + "ing",
            base + "er",
            "re" + base,
            "re" + base + "s",
            "pre" + base,
        ):
            if form not in taken:
                taken.add(form)
                out.append(form)
            if len(out) >= size:
                return out
    return out


def _build_type_pools() -> dict[str, list[str]]:
    taken: set[str] = set(CORE_WORDS) | set(SHARED_CONTENT_WORDS)
    return {
        cls: _affix_family(bases, taken, _TYPE_POOL_SIZE)
        for cls, bases in _TYPE_BASE_WORDS.items()
    }


CLASS_POOLS = {
    "Type": _build_type_pools(),
    "Priority": {
        "Unassigned": (
            "pending unspecified tbd untriaged later someday undetermined "
            "unprioritized parked icebox unsorted unranked"
        ).split(),
        "High": (
            "urgent blocking asap immediately showstopper hotfix expedite "
            "escalate rush dropeverything pressing timecritical"
        ).split(),
        "Medium": (
            "medium balanced typical routine scheduled planned ordinary "
            "midline average moderate steady standard"
        ).split(),
        "Low": (
            "low deferred optional negligible whenever backburner nicetohave "
            "marginal slowlane lowkey unhurried leisure"
        ).split(),
    },
    "Severity": {
        "Normal": "normal common everyday unremarkable mild benign".split(),
        "Major": "major significant severe broken failure outage".split(),
        "Undecided": "undecided unclear ambiguous indeterminate unconfirmed disputed".split(),
        "Minor": "tiny shallow superficial lightweight papercut cosmetic".split(),
        "Critical": "crash corruption halt deadlock fatal critical".split(),
        "Blocker": "blocker blocked unusable stuck freeze impassable".split(),
    },
}

GENERIC_ONLY_WORDS = (
    "garden river mountain recipe kitchen bread festival library museum "
    "holiday morning evening window street bicycle train station coffee "
    "dinner teacher student school lesson history weather market travel "
    "music painting picture lighthouse island forest valley harbor bridge "
    "castle village meadow autumn winter spring summer breakfast lunch "
    "supper novel poem chapter melody rhythm concert gallery sculpture "
    "canvas portrait landscape voyage trail summit lantern orchard"
).split()


def _task_base_pools() -> dict[str, list[str]]:
    """Per-task fallback pool for non-signal content slots: the neutral
    shared words plus that task's full class-word union, so class words of
    one task never leak into another task's slots."""
    out = {}
    for task in TASKS:
        pool = list(SHARED_CONTENT_WORDS)
        for words in CLASS_POOLS[task].values():
            pool.extend(words)
        out[task] = pool
    return out


def _full_inventory() -> list[str]:
    pool = list(CORE_WORDS) + list(SHARED_CONTENT_WORDS)
    for task in TASKS:
        for words in CLASS_POOLS[task].values():
            pool.extend(words)
    return pool


TASK_BASE_POOLS = _task_base_pools()
IN_DOMAIN_INVENTORY = _full_inventory()


def _pool_overlaps() -> list[str]:
    seen: dict[str, str] = {}
    clashes = []
    groups = [("core", CORE_WORDS), ("shared", SHARED_CONTENT_WORDS), ("generic", GENERIC_ONLY_WORDS)]
    for task in TASKS:
        for cls, words in CLASS_POOLS[task].items():
            groups.append((f"{task}/{cls}", words))
    for name, words in groups:
        for w in words:
            if w in seen:
                clashes.append(f"{w!r} in both {seen[w]} and {name}")
            seen[w] = name
    return clashes


def _doc_rng(seed: int, stream: str, index: int) -> np.random.Generator:
    key = sum(ord(c) * (31**i) for i, c in enumerate(stream)) % (2**31)
    return np.random.default_rng(np.random.SeedSequence((seed, key, index)))


def _draw_length(rng: np.random.Generator, mean: float, sd: float) -> int:
    return int(np.clip(round(rng.normal(mean, sd)), 3, 40))


def _shared_inventory(spec: CorpusSpec) -> list[str]:
    """The in-domain word types also allowed in the generic corpus."""
    rng = np.random.default_rng(np.random.SeedSequence((spec.seed, 0xD05A1F)))
    inventory = list(IN_DOMAIN_INVENTORY)
    n_shared = int(round((1.0 - spec.domain_shift) * len(inventory)))
    picked = rng.choice(len(inventory), size=n_shared, replace=False)
    return [inventory[i] for i in sorted(picked)]


def generate_generic_corpus(spec: CorpusSpec) -> Corpus:
    """Unlabeled documents over the generic inventory, deterministic per seed.

    Sentences follow the same alternating function-word / content-word
    template as the in-domain corpus, so masked-token prediction has real
    positional structure to learn in both corpora.
    """
    shared = set(_shared_inventory(spec))
    core = [w for w in CORE_WORDS if w in shared] or list(GENERIC_ONLY_WORDS)
    content = [w for w in IN_DOMAIN_INVENTORY if w in shared and w not in CORE_WORDS]
    content += GENERIC_ONLY_WORDS
    docs = []
    for i in range(spec.n_generic):
        rng = _doc_rng(spec.seed, "generic", i)
        length = _draw_length(rng, 13.0, 3.0)
        phase = int(rng.integers(0, 2))
        words = []
        for j in range(length):
            pool = core if (j + phase) % 2 == 0 else content
            words.append(pool[rng.integers(0, len(pool))])
        docs.append(Document(id=f"gen-{i:06d}", summary=" ".join(words)))
    return Corpus(docs)


def _sample_labels(rng: np.random.Generator, spec: CorpusSpec, schema: LabelSchema):
    out = {}
    for task in TASKS:
        classes = schema.classes_for(task)
        probs = np.asarray(spec.class_probs[task], dtype=np.float64)
        if len(probs) != len(classes):
            raise CorpusError(
                f"{task}: {len(probs)} probabilities for {len(classes)} classes"
            )
        out[task] = classes[rng.choice(len(classes), p=probs)]
    return out


def _compose_summary(
    rng: np.random.Generator, spec: CorpusSpec, labels: dict[str, str], length: int
) -> str:
    """Alternate function-word and content slots (random per-document phase,
    so slot role is inferable from words but not from absolute position).
    Each content slot cycles through the three tasks and draws from the
    owning class's pool with probability signal_strength, otherwise from
    the shared content pool."""
    words = []
    slot = 0
    phase = int(rng.integers(0, 2))
    for j in range(length):
        if (j + phase) % 2 == 0:
            words.append(CORE_WORDS[rng.integers(0, len(CORE_WORDS))])
            continue
        task = TASKS[slot % len(TASKS)]
        slot += 1
        if rng.random() < spec.signal_strength[task]:
            pool = CLASS_POOLS[task][labels[task]]
        else:
            pool = TASK_BASE_POOLS[task]
        words.append(pool[rng.integers(0, len(pool))])
    return " ".join(words)


def generate_srs_corpus(spec: CorpusSpec, schema: LabelSchema = DEFAULT_SCHEMA) -> Corpus:
    """Labeled + unlabeled in-domain documents; the unlabeled pool is drawn
    from the same text process with its labels withheld."""
    docs = []
    for i in range(spec.n_labeled + spec.n_unlabeled):
        rng = _doc_rng(spec.seed, "srs", i)
        labels = _sample_labels(rng, spec, schema)
        mean, sd = spec.length_profile[labels["Type"]]
        length = _draw_length(rng, mean, sd)
        summary = _compose_summary(rng, spec, labels, length)
        if i < spec.n_labeled:
            docs.append(
                Document(
                    id=f"srs-{i:06d}",
                    summary=summary,
                    priority=labels["Priority"],
                    severity=labels["Severity"],
                    type=labels["Type"],
                )
            )
        else:
            docs.append(Document(id=f"srs-{i:06d}", summary=summary))
    return Corpus(docs)


# ---------------------------------------------------------------------------
# vocabulary and encoding
# ---------------------------------------------------------------------------

PAD_TOKEN, UNK_TOKEN, CLS_TOKEN, MASK_TOKEN = "<pad>", "<unk>", "<cls>", "<mask>"
SPECIAL_TOKENS = (PAD_TOKEN, UNK_TOKEN, CLS_TOKEN, MASK_TOKEN)
PAD_ID, UNK_ID, CLS_ID, MASK_ID = 0, 1, 2, 3
NUM_SPECIALS = len(SPECIAL_TOKENS)


def tokenize(text: str) -> list[str]:
    return text.lower().split()


@dataclass
class Vocabulary:
    token_to_id: dict[str, int]
    min_frequency: int

    def __len__(self) -> int:
        return len(self.token_to_id)

    def id(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def tokens(self) -> list[str]:
        ordered = sorted(self.token_to_id.items(), key=lambda kv: kv[1])
        return [tok for tok, _ in ordered]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self.tokens():
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            tokens = [line.rstrip("\n") for line in fh]
        if tuple(tokens[:NUM_SPECIALS]) != SPECIAL_TOKENS:
            raise CorpusError(f"vocabulary file {path} does not start with the special tokens")
        return cls({tok: i for i, tok in enumerate(tokens)}, min_frequency=0)


def build_vocabulary(corpora: list[Corpus], min_frequency: int = 1) -> Vocabulary:
    """Word-level vocabulary: lowercase, whitespace split, frequency pruned.

    Ids are dense and stable for a given corpus list and threshold: special
    tokens take 0..3, the rest are ordered by descending frequency with
    lexicographic tie-break.
    """
    if not corpora:
        raise CorpusError("build_vocabulary needs at least one corpus")
    counts: dict[str, int] = {}
    for corpus in corpora:
        for doc in corpus:
            for tok in tokenize(doc.summary):
                counts[tok] = counts.get(tok, 0) + 1
    kept = sorted(
        (tok for tok, n in counts.items() if n >= min_frequency),
        key=lambda tok: (-counts[tok], tok),
    )
    mapping = {tok: i for i, tok in enumerate(SPECIAL_TOKENS)}
    for tok in kept:
        mapping[tok] = len(mapping)
    return Vocabulary(mapping, min_frequency)


@dataclass
class EncodedExample:
    token_ids: np.ndarray  # (max_len,) int64
    attention_mask: np.ndarray  # (max_len,) bool
    label: str | None = None


def encode(doc: Document, vocab: Vocabulary, max_len: int) -> EncodedExample:
    """[CLS] + word ids, truncated to max_len and right-padded."""
    if max_len < 2:
        raise CorpusError(f"max_len must be >= 2, got {max_len}")
    ids = [CLS_ID] + [vocab.id(tok) for tok in tokenize(doc.summary)]
    ids = ids[:max_len]
    n_real = len(ids)
    ids = ids + [PAD_ID] * (max_len - n_real)
    mask = np.zeros(max_len, dtype=bool)
    mask[:n_real] = True
    return EncodedExample(np.asarray(ids, dtype=np.int64), mask)


def encode_batch(
    docs: list[Document], vocab: Vocabulary, max_len: int
) -> tuple[np.ndarray, np.ndarray]:
    ids = np.zeros((len(docs), max_len), dtype=np.int64)
    mask = np.zeros((len(docs), max_len), dtype=bool)
    for i, doc in enumerate(docs):
        ex = encode(doc, vocab, max_len)
        ids[i] = ex.token_ids
        mask[i] = ex.attention_mask
    return ids, mask


# ---------------------------------------------------------------------------
# splitting
# ---------------------------------------------------------------------------


def _largest_remainder(n: int, fracs: tuple[float, float, float]) -> list[int]:
    raw = [n * f for f in fracs]
    base = [math.floor(r) for r in raw]
    leftover = n - sum(base)
    order = sorted(range(len(fracs)), key=lambda i: (-(raw[i] - base[i]), i))
    for i in order[:leftover]:
        base[i] += 1
    return base


def split(
    corpus: Corpus,
    fractions: dict[str, float],
    seed: int,
    task: str | None = None,
    schema: LabelSchema = DEFAULT_SCHEMA,
) -> tuple[Corpus, Corpus, Corpus]:
    """Deterministic disjoint train/val/test partition.

    When ``task`` is given and the corpus is labeled, the split is
    stratified by that task's label; global split sizes are exact up to
    largest-remainder rounding.
    """
    missing = {"train", "val", "test"} - set(fractions)
    if missing:
        raise CorpusError(f"fractions missing keys: {sorted(missing)}")
    fracs = (fractions["train"], fractions["val"], fractions["test"])
    if abs(sum(fracs) - 1.0) > 1e-9:
        raise CorpusError(f"split fractions sum to {sum(fracs)!r}, expected 1")
    if any(f < 0 for f in fracs):
        raise CorpusError("split fractions must be non-negative")

    docs = corpus.documents
    n = len(docs)
    targets = _largest_remainder(n, fracs)
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x5B117)))

    if task is not None and docs and docs[0].labeled:
        classes = schema.classes_for(task)
        groups = {c: [] for c in classes}
        for idx, doc in enumerate(docs):
            label = doc.label(task)
            if label not in groups:
                raise CorpusError(f"document {doc.id} has unknown {task} label {label!r}")
            groups[label].append(idx)
    else:
        groups = {"__all__": list(range(n))}

    group_names = list(groups)
    alloc = {name: _largest_remainder(len(groups[name]), fracs) for name in group_names}

    # Per-group rounding can drift the global sizes; shift single documents
    # between splits (largest groups first) until the totals match.
    for j in range(3):
        while sum(alloc[g][j] for g in group_names) > targets[j]:
            donor = max(group_names, key=lambda g: (alloc[g][j], -group_names.index(g)))
            deficit = next(
                k for k in range(3) if sum(alloc[g][k] for g in group_names) < targets[k]
            )
            alloc[donor][j] -= 1
            alloc[donor][deficit] += 1

    parts: tuple[list[Document], list[Document], list[Document]] = ([], [], [])
    for name in group_names:
        indices = np.array(groups[name], dtype=np.int64)
        rng.shuffle(indices)
        a, b, _ = alloc[name]
        for bucket, chunk in zip(parts, (indices[:a], indices[a : a + b], indices[a + b :])):
            bucket.extend(docs[int(i)] for i in chunk)
    return Corpus(parts[0]), Corpus(parts[1]), Corpus(parts[2])


# ---------------------------------------------------------------------------
# dataset files
# ---------------------------------------------------------------------------


def save_corpus(path, corpus: Corpus) -> None:
    """One document per line: id, summary, priority, severity, type (TSV)."""
    with open(path, "w", encoding="utf-8") as fh:
        for doc in corpus:
            if "\t" in doc.summary or "\n" in doc.summary:
                raise CorpusError(f"document {doc.id} summary contains a separator")
            fields = (doc.id, doc.summary, doc.priority or "", doc.severity or "", doc.type or "")
            fh.write("\t".join(fields) + "\n")


def load_corpus(path) -> Corpus:
    docs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 5:
                raise CorpusError(f"{path}:{lineno}: expected 5 fields, got {len(parts)}")
            doc_id, summary, priority, severity, type_label = parts
            docs.append(
                Document(
                    id=doc_id,
                    summary=summary,
                    priority=priority or None,
                    severity=severity or None,
                    type=type_label or None,
                )
            )
    return Corpus(docs)
