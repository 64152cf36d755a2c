"""Empirical-realism metrics for imitated text, plus the discourse metric q.

Text metrics (smoothed BLEU, modified n-gram precision, length ratio) are
computed per sample pair; label correlations compare classifier score
vectors; aggregate_report runs the n-samples-times-k-repetitions protocol
and reports mean with sample std per metric.
"""

from __future__ import annotations

import json
import math
import random
from collections import Counter
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np

from .behavior import Language
from .errors import InputError
from .model import MessageKind, Transcript
from .text import normalize, tokenize

# Row order of the report table: text metrics, label categories, distance.
CATEGORY_ORDER = ("topics", "emotions", "sentiment", "offensive", "hate", "irony")


def _ngrams(tokens: Sequence[str], n: int) -> Counter[tuple[str, ...]]:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _clipped_matches(cand: Sequence[str], ref: Sequence[str], n: int) -> tuple[int, int]:
    cand_counts = _ngrams(cand, n)
    ref_counts = _ngrams(ref, n)
    matched = sum(min(c, ref_counts[g]) for g, c in cand_counts.items())
    return matched, sum(cand_counts.values())


def bleu(
    candidate: str,
    reference: str,
    max_n: int = 4,
    smoothing_epsilon: float = 0.1,
) -> float:
    """Sentence BLEU with additive-epsilon smoothing on zero counts.

    Geometric mean of modified n-gram precisions for n = 1..max_n; orders
    the candidate is too short to populate are left out of the mean; an
    order with zero matches contributes epsilon/total instead of 0. The
    brevity penalty exp(1 - ref_len/cand_len) applies when the candidate
    is shorter than the reference.
    """
    if not 1 <= max_n <= 4:
        raise InputError(f"max_n must be in 1..4, got {max_n}")
    if smoothing_epsilon <= 0:
        raise InputError(f"smoothing_epsilon must be > 0, got {smoothing_epsilon}")
    cand = tokenize(candidate)
    ref = tokenize(reference)
    if not cand or not ref:
        raise InputError("bleu needs at least one token on each side")

    log_sum = 0.0
    orders = 0
    for n in range(1, min(max_n, len(cand)) + 1):
        matched, total = _clipped_matches(cand, ref, n)
        p = matched / total if matched > 0 else smoothing_epsilon / total
        log_sum += math.log(p)
        orders += 1
    brevity = 1.0 if len(cand) >= len(ref) else math.exp(1.0 - len(ref) / len(cand))
    return brevity * math.exp(log_sum / orders)


def ngram_precision(candidate: str, reference: str, n: int) -> float:
    """Modified n-gram precision: clipped matches over candidate n-grams."""
    if n not in (1, 2):
        raise InputError(f"n must be 1 or 2, got {n}")
    cand = tokenize(candidate)
    ref = tokenize(reference)
    if len(cand) < n:
        raise InputError(f"candidate has {len(cand)} tokens, needs >= {n}")
    matched, total = _clipped_matches(cand, ref, n)
    return matched / total


def length_ratio(generated: str, original: str) -> float:
    """Generated token count over original token count."""
    gen = tokenize(generated)
    orig = tokenize(original)
    if not orig:
        raise InputError("original has no tokens")
    if not gen:
        raise InputError("generated has no tokens")
    return len(gen) / len(orig)


def embedding_distance(e1: np.ndarray, e2: np.ndarray, kind: str = "euclidean") -> float:
    """Distance between two embedding vectors; Euclidean unless configured
    to cosine (1 - cosine similarity, which is not a metric)."""
    a = np.asarray(e1, dtype=np.float64)
    b = np.asarray(e2, dtype=np.float64)
    if a.ndim != 1 or b.ndim != 1:
        raise InputError("embeddings must be vectors")
    if a.shape != b.shape:
        raise InputError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise InputError("embeddings must be finite")
    if kind == "euclidean":
        return float(np.linalg.norm(a - b))
    if kind == "cosine":
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        if na == 0.0 or nb == 0.0:
            raise InputError("cosine distance is undefined for zero vectors")
        return float(1.0 - (a @ b) / (na * nb))
    raise InputError(f"unknown distance kind {kind!r}")


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Sample Pearson correlation; errors on zero variance, never silently 0."""
    if len(xs) != len(ys):
        raise InputError(f"length mismatch: {len(xs)} vs {len(ys)}")
    if len(xs) < 2:
        raise InputError(f"need at least 2 points, got {len(xs)}")
    x = [float(v) for v in xs]
    y = [float(v) for v in ys]
    mx = math.fsum(x) / len(x)
    my = math.fsum(y) / len(y)
    cov = math.fsum((a - mx) * (b - my) for a, b in zip(x, y))
    var_x = math.fsum((a - mx) ** 2 for a in x)
    var_y = math.fsum((b - my) ** 2 for b in y)
    if var_x == 0.0 or var_y == 0.0:
        raise InputError("correlation is undefined for zero-variance input")
    return cov / math.sqrt(var_x * var_y)


@dataclass(frozen=True)
class LabelCorrelation:
    per_subclass: dict[str, float]
    missing: tuple[str, ...]
    aggregate: float


def label_correlation(
    original_labels: np.ndarray,
    generated_labels: np.ndarray,
    subclass_names: Sequence[str],
) -> LabelCorrelation:
    """Pearson r per subclass column, aggregated by mean.

    A zero-variance subclass (on either side) is reported as missing and
    left out of the aggregate rather than counted as zero; if every
    subclass is missing the aggregate is undefined and that is an error.
    """
    orig = np.asarray(original_labels, dtype=np.float64)
    gen = np.asarray(generated_labels, dtype=np.float64)
    if orig.shape != gen.shape:
        raise InputError(f"label shape mismatch: {orig.shape} vs {gen.shape}")
    if orig.ndim != 2:
        raise InputError("labels must be (n_samples, n_subclasses) arrays")
    if orig.shape[1] != len(subclass_names):
        raise InputError(
            f"{orig.shape[1]} label columns vs {len(subclass_names)} subclass names"
        )
    per: dict[str, float] = {}
    missing: list[str] = []
    for j, name in enumerate(subclass_names):
        x, y = orig[:, j], gen[:, j]
        if x.max() == x.min() or y.max() == y.min():
            missing.append(name)
            continue
        per[name] = pearson(x.tolist(), y.tolist())
    if not per:
        raise InputError("every subclass has zero variance; no correlation defined")
    aggregate = math.fsum(per.values()) / len(per)
    return LabelCorrelation(per_subclass=per, missing=tuple(missing), aggregate=aggregate)


@dataclass(frozen=True)
class SamplePair:
    """One (original, generated) pair with optional embeddings and labels."""

    original: str
    generated: str
    original_embedding: np.ndarray | None = None
    generated_embedding: np.ndarray | None = None
    original_labels: Mapping[str, Sequence[float]] | None = None
    generated_labels: Mapping[str, Sequence[float]] | None = None


@dataclass(frozen=True)
class MetricStat:
    mean: float
    std: float


@dataclass(frozen=True)
class MetricReport:
    """Mean and sample std per metric over k repetitions of n samples."""

    metrics: dict[str, MetricStat]
    n_samples: int
    k_repetitions: int
    task: MessageKind
    language: Language
    condition: str
    distance: str
    seed: int
    missing_subclasses: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def to_dict(self) -> dict[str, object]:
        return {
            "schema_version": 1,
            "n_samples": self.n_samples,
            "k_repetitions": self.k_repetitions,
            "task": self.task.value,
            "language": self.language.value,
            "condition": self.condition,
            "distance": self.distance,
            "seed": self.seed,
            "metrics": {
                name: {"mean": stat.mean, "std": stat.std}
                for name, stat in self.metrics.items()
            },
            "missing_subclasses": {
                cat: list(names) for cat, names in self.missing_subclasses.items()
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n"

    def to_text_table(self) -> str:
        header = (
            f"task={self.task.value} language={self.language.value} "
            f"condition={self.condition} n={self.n_samples} k={self.k_repetitions} "
            f"distance={self.distance}"
        )
        width = max([len(name) for name in self.metrics] + [len("metric")])
        lines = [header, f"{'metric'.ljust(width)}  {'mean':>10}  {'±std':>10}"]
        for name, stat in self.metrics.items():
            lines.append(f"{name.ljust(width)}  {stat.mean:>10.4f}  {stat.std:>10.4f}")
        return "\n".join(lines) + "\n"


def _sample_std(values: Sequence[float]) -> float:
    if len(values) < 2:
        return 0.0
    mean = math.fsum(values) / len(values)
    return math.sqrt(math.fsum((v - mean) ** 2 for v in values) / (len(values) - 1))


def aggregate_report(
    pairs: Sequence[SamplePair],
    n: int,
    k: int,
    seed: int,
    *,
    max_n: int = 4,
    smoothing_epsilon: float = 0.1,
    distance: str = "euclidean",
    subclass_names: Mapping[str, Sequence[str]] | None = None,
    task: MessageKind = MessageKind.POST,
    language: Language = Language.EN,
    condition: str = "in-context",
) -> MetricReport:
    """Run the sampling protocol: k repetitions of n pairs drawn without
    replacement (repetition j uses seed + j), mean per metric within a
    repetition, mean and sample std across repetitions.

    Embedding distance is included when the pairs carry embeddings; label
    categories when they carry labels (subclass_names maps category to
    column names). Metadata (task, language, condition) is echoed into
    the report.

    Bigram precision is undefined for single-token generations; those
    samples are left out of that one metric's mean rather than scored 0.
    """
    if n < 1 or k < 1:
        raise InputError(f"n and k must be >= 1, got n={n}, k={k}")
    if len(pairs) < n:
        raise InputError(f"need at least n={n} pairs, got {len(pairs)}")

    with_embeddings = [
        p for p in pairs
        if p.original_embedding is not None and p.generated_embedding is not None
    ]
    if with_embeddings and len(with_embeddings) != len(pairs):
        raise InputError("either every pair carries embeddings or none does")
    categories: list[str] = []
    if any(p.original_labels is not None for p in pairs):
        first = pairs[0].original_labels
        if first is None or pairs[0].generated_labels is None:
            raise InputError("either every pair carries labels or none does")
        categories = sorted(first)
        for p in pairs:
            if p.original_labels is None or p.generated_labels is None:
                raise InputError("either every pair carries labels or none does")
            if sorted(p.original_labels) != categories or sorted(p.generated_labels) != categories:
                raise InputError("label categories differ across pairs")
        if subclass_names is None:
            raise InputError("labels present but subclass_names not given")
        missing_cats = [c for c in categories if c not in subclass_names]
        if missing_cats:
            raise InputError(f"no subclass names for: {', '.join(missing_cats)}")

    per_rep: dict[str, list[float]] = {}
    missing_union: dict[str, set[str]] = {c: set() for c in categories}

    for rep in range(k):
        rng = random.Random(seed + rep)
        chosen = [pairs[i] for i in rng.sample(range(len(pairs)), n)]

        bleu_vals, uni_vals, bi_vals, len_vals, dist_vals = [], [], [], [], []
        for p in chosen:
            bleu_vals.append(
                bleu(p.generated, p.original, max_n=max_n, smoothing_epsilon=smoothing_epsilon)
            )
            uni_vals.append(ngram_precision(p.generated, p.original, 1))
            if len(tokenize(p.generated)) >= 2:
                bi_vals.append(ngram_precision(p.generated, p.original, 2))
            len_vals.append(length_ratio(p.generated, p.original))
            if with_embeddings:
                dist_vals.append(
                    embedding_distance(p.original_embedding, p.generated_embedding, kind=distance)
                )
        if not bi_vals:
            raise InputError("no generated text has 2 tokens; bigram precision undefined")
        rep_values = {
            "bleu": bleu_vals,
            "unigram_precision": uni_vals,
            "bigram_precision": bi_vals,
            "length_ratio": len_vals,
        }
        for name, vals in rep_values.items():
            per_rep.setdefault(name, []).append(math.fsum(vals) / len(vals))

        for cat in categories:
            orig = np.array([list(p.original_labels[cat]) for p in chosen], dtype=np.float64)
            gen = np.array([list(p.generated_labels[cat]) for p in chosen], dtype=np.float64)
            corr = label_correlation(orig, gen, list(subclass_names[cat]))
            per_rep.setdefault(cat, []).append(corr.aggregate)
            missing_union[cat].update(corr.missing)

        if with_embeddings:
            per_rep.setdefault("embedding_distance", []).append(
                math.fsum(dist_vals) / n
            )

    ordered = ["bleu", "unigram_precision", "bigram_precision", "length_ratio"]
    ordered += [c for c in CATEGORY_ORDER if c in categories]
    ordered += [c for c in categories if c not in CATEGORY_ORDER]
    if with_embeddings:
        ordered.append("embedding_distance")

    metrics = {
        name: MetricStat(
            mean=math.fsum(per_rep[name]) / k, std=_sample_std(per_rep[name])
        )
        for name in ordered
    }
    return MetricReport(
        metrics=metrics,
        n_samples=n,
        k_repetitions=k,
        task=task,
        language=language,
        condition=condition,
        distance=distance,
        seed=seed,
        missing_subclasses={
            cat: tuple(sorted(names)) for cat, names in missing_union.items() if names
        },
    )


class QPlugin(Protocol):
    def __call__(self, transcript: Transcript) -> float: ...


def load_lexicon(path: str | Path) -> tuple[str, ...]:
    """Read a lexicon file: UTF-8, one term per line, '#' starts a comment."""
    terms = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        terms.append(stripped)
    if not terms:
        raise InputError(f"lexicon {path} contains no terms")
    return tuple(terms)


@dataclass(frozen=True)
class LexiconQ:
    """Baseline q: fraction of messages containing any lexicon term.

    A term matches when its tokens appear as a contiguous, casefolded
    token run in the message text, so multi-word terms work too.
    """

    terms: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.terms:
            raise InputError("lexicon must contain at least one term")

    @classmethod
    def from_file(cls, path: str | Path) -> LexiconQ:
        return cls(terms=load_lexicon(path))

    def __call__(self, transcript: Transcript) -> float:
        term_tokens = [
            [t.casefold() for t in tokenize(term)] for term in self.terms
        ]
        hits = 0
        for message in transcript.messages:
            tokens = [t.casefold() for t in tokenize(message.text)]
            if any(_contains_run(tokens, needle) for needle in term_tokens):
                hits += 1
        return hits / len(transcript.messages)


def _contains_run(tokens: list[str], needle: list[str]) -> bool:
    if not needle or len(needle) > len(tokens):
        return False
    return any(
        tokens[i : i + len(needle)] == needle
        for i in range(len(tokens) - len(needle) + 1)
    )


def discourse_metric_q(transcript: Transcript, metric: QPlugin) -> float:
    """Evaluate a discourse metric plugin over a non-empty transcript."""
    if not transcript.messages:
        raise InputError("transcript is empty; q is undefined")
    return float(metric(transcript))
