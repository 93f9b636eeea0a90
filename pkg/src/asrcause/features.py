"""Explanatory variables from per-utterance records.

Covers pronunciation scores, vocabulary rarity, SNR bands, percentile binning
and the word-level alignment that yields substitution / deletion / insertion
counts.
"""

from __future__ import annotations

import logging
import math
import string
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .graph import DiscreteDataset, Kind, Role, VariableSchema, outcome_column

logger = logging.getLogger(__name__)

SNR_LEVELS = ("Noisy", "Average", "Clean")
TERTILE_LEVELS = ("Low", "Average", "High")
GENDERS = ("F", "M", "unknown")
ERROR_NODES = ("Subs", "Del", "Ins")


class FeatureError(ValueError):
    pass


@dataclass(frozen=True)
class UtteranceRecord:
    utt_id: str
    age_years: float
    gender: str
    snr_db: float
    ref: tuple[str, ...]
    hyp: tuple[str, ...] = ()
    phone_posterior_ratios: tuple[float, ...] | None = None
    gop_utt: float | None = None


@dataclass(frozen=True)
class FrequencyLexicon:
    counts: Mapping[str, int]
    total_tokens: int

    def __post_init__(self):
        if not self.counts:
            raise FeatureError("lexicon is empty")
        if self.total_tokens < 1:
            raise FeatureError("lexicon total_tokens must be positive")
        if any(c < 1 for c in self.counts.values()):
            raise FeatureError("lexicon counts must be >= 1")

    @classmethod
    def from_counts(cls, counts: Mapping[str, int], total_tokens: int | None = None) -> "FrequencyLexicon":
        merged: Counter = Counter()
        for w, c in counts.items():
            norm = normalize_word(w)
            if norm:
                merged[norm] += int(c)
        total = sum(merged.values()) if total_tokens is None else int(total_tokens)
        return cls(dict(merged), total)

    @property
    def vocab_size(self) -> int:
        return len(self.counts)


@dataclass(frozen=True)
class AlignmentResult:
    subs: int
    dels: int
    ins: int
    matches: int

    @property
    def wer(self) -> float:
        n_ref = self.subs + self.dels + self.matches
        return (self.subs + self.dels + self.ins) / n_ref

    @property
    def errors(self) -> int:
        return self.subs + self.dels + self.ins


# pronunciation

def gop_phone(posteriors: Sequence[float], target: int) -> float:
    """Target-phone posterior divided by the largest posterior."""
    post = np.asarray(posteriors, dtype=float)
    if post.ndim != 1 or post.size == 0:
        raise FeatureError("posteriors must be a non-empty vector")
    if np.any(post < 0) or not np.all(np.isfinite(post)):
        raise FeatureError("posteriors must be finite and nonnegative")
    top = post.max()
    if top <= 0:
        raise FeatureError("posteriors are all zero")
    if not 0 <= target < post.size:
        raise FeatureError(f"target index {target} out of range for {post.size} phones")
    if post[target] <= 0:
        raise FeatureError("target phone has zero posterior; the score must lie in (0, 1]")
    return float(post[target] / top)


def gop_utterance(phone_scores: Sequence[float], log: bool = False) -> float:
    """Mean of per-phone scores (optionally of their logs)."""
    scores = [float(s) for s in phone_scores]
    if not scores:
        raise FeatureError("no phone scores to average")
    if log:
        scores = [math.log(s) for s in scores]
    return math.fsum(scores) / len(scores)


# binning

def quantile_breakpoints(values: Iterable[float], n_bins: int, name: str = "values") -> tuple[float, ...]:
    """Nearest-rank percentile breakpoints guaranteeing ``n_bins`` nonempty bins.

    Breakpoint ``i`` is the value at rank ``ceil(i * N / n_bins)`` of the sorted
    data. Values equal to a breakpoint go to the lower bin. When ties would
    leave a bin empty the breakpoints are moved along the distinct values so
    that every bin keeps at least one of them.
    """
    vals = np.sort(np.asarray(list(values), dtype=float))
    if not np.all(np.isfinite(vals)):
        raise FeatureError(f"{name}: non-finite values cannot be binned")
    distinct = np.unique(vals)
    if len(distinct) < n_bins:
        raise FeatureError(
            f"{name}: need at least {n_bins} distinct values for {n_bins} bins, got {len(distinct)}"
        )
    n = len(vals)
    raw = [vals[-(-i * n // n_bins) - 1] for i in range(1, n_bins)]
    idx = [int(np.searchsorted(distinct, r)) for r in raw]
    k, b = len(distinct), len(raw)
    for j in range(b):
        idx[j] = min(max(idx[j], j), k - b - 1 + j)
        if j:
            idx[j] = max(idx[j], idx[j - 1] + 1)
    return tuple(float(distinct[i]) for i in idx)


def tertile_bins(values: Iterable[float], name: str = "values") -> tuple[float, float]:
    t1, t2 = quantile_breakpoints(values, 3, name)
    return t1, t2


def assign_bins(values, breakpoints: Sequence[float]) -> np.ndarray:
    """Bin index per value: ``v <= b[0]`` is 0, ``b[i-1] < v <= b[i]`` is i."""
    return np.searchsorted(np.asarray(breakpoints, dtype=float), np.asarray(values, dtype=float), side="left")


def discretize_snr(snr_db: float) -> str:
    """Clean from 20 dB up, Average on [5, 20), Noisy below 5 dB."""
    if not math.isfinite(snr_db):
        raise FeatureError(f"SNR must be finite, got {snr_db}")
    if snr_db >= 20.0:
        return "Clean"
    if snr_db >= 5.0:
        return "Average"
    return "Noisy"


# vocabulary

_PUNCT = string.punctuation + "“”‘’"


def normalize_word(word: str) -> str:
    return word.casefold().strip(_PUNCT)


def tokenize(text: str) -> tuple[str, ...]:
    return tuple(w for w in (normalize_word(t) for t in text.split()) if w)


def word_rarity(word: str, lex: FrequencyLexicon) -> float:
    """Add-one smoothed negative log relative frequency."""
    norm = normalize_word(word)
    if not norm:
        raise FeatureError(f"word {word!r} is empty after normalization")
    count = lex.counts.get(norm, 0)
    return -math.log((count + 1) / (lex.total_tokens + lex.vocab_size))


def sentence_difficulty(words: Sequence[str], lex: FrequencyLexicon) -> float:
    if len(words) == 0:
        raise FeatureError("cannot score an empty sentence")
    return math.fsum(word_rarity(w, lex) for w in words) / len(words)


# alignment

def align_wer(ref: Sequence[str], hyp: Sequence[str]) -> AlignmentResult:
    """Unit-cost Levenshtein alignment of word sequences.

    Among minimal alignments the backtrace prefers, at each step from the
    end, match over substitution over deletion over insertion.
    """
    n, m = len(ref), len(hyp)
    if n == 0:
        raise FeatureError("reference is empty; WER is undefined")
    prev = list(range(m + 1))
    rows = [prev]
    for i in range(1, n + 1):
        r = ref[i - 1]
        cur = [i] + [0] * m
        for j in range(1, m + 1):
            diag = prev[j - 1] + (r != hyp[j - 1])
            up = prev[j] + 1
            left = cur[j - 1] + 1
            cur[j] = min(diag, up, left)
        rows.append(cur)
        prev = cur
    i, j = n, m
    subs = dels = ins = matches = 0
    while i > 0 or j > 0:
        cost = rows[i][j]
        if i > 0 and j > 0:
            if ref[i - 1] == hyp[j - 1] and rows[i - 1][j - 1] == cost:
                matches += 1
                i, j = i - 1, j - 1
                continue
            if rows[i - 1][j - 1] + 1 == cost:
                subs += 1
                i, j = i - 1, j - 1
                continue
        if i > 0 and rows[i - 1][j] + 1 == cost:
            dels += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return AlignmentResult(subs, dels, ins, matches)


# dataset construction

@dataclass(frozen=True)
class FeatureConfig:
    min_records: int = 30
    age_bins: tuple[float, ...] | None = None
    age_labels: tuple[str, ...] | None = None
    numwords_bins: int = 4
    outcome_bins: int = 4
    gop_log: bool = False
    max_drop_fraction: float = 0.5


def _bin_labels(k: int) -> tuple[str, ...]:
    return TERTILE_LEVELS if k == 3 else tuple(f"Q{i + 1}" for i in range(k))


def _adaptive_breakpoints(values, k, name):
    distinct = len(np.unique(values))
    k_eff = min(k, distinct)
    if k_eff < 2:
        raise FeatureError(f"{name}: needs at least 2 distinct values to bin, got {distinct}")
    if k_eff < k:
        logger.warning("%s: only %d distinct values, using %d bins instead of %d", name, distinct, k_eff, k)
    return quantile_breakpoints(values, k_eff, name)


def bin_outcomes(
    data: DiscreteDataset,
    n_bins: int = 4,
    breakpoints: Mapping[str, Sequence[float]] | None = None,
) -> tuple[DiscreteDataset, dict]:
    """Add an ordinal twin ``<node>`` for every numeric column ``<node>_value``.

    Returns the extended dataset and the breakpoints used per node.
    """
    breakpoints = dict(breakpoints or {})
    schema, cols, used = [], {}, {}
    for var in data.schema:
        if var.kind is not Kind.NUMERIC_OUTCOME or not var.name.endswith("_value"):
            continue
        node = var.name[: -len("_value")]
        values = data.column(var.name)
        bp = tuple(breakpoints[node]) if node in breakpoints else _adaptive_breakpoints(values, n_bins, node)
        used[node] = list(bp)
        schema.append(VariableSchema(node, Kind.ORDINAL, _bin_labels(len(bp) + 1), var.role))
        cols[node] = assign_bins(values, bp)
    return data.with_columns(schema, cols), used


def _record_problem(rec: UtteranceRecord, gop_available: bool) -> str | None:
    if not rec.utt_id:
        return "utt_id"
    if rec.age_years is None or not math.isfinite(rec.age_years) or rec.age_years < 0:
        return "age_years"
    if rec.gender not in GENDERS:
        return "gender"
    if rec.snr_db is None or not math.isfinite(rec.snr_db):
        return "snr_db"
    if not rec.ref:
        return "ref"
    if not gop_available:
        return "gop"
    return None


class AsrFeatureExtractor(TransformerMixin, BaseEstimator):
    """Turn utterance records into a :class:`DiscreteDataset`.

    ``fit`` learns the data-dependent breakpoints (tertiles for GoP and
    vocabulary difficulty, quantiles for sentence length and error counts);
    ``transform`` applies them. Breakpoints passed in ``breakpoints`` are used
    as-is instead of being learned.

    Parameters
    ----------
    lexicon : FrequencyLexicon
        Word counts for the rarity score.
    min_records : int
        Minimum number of usable records for fitting.
    age_bins : sequence of float, optional
        Upper edges of age bands; integer years are used when omitted.
    breakpoints : dict, optional
        Fixed breakpoints keyed by variable name.
    """

    def __init__(
        self,
        lexicon=None,
        min_records=30,
        age_bins=None,
        age_labels=None,
        numwords_bins=4,
        outcome_bins=4,
        gop_log=False,
        max_drop_fraction=0.5,
        breakpoints=None,
    ):
        self.lexicon = lexicon
        self.min_records = min_records
        self.age_bins = age_bins
        self.age_labels = age_labels
        self.numwords_bins = numwords_bins
        self.outcome_bins = outcome_bins
        self.gop_log = gop_log
        self.max_drop_fraction = max_drop_fraction
        self.breakpoints = breakpoints

    def _raw(self, records: Sequence[UtteranceRecord]):
        if self.lexicon is None:
            raise FeatureError("a FrequencyLexicon is required")
        records = list(records)
        if not records:
            raise FeatureError("no records")
        kept, dropped = [], Counter()
        gop = []
        for rec in records:
            score = None
            try:
                if rec.gop_utt is not None and math.isfinite(rec.gop_utt):
                    score = math.log(rec.gop_utt) if self.gop_log else float(rec.gop_utt)
                elif rec.phone_posterior_ratios:
                    if all(0 < r <= 1 for r in rec.phone_posterior_ratios):
                        score = gop_utterance(rec.phone_posterior_ratios, log=self.gop_log)
            except (ValueError, TypeError):
                score = None
            problem = _record_problem(rec, score is not None)
            if problem is not None:
                dropped[problem] += 1
                continue
            kept.append(rec)
            gop.append(score)
        for fld, cnt in sorted(dropped.items()):
            logger.warning("dropped %d record(s) with missing or invalid %s", cnt, fld)
        if len(records) and sum(dropped.values()) > self.max_drop_fraction * len(records):
            raise FeatureError(
                f"{sum(dropped.values())} of {len(records)} records dropped "
                f"({dict(sorted(dropped.items()))}); more than {self.max_drop_fraction:.0%}"
            )
        align = [align_wer(r.ref, r.hyp) for r in kept]
        raw = {
            "utt_id": [r.utt_id for r in kept],
            "age": np.array([r.age_years for r in kept], dtype=float),
            "gender": [r.gender for r in kept],
            "snr": np.array([r.snr_db for r in kept], dtype=float),
            "GoP": np.array(gop, dtype=float),
            "VocabDifficulty": np.array([sentence_difficulty(r.ref, self.lexicon) for r in kept]),
            "NumWords": np.array([len(r.ref) for r in kept], dtype=float),
            "Subs": np.array([a.subs for a in align], dtype=float),
            "Del": np.array([a.dels for a in align], dtype=float),
            "Ins": np.array([a.ins for a in align], dtype=float),
        }
        return raw, dict(dropped)

    def fit(self, X, y=None):
        raw, dropped = self._raw(X)
        n = len(raw["utt_id"])
        if n < self.min_records:
            raise FeatureError(f"need at least {self.min_records} usable records, got {n}")
        fixed = dict(self.breakpoints or {})
        bp = {}
        for name in ("GoP", "VocabDifficulty"):
            bp[name] = tuple(fixed[name]) if name in fixed else tertile_bins(raw[name], name)
        bp["NumWords"] = (
            tuple(fixed["NumWords"]) if "NumWords" in fixed
            else _adaptive_breakpoints(raw["NumWords"], self.numwords_bins, "NumWords")
        )
        for name in ERROR_NODES:
            bp[name] = (
                tuple(fixed[name]) if name in fixed
                else _adaptive_breakpoints(raw[name], self.outcome_bins, name)
            )
        if self.age_bins is not None:
            self.age_levels_ = tuple(self.age_labels or _band_labels(self.age_bins))
            if len(self.age_levels_) != len(self.age_bins) + 1:
                raise FeatureError("age_labels must have one more entry than age_bins")
        else:
            years = sorted({int(math.floor(a)) for a in raw["age"]})
            if len(years) < 2:
                raise FeatureError("Age: need at least 2 distinct years")
            self.age_levels_ = tuple(str(y) for y in years)
        self.gender_levels_ = GENDERS if "unknown" in set(raw["gender"]) else GENDERS[:2]
        self.breakpoints_ = {k: [float(v) for v in vals] for k, vals in bp.items()}
        self.dropped_ = dropped
        self.n_records_ = n
        return self

    def schema(self) -> list[VariableSchema]:
        check_is_fitted(self, "breakpoints_")
        out = [
            VariableSchema("Age", Kind.ORDINAL, self.age_levels_, Role.PHYSIOLOGICAL),
            VariableSchema("Gender", Kind.CATEGORICAL, self.gender_levels_, Role.PHYSIOLOGICAL),
            VariableSchema("GoP", Kind.ORDINAL, TERTILE_LEVELS, Role.COGNITIVE),
            VariableSchema("SNR", Kind.ORDINAL, SNR_LEVELS, Role.EXTRINSIC),
            VariableSchema("VocabDifficulty", Kind.ORDINAL, TERTILE_LEVELS, Role.EXTRINSIC),
            VariableSchema(
                "NumWords", Kind.ORDINAL, _bin_labels(len(self.breakpoints_["NumWords"]) + 1), Role.EXTRINSIC
            ),
        ]
        for name in ERROR_NODES:
            out.append(VariableSchema(name, Kind.ORDINAL, _bin_labels(len(self.breakpoints_[name]) + 1), Role.ERROR))
        for name in ERROR_NODES:
            out.append(VariableSchema(outcome_column(name), Kind.NUMERIC_OUTCOME, (), Role.ERROR))
        return out

    def transform(self, X) -> DiscreteDataset:
        check_is_fitted(self, "breakpoints_")
        raw, _ = self._raw(X)
        bp = self.breakpoints_
        cols = {}
        if self.age_bins is not None:
            cols["Age"] = assign_bins(raw["age"], self.age_bins)
        else:
            years = [str(int(math.floor(a))) for a in raw["age"]]
            unknown = sorted(set(years) - set(self.age_levels_))
            if unknown:
                raise FeatureError(f"Age: years {unknown} not seen during fit")
            cols["Age"] = [self.age_levels_.index(y) for y in years]
        unknown = sorted(set(raw["gender"]) - set(self.gender_levels_))
        if unknown:
            raise FeatureError(f"Gender: values {unknown} not seen during fit")
        cols["Gender"] = [self.gender_levels_.index(g) for g in raw["gender"]]
        cols["GoP"] = assign_bins(raw["GoP"], bp["GoP"])
        cols["SNR"] = [SNR_LEVELS.index(discretize_snr(v)) for v in raw["snr"]]
        cols["VocabDifficulty"] = assign_bins(raw["VocabDifficulty"], bp["VocabDifficulty"])
        cols["NumWords"] = assign_bins(raw["NumWords"], bp["NumWords"])
        for name in ERROR_NODES:
            cols[name] = assign_bins(raw[name], bp[name])
            cols[outcome_column(name)] = raw[name]
        self.utt_ids_ = list(raw["utt_id"])
        return DiscreteDataset(self.schema(), cols)


def _band_labels(edges: Sequence[float]) -> tuple[str, ...]:
    def fmt(v):
        return f"{v:g}"

    labels = [f"<={fmt(edges[0])}"]
    labels += [f"{fmt(a)}-{fmt(b)}" for a, b in zip(edges, edges[1:])]
    labels.append(f">{fmt(edges[-1])}")
    return tuple(labels)


def build_discrete_dataset(
    records: Sequence[UtteranceRecord],
    lex: FrequencyLexicon,
    config: FeatureConfig | None = None,
    breakpoints: Mapping[str, Sequence[float]] | None = None,
) -> DiscreteDataset:
    config = config or FeatureConfig()
    ext = AsrFeatureExtractor(
        lexicon=lex,
        min_records=config.min_records,
        age_bins=config.age_bins,
        age_labels=config.age_labels,
        numwords_bins=config.numwords_bins,
        outcome_bins=config.outcome_bins,
        gop_log=config.gop_log,
        max_drop_fraction=config.max_drop_fraction,
        breakpoints=breakpoints,
    )
    return ext.fit_transform(records)
