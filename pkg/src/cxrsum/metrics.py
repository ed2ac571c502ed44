"""Evaluation suite: BLEU-4, ROUGE-L, embedding-cosine greedy-match F1,
rule-based findings labeling, and entity-modifier graph F1.

The labeler and graph extractor operate over the closed synthetic vocabulary,
which makes the factual metrics exact on generator output rather than
approximate.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .synthcxr import (
    KIND_KEYWORDS,
    LATERALITY_WORDS,
    NEGATION_CUES,
    NO_FINDING_PHRASE,
    SEVERITY_WORDS,
    Finding,
)

ROUGE_BETA = 1.2


class MetricError(ValueError):
    pass


@dataclass
class MetricReport:
    """All scores on the 0..100 scale."""

    bleu4: float
    rouge_l: float
    semsim_f1: float
    f1_findings: float
    f1_graph: float

    def to_dict(self) -> dict[str, float]:
        return {
            "bleu4": self.bleu4,
            "rouge_l": self.rouge_l,
            "semsim_f1": self.semsim_f1,
            "f1_findings": self.f1_findings,
            "f1_graph": self.f1_graph,
        }


def _tokens(text: str) -> list[str]:
    return text.lower().split()


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu4(hypotheses: list[str], references: list[str]) -> float:
    """Corpus BLEU, n=1..4, brevity penalty, add-1 smoothing for n >= 2."""
    if not hypotheses or len(hypotheses) != len(references):
        raise MetricError("bleu4 needs equal, non-empty hypothesis/reference lists")
    matches = [0] * 5
    totals = [0] * 5
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        h, r = _tokens(hyp), _tokens(ref)
        hyp_len += len(h)
        ref_len += len(r)
        for n in range(1, 5):
            hc, rc = _ngrams(h, n), _ngrams(r, n)
            matches[n] += sum(min(c, rc[g]) for g, c in hc.items())
            totals[n] += max(len(h) - n + 1, 0)
    if totals[1] == 0:
        return 0.0
    log_sum = 0.0
    for n in range(1, 5):
        num, den = matches[n], totals[n]
        if n >= 2:
            num, den = num + 1, den + 1
        if num == 0 or den == 0:
            return 0.0
        log_sum += math.log(num / den)
    geo = math.exp(log_sum / 4)
    bp = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * bp * geo


def _lcs_len(a: list[str], b: list[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, 1):
            cur[j] = prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1])
        prev = cur
    return prev[-1]


def rouge_l(hypotheses: list[str], references: list[str]) -> float:
    """Corpus-averaged LCS F-measure with beta favoring recall."""
    if not hypotheses or len(hypotheses) != len(references):
        raise MetricError("rouge_l needs equal, non-empty hypothesis/reference lists")
    beta2 = ROUGE_BETA**2
    scores = []
    for hyp, ref in zip(hypotheses, references):
        h, r = _tokens(hyp), _tokens(ref)
        lcs = _lcs_len(h, r)
        if lcs == 0 or not h or not r:
            scores.append(0.0)
            continue
        prec = lcs / len(h)
        rec = lcs / len(r)
        scores.append((1 + beta2) * prec * rec / (rec + beta2 * prec))
    return 100.0 * sum(scores) / len(scores)


def semsim_pair(hypothesis: str, reference: str, embeddings: np.ndarray, tokenizer) -> float:
    """Greedy-matching cosine F1 between token sequences; 0 on empty input."""
    hyp_ids = tokenizer.encode(hypothesis)
    ref_ids = tokenizer.encode(reference)
    if not hyp_ids or not ref_ids:
        return 0.0
    hv = embeddings[np.asarray(hyp_ids)]
    rv = embeddings[np.asarray(ref_ids)]
    hn = hv / np.maximum(np.linalg.norm(hv, axis=1, keepdims=True), 1e-12)
    rn = rv / np.maximum(np.linalg.norm(rv, axis=1, keepdims=True), 1e-12)
    sim = hn @ rn.T
    prec = max(float(sim.max(axis=1).mean()), 0.0)
    rec = max(float(sim.max(axis=0).mean()), 0.0)
    if prec + rec == 0.0:
        return 0.0
    return 100.0 * 2 * prec * rec / (prec + rec)


def semsim_f1(hypotheses: list[str], references: list[str], embeddings: np.ndarray, tokenizer) -> float:
    if not hypotheses or len(hypotheses) != len(references):
        raise MetricError("semsim_f1 needs equal, non-empty hypothesis/reference lists")
    return sum(semsim_pair(h, r, embeddings, tokenizer) for h, r in zip(hypotheses, references)) / len(hypotheses)


# ---------------------------------------------------------------------------
# rule-based findings labeling
# ---------------------------------------------------------------------------

_SENTENCE_SPLIT = re.compile(r"[.!?]+")
_WORD_RE = re.compile(r"[a-z]+")

_CUE_PHRASES = [tuple(c.split()) for c in NEGATION_CUES]
_KEYWORD_PHRASES = [
    (kind, tuple(form.split())) for kind, forms in sorted(KIND_KEYWORDS.items()) for form in forms
]
_NO_FINDING_WORDS = tuple(NO_FINDING_PHRASE.split())


def _find_phrase(words: list[str], phrase: tuple[str, ...]) -> list[int]:
    hits = []
    for i in range(len(words) - len(phrase) + 1):
        if tuple(words[i : i + len(phrase)]) == phrase:
            hits.append(i)
    return hits


def rule_label(text: str) -> frozenset[Finding]:
    """Extract findings from free text over the closed vocabulary.

    A kind is positive when one of its surface forms appears in a sentence
    without a preceding negation cue; an assertion in any sentence beats a
    negation in another. Modifiers come from the nearest laterality/severity
    word in the asserting sentence.
    """
    positives: dict[str, Finding] = {}
    saw_no_finding = False
    for raw_sentence in _SENTENCE_SPLIT.split(text.lower()):
        words = _WORD_RE.findall(raw_sentence)
        if not words:
            continue
        if _find_phrase(words, _NO_FINDING_WORDS):
            saw_no_finding = True
            continue
        cue_positions = []
        for cue in _CUE_PHRASES:
            cue_positions.extend(_find_phrase(words, cue))
        for kind, phrase in _KEYWORD_PHRASES:
            if kind in positives:
                continue
            for pos in _find_phrase(words, phrase):
                if any(c < pos for c in cue_positions):
                    continue
                laterality = _nearest_modifier(words, pos, LATERALITY_WORDS)
                severity = _nearest_modifier(words, pos, SEVERITY_WORDS)
                positives[kind] = Finding(kind, laterality, severity)
                break
    if positives:
        return frozenset(positives.values())
    if saw_no_finding:
        return frozenset({Finding("no_finding")})
    return frozenset()


def _nearest_modifier(words: list[str], anchor: int, vocabulary: tuple[str, ...]) -> str:
    best, best_dist = "none", None
    for i, w in enumerate(words):
        if w in vocabulary:
            dist = abs(i - anchor)
            if best_dist is None or dist < best_dist:
                best, best_dist = w, dist
    return best


# ---------------------------------------------------------------------------
# factual F1 metrics
# ---------------------------------------------------------------------------


def _kind_lat(labels) -> set[tuple[str, str]]:
    return {(f.kind, f.laterality) for f in labels}


def f1_findings(pred_labels: list, ref_labels: list) -> float:
    """Micro F1 over (study, kind, laterality) positives."""
    if len(pred_labels) != len(ref_labels):
        raise MetricError("f1_findings needs aligned prediction/reference label lists")
    tp = fp = fn = 0
    for pred, ref in zip(pred_labels, ref_labels):
        p, r = _kind_lat(pred), _kind_lat(ref)
        tp += len(p & r)
        fp += len(p - r)
        fn += len(r - p)
    if tp == fp == fn == 0:
        return 100.0
    if tp == 0:
        return 0.0
    prec = tp / (tp + fp)
    rec = tp / (tp + fn)
    return 100.0 * 2 * prec * rec / (prec + rec)


def graph_extract(text: str) -> frozenset[tuple[str, str]]:
    """Entity-modifier pairs for each positive finding; none-modifiers omitted."""
    pairs: set[tuple[str, str]] = set()
    for f in rule_label(text):
        if f.laterality != "none":
            pairs.add((f.kind, f.laterality))
        if f.severity != "none":
            pairs.add((f.kind, f.severity))
    return frozenset(pairs)


def graph_pair_f1(hyp_graph: frozenset, ref_graph: frozenset) -> float:
    """Exact-pair F1 for one study; two empty graphs count as a perfect match."""
    if not hyp_graph and not ref_graph:
        return 100.0
    if not hyp_graph or not ref_graph:
        return 0.0
    tp = len(hyp_graph & ref_graph)
    if tp == 0:
        return 0.0
    prec = tp / len(hyp_graph)
    rec = tp / len(ref_graph)
    return 100.0 * 2 * prec * rec / (prec + rec)


def f1_graph(hyp_graphs: list, ref_graphs: list) -> float:
    """Per-study pair F1, averaged over the corpus."""
    if not hyp_graphs or len(hyp_graphs) != len(ref_graphs):
        raise MetricError("f1_graph needs equal, non-empty graph lists")
    return sum(graph_pair_f1(h, r) for h, r in zip(hyp_graphs, ref_graphs)) / len(hyp_graphs)


def compute_report(
    hypotheses: list[str],
    references: list[str],
    embeddings: np.ndarray | None = None,
    tokenizer=None,
) -> MetricReport:
    """Full five-metric report; semsim is 0 when no embeddings are supplied."""
    sem = 0.0
    if embeddings is not None and tokenizer is not None:
        sem = semsim_f1(hypotheses, references, embeddings, tokenizer)
    return MetricReport(
        bleu4=bleu4(hypotheses, references),
        rouge_l=rouge_l(hypotheses, references),
        semsim_f1=sem,
        f1_findings=f1_findings([rule_label(h) for h in hypotheses], [rule_label(r) for r in references]),
        f1_graph=f1_graph([graph_extract(h) for h in hypotheses], [graph_extract(r) for r in references]),
    )
