"""Corpus BLEU-1..4, ROUGE-L and METEOR-lite.

METEOR-lite aligns unigrams by exact match, then by match after stripping
one of the suffixes ``ing``, ``es``, ``ed``, ``s``. It has no synonym stage,
so its numbers are only roughly comparable to the full METEOR tool.
"""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .corpus import Narrative

Tokens = Sequence[str]

_SUFFIXES = ("ing", "es", "ed", "s")


def _ngrams(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _check_pairs(hypotheses, references) -> None:
    if len(hypotheses) != len(references):
        raise ValueError(f"{len(hypotheses)} hypotheses vs {len(references)} references")
    if not hypotheses:
        raise ValueError("cannot score an empty corpus")


def bleu_n(hypotheses: Sequence[Tokens], references: Sequence[Tokens], n: int = 4) -> float:
    """Corpus BLEU with uniform weights over orders 1..n and one reference per hypothesis.

    A zero clipped count at some order is floored at half a match, i.e.
    ``p_k = 1 / (2 * total_k)``, so short corpora do not collapse to 0.
    An order with no n-grams at all (every hypothesis shorter than k) has
    vacuous precision 1.
    """
    _check_pairs(hypotheses, references)
    matches = [0] * n
    totals = [0] * n
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp_len += len(hyp)
        ref_len += len(ref)
        for k in range(1, n + 1):
            h, r = _ngrams(hyp, k), _ngrams(ref, k)
            matches[k - 1] += sum(min(c, r[g]) for g, c in h.items())
            totals[k - 1] += max(len(hyp) - k + 1, 0)
    if hyp_len == 0:
        return 0.0
    log_p = 0.0
    for m, t in zip(matches, totals):
        if t == 0:
            continue
        p = m / t if m > 0 else 1.0 / (2.0 * t)
        log_p += math.log(p) / n
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return bp * math.exp(log_p)


def lcs_length(a: Tokens, b: Tokens) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l_pair(hyp: Tokens, ref: Tokens) -> float:
    lcs = lcs_length(hyp, ref)
    if lcs == 0:
        return 0.0
    p, r = lcs / len(hyp), lcs / len(ref)
    return 2 * p * r / (p + r)


def rouge_l(hypotheses: Sequence[Tokens], references: Sequence[Tokens]) -> float:
    """Mean per-pair LCS F-measure (beta = 1)."""
    _check_pairs(hypotheses, references)
    return sum(rouge_l_pair(h, r) for h, r in zip(hypotheses, references)) / len(hypotheses)


def stem(token: str) -> str:
    for suf in _SUFFIXES:
        if token.endswith(suf) and len(token) - len(suf) >= 2:
            return token[: -len(suf)]
    return token


def _align(hyp: Tokens, ref: Tokens) -> list[tuple[int, int]]:
    """One-to-one alignment: exact matches first, then stem matches.

    Within a stage, the i-th occurrence of a key in ``hyp`` pairs with the
    i-th free occurrence in ``ref``, which keeps same-key pairs in order.
    """
    pairs: list[tuple[int, int]] = []
    used_h: set[int] = set()
    used_r: set[int] = set()
    for key_fn in (lambda t: t, stem):
        slots: dict[str, list[int]] = defaultdict(list)
        for j, tok in enumerate(ref):
            if j not in used_r:
                slots[key_fn(tok)].append(j)
        for i, tok in enumerate(hyp):
            if i in used_h:
                continue
            free = slots.get(key_fn(tok))
            if free:
                j = free.pop(0)
                pairs.append((i, j))
                used_h.add(i)
                used_r.add(j)
    return sorted(pairs)


def _chunks(pairs: list[tuple[int, int]]) -> int:
    chunks = 0
    prev = None
    for i, j in pairs:
        if prev is None or i != prev[0] + 1 or j != prev[1] + 1:
            chunks += 1
        prev = (i, j)
    return chunks


def meteor_lite_pair(hyp: Tokens, ref: Tokens) -> float:
    pairs = _align(hyp, ref)
    m = len(pairs)
    if m == 0:
        return 0.0
    p, r = m / len(hyp), m / len(ref)
    f_mean = 10 * p * r / (r + 9 * p)
    penalty = 0.5 * (_chunks(pairs) / m) ** 3
    return f_mean * (1 - penalty)


def meteor_lite(hypotheses: Sequence[Tokens], references: Sequence[Tokens]) -> float:
    _check_pairs(hypotheses, references)
    return sum(meteor_lite_pair(h, r) for h, r in zip(hypotheses, references)) / len(hypotheses)


@dataclass
class MetricReport:
    bleu1: float
    bleu2: float
    bleu3: float
    bleu4: float
    rouge_l: float
    meteor_lite: float
    n_pairs: int
    avg_generated_length: float
    by_infill_index: dict[str, "MetricReport"] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    SCORES = ("bleu1", "bleu2", "bleu3", "bleu4", "meteor_lite", "rouge_l")

    def scores(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in self.SCORES}

    def to_dict(self) -> dict:
        out = {
            "scores_x100": {k: round(100 * v, 2) for k, v in self.scores().items()},
            "raw": self.scores(),
            "n_pairs": self.n_pairs,
            "avg_generated_length": self.avg_generated_length,
        }
        if self.metadata:
            out["metadata"] = self.metadata
        if self.by_infill_index:
            out["by_infill_index"] = {k: v.to_dict() for k, v in self.by_infill_index.items()}
        return out


def score_pairs(hypotheses: Sequence[Tokens], references: Sequence[Tokens]) -> MetricReport:
    _check_pairs(hypotheses, references)
    return MetricReport(
        bleu1=bleu_n(hypotheses, references, 1),
        bleu2=bleu_n(hypotheses, references, 2),
        bleu3=bleu_n(hypotheses, references, 3),
        bleu4=bleu_n(hypotheses, references, 4),
        rouge_l=rouge_l(hypotheses, references),
        meteor_lite=meteor_lite(hypotheses, references),
        n_pairs=len(hypotheses),
        avg_generated_length=sum(len(h) for h in hypotheses) / len(hypotheses),
    )


def _index_key(idx) -> str:
    return "none" if idx is None else str(idx)


def evaluate_run(generations: Sequence, references: Sequence[Narrative] | Mapping[str, Narrative],
                 per_step: bool = False) -> MetricReport:
    """Score generated narratives against references.

    By default each narrative's steps are concatenated into one
    hypothesis/reference pair; ``per_step=True`` scores step pairs instead.
    Generations carrying an infill index also get per-index sub-reports.
    ``avg_generated_length`` is always tokens per generated narrative.
    """
    ref_map = references if isinstance(references, Mapping) else {n.id: n for n in references}
    missing = sorted({g.narrative_id for g in generations if g.narrative_id not in ref_map})
    if missing:
        raise KeyError(f"generations reference unknown narrative ids: {missing}")
    if not generations:
        raise ValueError("no generations to evaluate")

    def pairs(gens):
        hyps, refs = [], []
        for g in gens:
            ref_steps = [list(s.tokens) for s in ref_map[g.narrative_id].steps[:len(g.steps)]]
            if per_step:
                hyps.extend(list(s) for s in g.steps)
                refs.extend(ref_steps)
            else:
                hyps.append([t for s in g.steps for t in s])
                refs.append([t for s in ref_steps for t in s])
        return hyps, refs

    def report(gens) -> MetricReport:
        rep = score_pairs(*pairs(gens))
        rep.avg_generated_length = sum(sum(len(s) for s in g.steps) for g in gens) / len(gens)
        return rep

    overall = report(generations)
    overall.metadata = {"pairing": "per_step" if per_step else "concatenated_steps",
                        "meteor": "meteor-lite (exact + suffix stem, no synonyms)"}
    groups: dict[str, list] = defaultdict(list)
    for g in generations:
        groups[_index_key(g.infill_index)].append(g)
    if len(groups) > 1 or "none" not in groups:
        order = sorted(groups, key=lambda k: (k != "none", int(k) if k != "none" else -1))
        overall.by_infill_index = {k: report(groups[k]) for k in order}
    return overall
