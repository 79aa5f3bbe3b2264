"""Greedy and beam-search decoding, and inference-time infilling."""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .corpus import BOS, EOS, PAD, EncodedNarrative, Vocabulary
from .model import EMPTY_PLAN, MaskPlan, ModelParams, apply_mask, decoder_init, decoder_step, encode_narrative_context
from .nn.tensor import Tensor, no_grad

THREADS_ENV = "NARRATIVE_INFILL_THREADS"
DEFAULT_BANNED = (PAD, BOS)


@dataclass(frozen=True)
class BeamHypothesis:
    tokens: tuple[int, ...]
    log_prob: float
    finished: bool = False


@dataclass(frozen=True)
class BeamResult:
    tokens: tuple[int, ...]  # generated ids, BOS excluded, EOS kept when emitted
    log_prob: float
    truncated: bool


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _as_rows(g_k) -> Tensor:
    g = g_k if isinstance(g_k, Tensor) else Tensor(np.asarray(g_k))
    return Tensor(g.data.reshape(1, -1))


StepFn = Callable[[object, np.ndarray], tuple[object, np.ndarray]]


def _decoder_step_fn(params: ModelParams) -> StepFn:
    def step(states: np.ndarray, last: np.ndarray):
        h_new, logits = decoder_step(Tensor(states), last, params)
        return h_new.data, _log_softmax(logits.data.astype(np.float64))
    return step


def _decoder_start(g_k, params: ModelParams) -> np.ndarray:
    g = _as_rows(g_k)
    return decoder_init(Tensor(g.data.astype(params.init_w.dtype, copy=False)), params).data


def beam_search(g_k, params: ModelParams, beam: int = 3, max_len: int = 22,
                banned: Iterable[int] = DEFAULT_BANNED) -> BeamResult:
    """Length-capped beam search over the decoder conditioned on ``g_k``.

    Scores are summed log-probabilities without length normalisation.
    Hypotheses that emit EOS are frozen but keep competing for beam slots.
    Ties go to the lexicographically smaller token sequence. Returns the best
    finished hypothesis, or the best unfinished one flagged ``truncated``.
    """
    with no_grad():
        return beam_search_fn(_decoder_step_fn(params), _decoder_start(g_k, params),
                              beam=beam, max_len=max_len, banned=banned)


def beam_search_fn(step: StepFn, init_state: np.ndarray, *, beam: int, max_len: int,
                   banned: Iterable[int] = DEFAULT_BANNED) -> BeamResult:
    """Beam search over any step function.

    ``step(states, last_tokens)`` gets the stacked states (rows) of the live
    hypotheses and their last tokens and returns new states plus per-row
    log-probabilities over the vocabulary. ``init_state`` has one row.
    """
    if beam < 1 or max_len < 1:
        raise ValueError("beam and max_len must be at least 1")
    banned = sorted(set(banned))
    states = init_state
    hyps = [BeamHypothesis((BOS,), 0.0)]
    hyp_state = [0]
    for _ in range(max_len):
        live = [i for i, h in enumerate(hyps) if not h.finished]
        if not live:
            break
        last = np.array([hyps[i].tokens[-1] for i in live])
        new_states, logp = step(states[[hyp_state[i] for i in live]], last)
        logp = np.array(logp, dtype=np.float64)
        if banned:
            logp[:, banned] = -np.inf
        candidates: list[tuple[float, tuple[int, ...], bool, int]] = [
            (h.log_prob, h.tokens, True, -1) for h in hyps if h.finished
        ]
        for row, i in enumerate(live):
            parent = hyps[i]
            # only the parent's `beam` best continuations can survive
            order = np.lexsort((np.arange(logp.shape[1]), -logp[row]))[:beam]
            for v in order:
                if not np.isfinite(logp[row, v]):
                    continue
                candidates.append((parent.log_prob + float(logp[row, v]),
                                   parent.tokens + (int(v),), int(v) == EOS, row))
        candidates.sort(key=lambda c: (-c[0], c[1]))
        kept = candidates[:beam]
        hyps = [BeamHypothesis(tok, score, fin) for score, tok, fin, _ in kept]
        states = new_states
        hyp_state = [row for *_, row in kept]
    finished = [h for h in hyps if h.finished]
    pool, truncated = (finished, False) if finished else (hyps, True)
    best = min(pool, key=lambda h: (-h.log_prob, h.tokens))
    return BeamResult(best.tokens[1:], best.log_prob, truncated)


def greedy_decode(g_k, params: ModelParams, max_len: int = 22,
                  banned: Iterable[int] = DEFAULT_BANNED) -> BeamResult:
    """Argmax decoding, token by token."""
    banned = list(set(banned))
    with no_grad():
        h = Tensor(_decoder_start(g_k, params))
        tokens = [BOS]
        total = 0.0
        for _ in range(max_len):
            h, logits = decoder_step(h, np.array([tokens[-1]]), params)
            logp = _log_softmax(logits.data[0].astype(np.float64))
            logp[banned] = -np.inf
            v = int(np.argmax(logp))
            tokens.append(v)
            total += float(logp[v])
            if v == EOS:
                return BeamResult(tuple(tokens[1:]), total, False)
    return BeamResult(tuple(tokens[1:]), total, True)


def exhaustive_decode(g_k, params: ModelParams, max_len: int,
                      banned: Iterable[int] = DEFAULT_BANNED) -> BeamResult:
    """Best EOS-terminated sequence of length <= ``max_len`` by full enumeration.

    Exponential in ``max_len``; intended as an oracle for small vocabularies.
    """
    banned = set(banned)
    best: tuple[float, tuple[int, ...]] | None = None
    with no_grad():
        h0 = Tensor(_decoder_start(g_k, params))
        frontier = [((BOS,), 0.0, h0)]
        for _ in range(max_len):
            nxt = []
            for tokens, score, h in frontier:
                h_new, logits = decoder_step(h, np.array([tokens[-1]]), params)
                logp = _log_softmax(logits.data[0].astype(np.float64))
                for v in range(logp.size):
                    if v in banned:
                        continue
                    seq, s = tokens + (v,), score + float(logp[v])
                    if v == EOS:
                        if best is None or (-s, seq) < (-best[0], best[1]):
                            best = (s, seq)
                    else:
                        nxt.append((seq, s, h_new))
            frontier = nxt
    if best is None:
        raise ValueError("no EOS-terminated sequence within max_len")
    return BeamResult(best[1][1:], best[0], False)


# ---------------------------------------------------------------------------
# narratives
# ---------------------------------------------------------------------------

@dataclass
class GeneratedNarrative:
    narrative_id: str
    steps: list[list[str]]
    log_probs: list[float]
    infill_index: int | None = None
    truncated: list[bool] | None = None

    def to_json(self) -> str:
        return json.dumps({
            "narrative_id": self.narrative_id,
            "infill_index": self.infill_index,
            "steps": [" ".join(s) for s in self.steps],
            "log_probs": self.log_probs,
        })

    @classmethod
    def from_json(cls, line: str) -> "GeneratedNarrative":
        obj = json.loads(line)
        return cls(obj["narrative_id"], [s.split() for s in obj["steps"]],
                   [float(x) for x in obj.get("log_probs", [])], obj.get("infill_index"))


def generate_narrative(features: np.ndarray, params: ModelParams, vocab: Vocabulary, *,
                       beam: int = 3, max_len: int = 22, infill_index: int | None = None,
                       narrative_id: str = "") -> GeneratedNarrative:
    """Decode every step; the step at ``infill_index`` has its features zeroed first."""
    n = features.shape[0]
    if infill_index is not None and not 0 <= infill_index < n:
        raise IndexError(f"infill index {infill_index} out of range for {n} steps")
    plan = EMPTY_PLAN if infill_index is None else MaskPlan.of(infill_index)
    with no_grad():
        enc = encode_narrative_context(apply_mask(features, plan).astype(params.proj_w.dtype), params)
        globals_ = enc.globals.data
    steps, scores, truncated = [], [], []
    for k in range(n):
        res = beam_search(globals_[k], params, beam=beam, max_len=max_len)
        steps.append(vocab.decode(res.tokens))
        scores.append(res.log_prob)
        truncated.append(res.truncated)
    return GeneratedNarrative(narrative_id, steps, scores, infill_index, truncated)


def infill_sweep(features: np.ndarray, params: ModelParams, vocab: Vocabulary, *, beam: int = 3,
                 max_len: int = 22, narrative_id: str = "") -> dict[int | None, GeneratedNarrative]:
    """Unmasked generation (key ``None``) plus one generation per masked index."""
    out: dict[int | None, GeneratedNarrative] = {}
    for idx in [None, *range(features.shape[0])]:
        out[idx] = generate_narrative(features, params, vocab, beam=beam, max_len=max_len,
                                      infill_index=idx, narrative_id=narrative_id)
    return out


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def generate_corpus(data: Sequence[EncodedNarrative], params: ModelParams, vocab: Vocabulary, *,
                    beam: int = 3, max_len: int = 22, infill_index: int | None = None,
                    sweep: bool = False) -> list[GeneratedNarrative]:
    """Generate for many narratives, in input order, using up to ``NARRATIVE_INFILL_THREADS`` workers."""
    def one(enc: EncodedNarrative) -> list[GeneratedNarrative]:
        if sweep:
            return list(infill_sweep(enc.feature_matrix, params, vocab, beam=beam,
                                     max_len=max_len, narrative_id=enc.id).values())
        return [generate_narrative(enc.feature_matrix, params, vocab, beam=beam, max_len=max_len,
                                   infill_index=infill_index, narrative_id=enc.id)]

    workers = thread_count()
    if workers == 1:
        results = [one(e) for e in data]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, data))
    return [g for group in results for g in group]
