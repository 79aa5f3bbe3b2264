"""Template narratives with controllable word overlap between neighboring steps.

Adjacent steps ``j`` and ``j + 1`` share a set of link words; every other
word of a step is drawn fresh and occurs in no other step. Link sizes are
chosen so that, averaged over a narrative's steps, a fraction ``overlap`` of
each step's word types also occurs in a neighbor; ``overlap=0.6`` puts the
unique-word fraction near 0.4. Words in a step follow a fixed template order
(sorted by word rank). A step's feature vector is the mean of fixed per-word
embeddings plus Gaussian noise, so features predict text.
"""

from __future__ import annotations

import itertools

import numpy as np

from .corpus import FeatureSource, Narrative, Step

_ONSETS = "b d f g k l m n p r s t v z".split()
_VOWELS = "a e i o u".split()


def word_list(size: int) -> list[str]:
    """``size`` distinct pronounceable pseudo-words, deterministic."""
    syllables = [c + v for c, v in itertools.product(_ONSETS, _VOWELS)]
    words: list[str] = []
    for length in itertools.count(2):
        for combo in itertools.product(syllables, repeat=length):
            words.append("".join(combo))
            if len(words) == size:
                return words
    return words  # pragma: no cover


def synthesize(n_narratives: int, n_steps: int, vocab_size: int, d_img: int, seed: int = 0, *,
               overlap: float = 0.6, words_per_step: tuple[int, int] = (5, 9),
               noise: float = 0.1) -> list[Narrative]:
    if min(n_narratives, n_steps, vocab_size, d_img) < 1:
        raise ValueError("all counts must be at least 1")
    if not 0.0 <= overlap <= 1.0:
        raise ValueError("overlap must lie in [0, 1]")
    lo, hi = words_per_step
    if not 1 <= lo <= hi:
        raise ValueError("words_per_step must be an increasing pair of positive ints")
    rng = np.random.default_rng(seed)
    words = word_list(vocab_size)
    vectors = rng.normal(size=(vocab_size, d_img))
    corpus = []
    for idx in range(n_narratives):
        k = int(rng.integers(lo, hi + 1))
        links = _link_sizes(n_steps, k, overlap, rng)
        own_sizes = [k - (links[j - 1] if j > 0 else 0) - (links[j] if j < n_steps - 1 else 0)
                     for j in range(n_steps)]
        need = int(sum(links)) + sum(own_sizes)
        # fall back to reuse across steps when the vocabulary is too small
        picks = list(rng.choice(vocab_size, size=need, replace=need > vocab_size))
        link_words = [[picks.pop() for _ in range(b)] for b in links]
        steps = []
        for j in range(n_steps):
            ids = [picks.pop() for _ in range(own_sizes[j])]
            if j > 0:
                ids += link_words[j - 1]
            if j < n_steps - 1:
                ids += link_words[j]
            ids = np.sort(np.array(ids, dtype=np.int64))
            text = " ".join(words[i] for i in ids)
            feat = vectors[ids].mean(axis=0) + noise * rng.normal(size=d_img)
            steps.append(Step.from_text(text, feat, FeatureSource.SYNTHETIC))
        corpus.append(Narrative(f"syn{idx:05d}", "synthetic", tuple(steps)))
    return corpus


def _link_sizes(n_steps: int, k: int, overlap: float, rng: np.random.Generator) -> list[int]:
    """Sizes of the n-1 link sets; interior steps get two links, end steps one.

    Mean shared words per step is ``2 * b * (n - 1) / n`` for link size ``b``,
    so ``b = overlap * k * n / (2 * (n - 1))`` hits the target on average.
    Fractional sizes are rounded stochastically.
    """
    if n_steps < 2:
        return []
    target = overlap * k * n_steps / (2 * (n_steps - 1))
    base = np.floor(target)
    sizes = base + (rng.random(n_steps - 1) < target - base)
    cap = k // 2 if n_steps > 2 else k
    return [int(min(b, cap)) for b in sizes]
