"""SimPO + cross-entropy objective over length-normalized sequence log-likelihoods.

The objective is written against any scorer exposing ``token_logprobs``.
:class:`ToyScorer` is a bigram model small enough to train on a laptop and to
check the analytic gradient against finite differences.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Protocol, Sequence

import numpy as np

from .errors import DivergenceError, VocabularyError


@dataclass(frozen=True)
class SimpoConfig:
    beta: float = 0.1
    gamma: float = 0.5
    lam: float = 0.1

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError(f"beta must be > 0, got {self.beta}")
        if self.gamma < 0 or self.lam < 0:
            raise ValueError("gamma and lambda must be >= 0")


class SequenceScorer(Protocol):
    def token_logprobs(self, tokens: Sequence[int]) -> np.ndarray: ...


def softplus(x: float) -> float:
    """log(1 + e^x) without overflow."""
    if x > 0:
        return x + math.log1p(math.exp(-x))
    return math.log1p(math.exp(x))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _softplus_vec(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, x + np.log1p(np.exp(-np.abs(x))), np.log1p(np.exp(np.minimum(x, 0.0))))


def reward(token_logprobs: Sequence[float]) -> float:
    """Average per-token log-likelihood."""
    lp = np.asarray(token_logprobs, dtype=float)
    if lp.size == 0:
        raise ValueError("reward of an empty sequence is undefined")
    return float(lp.mean())


def simpo_loss(r_pos: float, r_neg: float, c: SimpoConfig = SimpoConfig()) -> float:
    return softplus(-c.beta * (r_pos - r_neg - c.gamma))


@dataclass(frozen=True)
class SequenceScore:
    token_logprobs: tuple[float, ...]

    def __post_init__(self):
        if not self.token_logprobs:
            raise ValueError("empty sequence")

    @property
    def length(self) -> int:
        return len(self.token_logprobs)

    @property
    def reward(self) -> float:
        return reward(self.token_logprobs)


def _log_softmax_rows(theta: np.ndarray) -> np.ndarray:
    m = theta.max(axis=1, keepdims=True)
    z = theta - m
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


class ToyScorer:
    """Bigram language model: log P(y_t | y_{t-1}) = log_softmax(theta[y_{t-1}])[y_t].

    Token 0 is the start symbol conditioning the first position.
    """

    def __init__(self, theta: np.ndarray, start: int = 0):
        theta = np.array(theta, dtype=float)
        if theta.ndim != 2 or theta.shape[0] != theta.shape[1]:
            raise ValueError("theta must be a square V x V matrix")
        self.theta = theta
        self.start = start

    @classmethod
    def random(cls, vocab_size: int, rng: np.random.Generator, scale: float = 1.0) -> "ToyScorer":
        return cls(rng.normal(0.0, scale, size=(vocab_size, vocab_size)))

    @property
    def vocab_size(self) -> int:
        return self.theta.shape[0]

    def check(self, tokens: Sequence[int]):
        for t in tokens:
            if not (isinstance(t, (int, np.integer)) and 0 <= t < self.vocab_size):
                raise VocabularyError(f"token {t!r} outside vocabulary of size {self.vocab_size}")

    def token_logprobs(self, tokens: Sequence[int]) -> np.ndarray:
        self.check(tokens)
        tokens = np.asarray(tokens, dtype=int)
        prev = np.concatenate(([self.start], tokens[:-1]))
        return _log_softmax_rows(self.theta)[prev, tokens]

    def score(self, tokens: Sequence[int]) -> SequenceScore:
        return SequenceScore(tuple(float(x) for x in self.token_logprobs(tokens)))

    def copy(self) -> "ToyScorer":
        return ToyScorer(self.theta.copy(), self.start)


class CharTokenizer:
    """Per-character tokenizer over a fixed alphabet; id 0 is reserved for the start symbol."""

    DEFAULT_ALPHABET = (" \n./-:'" "0123456789" "ABCDEFGHIJKLMNOPQRSTUVWXYZ" "abcdefghijklmnopqrstuvwxyz")

    def __init__(self, alphabet: str = DEFAULT_ALPHABET):
        if len(set(alphabet)) != len(alphabet):
            raise ValueError("alphabet has duplicate characters")
        self.alphabet = alphabet
        self.index = {ch: i + 1 for i, ch in enumerate(alphabet)}

    @property
    def vocab_size(self) -> int:
        return len(self.alphabet) + 1

    def encode(self, text: str) -> list[int]:
        out = []
        for ch in text:
            if ch not in self.index:
                raise VocabularyError(f"character {ch!r} outside tokenizer alphabet")
            out.append(self.index[ch])
        if not out:
            raise ValueError("cannot encode an empty response")
        return out

    def decode(self, ids: Iterable[int]) -> str:
        return "".join(self.alphabet[i - 1] for i in ids)


# --------------------------------------------------------------------------
# batched objective


@dataclass
class PairBatch:
    """Bigram transition counts for each side of each pair.

    The counts do not depend on theta, so loss and gradient reduce to
    contractions against them.
    """

    pos_counts: np.ndarray  # (B, V, V)
    neg_counts: np.ndarray
    pos_len: np.ndarray  # (B,)
    neg_len: np.ndarray

    @property
    def size(self) -> int:
        return self.pos_len.size


def _counts(seq: Sequence[int], vocab: int, start: int) -> np.ndarray:
    c = np.zeros((vocab, vocab))
    prev = start
    for t in seq:
        c[prev, t] += 1.0
        prev = t
    return c


def encode_pairs(pairs: Sequence[tuple[Sequence[int], Sequence[int]]], scorer: ToyScorer) -> PairBatch:
    if not pairs:
        raise ValueError("empty batch")
    V = scorer.vocab_size
    pos, neg = [], []
    for p, n in pairs:
        if len(p) == 0 or len(n) == 0:
            raise ValueError("empty sequence in batch")
        scorer.check(p)
        scorer.check(n)
        pos.append(_counts(p, V, scorer.start))
        neg.append(_counts(n, V, scorer.start))
    return PairBatch(np.stack(pos), np.stack(neg),
                     np.array([len(p) for p, _ in pairs], float), np.array([len(n) for _, n in pairs], float))


@dataclass
class LossResult:
    loss: float
    simpo: float
    ce: float
    grad: np.ndarray
    r_pos: np.ndarray
    r_neg: np.ndarray

    @property
    def reward_gap(self) -> float:
        return float(np.mean(self.r_pos - self.r_neg))


def _rewards(counts: np.ndarray, lengths: np.ndarray, logp: np.ndarray) -> np.ndarray:
    return np.einsum("nij,ij->n", counts, logp) / lengths


def _reward_grad(weights: np.ndarray, counts: np.ndarray, lengths: np.ndarray, probs: np.ndarray) -> np.ndarray:
    """sum_n weights[n] * d r_n / d theta."""
    w = weights / lengths
    row_totals = np.einsum("n,nij->i", w, counts)
    return np.einsum("n,nij->ij", w, counts) - row_totals[:, None] * probs


def combined_loss(batch, scorer: ToyScorer, c: SimpoConfig = SimpoConfig()) -> LossResult:
    """Mean SimPO loss over the batch plus lambda times token-level CE on the chosen side.

    ``batch`` is a :class:`PairBatch` or a sequence of (chosen, rejected)
    token-id sequences. CE averages over all chosen tokens in the batch.
    Returns the loss, its parts and the analytic gradient w.r.t. theta.
    """
    if not isinstance(batch, PairBatch):
        batch = encode_pairs(batch, scorer)
    logp = _log_softmax_rows(scorer.theta)
    probs = np.exp(logp)
    r_pos = _rewards(batch.pos_counts, batch.pos_len, logp)
    r_neg = _rewards(batch.neg_counts, batch.neg_len, logp)
    B = batch.size

    z = c.beta * (r_pos - r_neg - c.gamma)
    simpo = float(np.mean(_softplus_vec(-z)))
    s = _sigmoid(-z)  # -dL/dz
    grad = _reward_grad(-c.beta * s / B, batch.pos_counts, batch.pos_len, probs)
    grad += _reward_grad(c.beta * s / B, batch.neg_counts, batch.neg_len, probs)

    n_tok = float(batch.pos_len.sum())
    # token-level CE: -(sum of chosen-token logprobs) / total chosen tokens
    ce = float(-np.dot(r_pos, batch.pos_len) / n_tok)
    if c.lam:
        grad += c.lam * _reward_grad(-batch.pos_len / n_tok, batch.pos_counts, batch.pos_len, probs)
    return LossResult(simpo + c.lam * ce, simpo, ce, grad, r_pos, r_neg)


def numeric_gradient(batch, scorer: ToyScorer, c: SimpoConfig = SimpoConfig(), h: float = 1e-5) -> np.ndarray:
    """Central finite differences of :func:`combined_loss` w.r.t. every theta entry."""
    if not isinstance(batch, PairBatch):
        batch = encode_pairs(batch, scorer)
    probe = scorer.copy()
    g = np.zeros_like(probe.theta)
    for idx in np.ndindex(*probe.theta.shape):
        orig = probe.theta[idx]
        probe.theta[idx] = orig + h
        up = combined_loss(batch, probe, c).loss
        probe.theta[idx] = orig - h
        down = combined_loss(batch, probe, c).loss
        probe.theta[idx] = orig
        g[idx] = (up - down) / (2 * h)
    return g


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """||a - n|| / max(||a|| + ||n||, 1e-12) over the whole gradient."""
    num = float(np.linalg.norm(analytic - numeric))
    den = float(np.linalg.norm(analytic) + np.linalg.norm(numeric))
    return num / max(den, 1e-12)


def random_pairs(rng: np.random.Generator, vocab: int, n_pairs: int, min_len: int = 1, max_len: int = 32):
    def seq():
        return [int(x) for x in rng.integers(0, vocab, size=int(rng.integers(min_len, max_len + 1)))]

    return [(seq(), seq()) for _ in range(n_pairs)]


def corrupted_pairs(rng: np.random.Generator, vocab: int = 8, n_pairs: int = 64, min_len: int = 8,
                    max_len: int = 16, n_corrupt: int = 2):
    """Synthetic preference pairs shaped like perturbed score outputs.

    The chosen side draws from the lower part of the vocabulary; the rejected
    side is the same sequence with ``n_corrupt`` positions replaced by tokens
    from the upper part, which the chosen side never uses.
    """
    split = max(2, (2 * vocab) // 3)
    good = np.arange(1, split)
    bad = np.arange(split, vocab)
    if bad.size == 0:
        raise ValueError("vocabulary too small for corrupted pairs")
    pairs = []
    for _ in range(n_pairs):
        n = int(rng.integers(max(min_len, n_corrupt), max_len + 1))
        chosen = [int(x) for x in rng.choice(good, n)]
        rejected = list(chosen)
        for i in rng.choice(n, n_corrupt, replace=False):
            rejected[int(i)] = int(rng.choice(bad))
        pairs.append((chosen, rejected))
    return pairs


@dataclass
class GradCheckResult:
    max_rel_err: float
    errors: list[float]
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance


def grad_check(seed: int = 0, n_configs: int = 100, max_vocab: int = 8, max_len: int = 32,
               batch_size: int = 8, h: float = 1e-5, tolerance: float = 1e-5) -> GradCheckResult:
    """Compare analytic and finite-difference gradients over random toy configurations."""
    rng = np.random.default_rng(seed)
    errors = []
    for _ in range(n_configs):
        V = int(rng.integers(2, max_vocab + 1))
        scorer = ToyScorer.random(V, rng)
        cfg = SimpoConfig(beta=float(rng.uniform(0.05, 3.0)), gamma=float(rng.uniform(0.0, 2.0)),
                          lam=float(rng.uniform(0.0, 2.0)))
        batch = encode_pairs(random_pairs(rng, V, batch_size, 1, max_len), scorer)
        errors.append(relative_error(combined_loss(batch, scorer, cfg).grad,
                                     numeric_gradient(batch, scorer, cfg, h)))
    return GradCheckResult(max(errors), errors, tolerance)


# --------------------------------------------------------------------------
# training harness


@dataclass
class TraceRow:
    step: int
    simpo: float
    ce: float
    total: float
    reward_gap: float


def train_toy(pairs, scorer: ToyScorer, c: SimpoConfig = SimpoConfig(), steps: int = 500,
              learning_rate: float = 1.0) -> tuple[ToyScorer, list[TraceRow]]:
    """Full-batch gradient descent on :func:`combined_loss`.

    Returns a trained copy of ``scorer`` and one trace row per step (plus the
    final state). Raises DivergenceError on a non-finite loss.
    """
    batch = pairs if isinstance(pairs, PairBatch) else encode_pairs(pairs, scorer)
    model = scorer.copy()
    trace = []
    for step in range(steps + 1):
        res = combined_loss(batch, model, c)
        if not (math.isfinite(res.loss) and np.all(np.isfinite(res.grad))):
            raise DivergenceError(step, res.loss)
        trace.append(TraceRow(step, res.simpo, res.ce, res.loss, res.reward_gap))
        if step < steps:
            model.theta -= learning_rate * res.grad
    return model, trace


def trace_csv(trace: Sequence[TraceRow], header: Optional[str] = None) -> str:
    buf = io.StringIO()
    if header:
        buf.write(f"# {header}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "simpo", "ce", "total", "reward_gap"])
    for r in trace:
        w.writerow([r.step, repr(r.simpo), repr(r.ce), repr(r.total), repr(r.reward_gap)])
    return buf.getvalue()
