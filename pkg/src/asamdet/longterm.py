"""Long-term query bank and the cross-attention classifier that reads it.

The bank stores, per clip, the concatenated [spatial, temporal] last-stage
queries of the k highest human scores of a trained short-term model. A clip
t sees the window of clips t - w/2 .. t + w/2 - 1; clips outside the video
become zero rows that are masked out of attention.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .layers import FFN, LayerNorm, Module, MultiHeadAttention
from .tensor import Parameter, Tensor, no_grad


@dataclass
class QueryBank:
    k: int
    d: int
    videos: dict[int, list[np.ndarray]] = field(default_factory=dict)

    def clips(self, video: int) -> list[np.ndarray]:
        return self.videos[video]

    def add_video(self, video: int, rows: list[np.ndarray]) -> None:
        for r in rows:
            if r.shape != (self.k, self.d):
                raise ConfigError(f"bank entry shape {r.shape}, expected {(self.k, self.d)}")
        self.videos[video] = rows


def top_k_rows(q_s: np.ndarray, q_t: np.ndarray, human_prob: np.ndarray, k: int) -> np.ndarray:
    """concat(Q_s, Q_t) rows of the k highest human probabilities, highest first (ties: lower index)."""
    n = q_s.shape[0]
    if k > n:
        raise ConfigError(f"bank k={k} exceeds number of queries {n}")
    order = np.argsort(-human_prob, kind="stable")[:k]
    return np.concatenate([q_s[order], q_t[order]], axis=1)


def build_bank(model, clips, k: int) -> list[np.ndarray]:
    """One [k, 2D] entry per clip of a video, from the model's last stage."""
    rows = []
    with no_grad():
        for clip in clips:
            last = model.forward(clip.video).stages[-1]
            rows.append(top_k_rows(last.queries.spatial.data, last.queries.temporal.data, last.human_prob(), k))
    return rows


def build_bank_for_videos(model, videos, k: int) -> QueryBank:
    bank = QueryBank(k=k, d=2 * model.cfg.d)
    for v, clips in enumerate(videos):
        bank.add_video(v, build_bank(model, clips, k))
    return bank


def window_stack(rows: list[np.ndarray], t: int, w: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack clips t - w/2 .. t + w/2 - 1 into [w*k, d].

    Returns (stacked rows, validity mask [w*k], slot index [w*k]).
    """
    if w < 2 or w % 2:
        raise ConfigError(f"window must be even and >= 2, got {w}")
    k, d = rows[0].shape
    out = np.zeros((w * k, d))
    mask = np.zeros(w * k, dtype=bool)
    for slot, c in enumerate(range(t - w // 2, t + w // 2)):
        if 0 <= c < len(rows):
            out[slot * k : (slot + 1) * k] = rows[c]
            mask[slot * k : (slot + 1) * k] = True
    return out, mask, np.repeat(np.arange(w), k)


class LongTermClassifier(Module):
    """Stacked cross-attention (residual + LayerNorm per layer) from current queries to the bank window,
    then an FFN over [S_t', S_t] to C action logits.

    Bank rows receive a learned embedding of their window slot so that earlier
    and later clips are distinguishable.
    """

    def __init__(self, d: int, window: int, n_layers: int, heads: int, num_classes: int, rng: np.random.Generator):
        self.window = window
        self.slot_embed = Parameter(rng.normal(0.0, 1.0, size=(window, d)))
        self.attn = [MultiHeadAttention(d, d, heads, rng) for _ in range(n_layers)]
        self.norms = [LayerNorm(d) for _ in range(n_layers)]
        self.head = FFN([2 * d, d // 2, num_classes], rng)

    def attend(self, s: Tensor, bank_rows: np.ndarray, mask: np.ndarray, slots: np.ndarray) -> Tensor:
        kv = Tensor(bank_rows) + self.slot_embed[slots]
        x = s
        for attn, norm in zip(self.attn, self.norms):
            x = norm(x + attn(x, kv, mask))
        return x

    def __call__(self, s: Tensor, bank_rows: np.ndarray, mask: np.ndarray, slots: np.ndarray) -> Tensor:
        s_long = self.attend(s, bank_rows, mask, slots)
        return self.head(T.concat([s_long, s], axis=1))


def long_classify(
    clf: LongTermClassifier, s: Tensor, bank_rows: np.ndarray, mask: np.ndarray, slots: np.ndarray, fallback=None
) -> tuple[Tensor, bool]:
    """Action logits [N, C] and whether the short-term fallback was used (fully masked window)."""
    if not mask.any():
        if fallback is None:
            raise ConfigError("window has no valid clips and no short-term fallback was given")
        return fallback(s), True
    return clf(s, bank_rows, mask, slots), False
