"""Seeded text-conditioned benchmark generator plus a Bayes-MAE oracle.

Construction: every channel repeats a period of length l + h. The first l
steps are a shared ramp (0, 1/l, ..., (l-1)/l) identical across channels,
so the input window alone carries no regime information. The next h steps
continue from the ramp top with per-regime slope beta_k / h. Channel c gets
regime k = c mod K and the text "regime <k> channel <c>", which makes text
strictly necessary to beat the regime-marginal predictor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import RawDataset
from .errors import ShapeError
from .text import TokenEmbeddingSet, hash_embed_text

ORACLE_DRAWS = 100_000


@dataclass
class SyntheticSpec:
    channels: int = 40
    regimes: int = 4
    l: int = 7
    h: int = 7
    slopes: tuple[float, ...] = (-1.0, -0.33, 0.33, 1.0)
    noise_sigma: float = 0.02
    periods: int = 40
    seed: int = 7
    d_tx: int = 32

    def __post_init__(self):
        if self.regimes > self.channels:
            raise ShapeError(f"regimes {self.regimes} must not exceed channels {self.channels}")
        if len(self.slopes) != self.regimes:
            raise ShapeError(f"need {self.regimes} slopes, got {len(self.slopes)}")
        if len(set(self.slopes)) != len(self.slopes):
            raise ShapeError("slopes must be pairwise distinct")
        if self.noise_sigma < 0:
            raise ShapeError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        for name in ("channels", "l", "h", "periods", "d_tx"):
            if getattr(self, name) < 1:
                raise ShapeError(f"{name} must be >= 1, got {getattr(self, name)}")

    @property
    def period_len(self) -> int:
        return self.l + self.h

    def channel_text(self, c: int) -> str:
        return f"regime {c % self.regimes} channel {c}"

    def period_pattern(self, regime: int) -> np.ndarray:
        """Noiseless period: the shared ramp plus the regime continuation."""
        ramp = np.arange(self.l) / self.l
        top = (self.l - 1) / self.l
        steps = np.arange(1, self.h + 1)
        cont = top + steps * self.slopes[regime] / self.h
        return np.concatenate([ramp, cont])


def generate(spec: SyntheticSpec) -> tuple[RawDataset, dict[str, TokenEmbeddingSet]]:
    """Build the dataset and its hash-embedded texts, bit-deterministic per seed.

    Windows cut from this data should be aligned to period starts
    (window_stride = l + h) so each input window is exactly one shared ramp.
    """
    rng = np.random.default_rng(spec.seed)
    t_total = spec.periods * spec.period_len
    width = max(3, len(str(spec.channels - 1)))
    values = np.empty((t_total, spec.channels))
    channel_ids = []
    texts: dict[str, str] = {}
    embeddings: dict[str, TokenEmbeddingSet] = {}
    for c in range(spec.channels):
        cid = f"ch{c:0{width}d}"
        channel_ids.append(cid)
        pattern = np.tile(spec.period_pattern(c % spec.regimes), spec.periods)
        noise = rng.normal(0.0, spec.noise_sigma, t_total) if spec.noise_sigma > 0 \
            else np.zeros(t_total)
        values[:, c] = pattern + noise
        text = spec.channel_text(c)
        texts[cid] = text
        embeddings[cid] = hash_embed_text(text, spec.d_tx, spec.seed, channel_id=cid)
    dataset = RawDataset(channel_ids, [float(t) for t in range(t_total)], values, texts)
    dataset.validate()
    return dataset, embeddings


def oracle_mae(spec: SyntheticSpec, knows_regime: bool) -> float:
    """Monte Carlo Bayes-optimal test MAE over the generative model.

    The regime-aware predictor emits the exact noiseless continuation of its
    regime; the regime-marginal predictor emits the cross-regime mean
    continuation (optimal for symmetric slope sets, where the mean sits
    inside the median interval of the slope mixture).
    """
    rng = np.random.default_rng(spec.seed)
    slopes = np.asarray(spec.slopes)
    mean_slope = slopes.mean()
    ks = rng.integers(0, spec.regimes, ORACLE_DRAWS)
    ts = rng.integers(1, spec.h + 1, ORACLE_DRAWS)
    noise = rng.normal(0.0, spec.noise_sigma, ORACLE_DRAWS) if spec.noise_sigma > 0 \
        else np.zeros(ORACLE_DRAWS)
    pred_slope = slopes[ks] if knows_regime else mean_slope
    err = ts * (slopes[ks] - pred_slope) / spec.h + noise
    return float(np.mean(np.abs(err)))


def oracle_mae_closed_form(spec: SyntheticSpec, knows_regime: bool) -> float:
    """Noise-free closed form used to validate the Monte Carlo estimate:
    regime-marginal MAE = mean_k |beta_k - mean(beta)| * (h + 1) / (2 h)."""
    if spec.noise_sigma != 0:
        raise ShapeError("closed form only covers the noise-free case")
    if knows_regime:
        return 0.0
    slopes = np.asarray(spec.slopes)
    dev = np.abs(slopes - slopes.mean()).mean()
    return float(dev * (spec.h + 1) / (2 * spec.h))
