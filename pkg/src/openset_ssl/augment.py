"""Stochastic views of feature vectors: scale jitter, Gaussian noise,
coordinate masking.

View randomness is keyed by (step, sample id, view index) rather than by
batch position, so the views a sample receives never depend on how the
batch around it was assembled.
"""

from dataclasses import dataclass

import numpy as np

from . import rng as rng_mod


@dataclass(frozen=True)
class AugmentConfig:
    noise_sigma: float = 0.5
    jitter_range: tuple = (0.8, 1.2)
    mask_fraction: float = 0.1
    stream: str = "augment"

    def __post_init__(self):
        object.__setattr__(self, "jitter_range", tuple(float(v) for v in self.jitter_range))
        lo, hi = self.jitter_range
        if not (0.0 < lo <= hi) or not np.isfinite(hi):
            raise ValueError(f"jitter_range must satisfy 0 < lo <= hi, got {self.jitter_range}")
        if self.noise_sigma < 0 or not np.isfinite(self.noise_sigma):
            raise ValueError("noise_sigma must be finite and nonnegative")
        if not 0.0 <= self.mask_fraction < 1.0:
            raise ValueError("mask_fraction must lie in [0, 1)")

    def scaled_noise(self, factor):
        """Same family with the noise level multiplied (strong views)."""
        return AugmentConfig(
            noise_sigma=self.noise_sigma * factor,
            jitter_range=self.jitter_range,
            mask_fraction=self.mask_fraction,
            stream=self.stream,
        )


def view_rng(config, seed, step, sample_id, view):
    """The generator that produces one specific view of one sample."""
    return rng_mod.stream(seed, config.stream, step, sample_id, view)


def augment(x, config, gen):
    """One stochastic view of `x` drawn from `gen`.

    Scale jitter, then additive Gaussian noise, then floor(mask_fraction *
    dim) coordinates zeroed, chosen uniformly without replacement.  The
    generator is always consumed in the same pattern, so a null config
    (sigma 0, range [1, 1], mask 0) reproduces `x` bit-exactly.
    """
    x = np.asarray(x, dtype=np.float64)
    lo, hi = config.jitter_range
    factor = gen.uniform(lo, hi)
    noise = gen.standard_normal(x.shape)
    out = x * factor + config.noise_sigma * noise
    n_mask = int(config.mask_fraction * x.size)
    idx = gen.choice(x.size, size=n_mask, replace=False)
    out.ravel()[idx] = 0.0
    return out


def augment_batch(batch, ids, config, seed, step, view):
    """Row-wise views of a batch, each keyed by its own sample id."""
    batch = np.asarray(batch, dtype=np.float64)
    out = np.empty_like(batch)
    for row, sid in enumerate(ids):
        gen = view_rng(config, seed, step, int(sid), view)
        out[row] = augment(batch[row], config, gen)
    return out
