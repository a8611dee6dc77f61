"""Per-layer gradient balancing for multi-loss training.

Each balanced loss's gradient is rescaled, layer by layer, so its mean
absolute magnitude matches the reference (reconstruction) loss's on that
layer, then everything is combined with fixed multiplicative weights.  The
per-layer scale is a positive scalar, so element signs are preserved — the
point of this scheme over mean/std matching.  "Layer" granularity is one
parameter tensor; a parameter absent from a bundle contributes zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LOSS_IDS = ("auto_r", "adv_g", "rec_g", "adv_r", "rec_r")

EPS_MAGNITUDE = 1e-12


@dataclass(frozen=True)
class BalanceWeights:
    """Fixed post-normalization weights for the balanced sum."""

    auto_r: float = 1.0
    adv_g: float = 0.5
    rec_g: float = 0.6
    adv_r: float = 0.4
    rec_r: float = 0.75

    def __post_init__(self):
        for name in LOSS_IDS:
            if getattr(self, name) < 0:
                raise ValueError(f"weight {name} must be non-negative")

    def get(self, loss_id: str) -> float:
        return getattr(self, loss_id)


@dataclass
class GradientBundle:
    """One loss's per-parameter gradients plus per-layer mean |grad|."""

    loss_id: str
    grads: dict[str, np.ndarray]
    layer_means: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.layer_means:
            self.layer_means = {k: float(np.abs(g).mean()) for k, g in self.grads.items()}


def record(loss_id: str, param_grads: dict[str, np.ndarray]) -> GradientBundle:
    """Snapshot a loss's gradients (copies, so later zeroing is safe)."""
    if loss_id not in LOSS_IDS:
        raise ValueError(f"unknown loss id {loss_id!r}; expected one of {LOSS_IDS}")
    grads = {}
    for pid, g in param_grads.items():
        g = np.asarray(g)
        if not np.all(np.isfinite(g)):
            raise ValueError(f"non-finite gradient for {pid!r} in loss {loss_id!r}")
        grads[pid] = g.copy()
    return GradientBundle(loss_id=loss_id, grads=grads)


def normalize_to_reference(
    bundle: GradientBundle, reference: GradientBundle, eps: float = EPS_MAGNITUDE
) -> dict[str, np.ndarray]:
    """Scale each layer of ``bundle`` to the reference's mean |grad|.

    Layers with vanishing own magnitude (<= eps) or absent from the reference
    are dropped rather than amplified.
    """
    out = {}
    for pid, g in bundle.grads.items():
        m_x = bundle.layer_means[pid]
        if m_x <= eps:
            continue
        m_ref = reference.layer_means.get(pid, 0.0)
        if m_ref == 0.0:
            continue
        out[pid] = g * (m_ref / m_x)
    return out


def combine(
    bundles: dict[str, GradientBundle],
    weights: BalanceWeights = BalanceWeights(),
    reference: str = "auto_r",
    eps: float = EPS_MAGNITUDE,
) -> dict[str, np.ndarray]:
    """Normalize every non-reference bundle to the reference's per-layer mean
    magnitude and return the weighted sum (reference included, unscaled)."""
    if reference not in bundles:
        raise ValueError(f"reference bundle {reference!r} missing")
    ref = bundles[reference]
    out: dict[str, np.ndarray] = {pid: weights.get(reference) * g for pid, g in ref.grads.items()}
    for loss_id, bundle in bundles.items():
        if loss_id == reference:
            continue
        w = weights.get(loss_id)
        for pid, g in normalize_to_reference(bundle, ref, eps).items():
            if pid in out:
                out[pid] = out[pid] + w * g
            else:
                out[pid] = w * g
    for pid, g in out.items():
        if not np.all(np.isfinite(g)):
            raise ArithmeticError(f"non-finite combined gradient for {pid!r}")
    return out
