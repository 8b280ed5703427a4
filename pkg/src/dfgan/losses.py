"""Adversarial training objectives.

Every function returns a value to MINIMIZE (the discriminator's printed
max-objective is negated). The paired discriminator's attribute terms are
confidence-weighted: the fake image's attribute loss is scaled by the
probability the discriminator assigned to the fake being real, and that
scale enters as a constant (no gradient flows through it).

The baseline objectives keep the older form: per-attribute binary
cross-entropies without confidence weighting, and a generator loss with
no attribute term at all.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

PROB_EPS = 1e-7


@dataclass
class LossConfig:
    attr_weight: float = 0.01  # attribute-loss factor
    pixel_weight: float = 10.0  # pixel-loss factor
    baseline_attr_weight: float = 0.01
    baseline_pixel_weight: float = 10.0

    def __post_init__(self):
        for name in ("attr_weight", "pixel_weight", "baseline_attr_weight", "baseline_pixel_weight"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


def _t(x) -> torch.Tensor:
    return x if torch.is_tensor(x) else torch.as_tensor(x, dtype=torch.float64)


def _check_prob(name: str, p: torch.Tensor) -> None:
    d = p.detach()
    if torch.any(d <= 0) or torch.any(d >= 1):
        raise ValueError(f"{name} must lie strictly inside (0, 1)")


def _bce_elementwise(targets: torch.Tensor, values: torch.Tensor, from_logits: bool) -> torch.Tensor:
    if targets.shape != values.shape:
        raise ValueError(f"shape mismatch: targets {tuple(targets.shape)} vs values {tuple(values.shape)}")
    if from_logits:
        return F.binary_cross_entropy_with_logits(values, targets.to(values.dtype), reduction="none")
    p = values.clamp(PROB_EPS, 1.0 - PROB_EPS)
    return -(targets * torch.log(p) + (1.0 - targets) * torch.log1p(-p))


def bce(targets, values, from_logits: bool = False) -> torch.Tensor:
    """Mean binary cross-entropy over all entries.

    ``values`` are probabilities clamped to [1e-7, 1 - 1e-7]; pass
    ``from_logits=True`` to hand in raw logits instead (the stable path
    the training loop uses).
    """
    return _bce_elementwise(_t(targets), _t(values), from_logits).mean()


def _bce_per_sample(targets, values, from_logits: bool) -> torch.Tensor:
    """Mean over attribute entries only, keeping the batch dimension."""
    return _bce_elementwise(_t(targets), _t(values), from_logits).mean(dim=-1)


def mae_pixel(a, b) -> torch.Tensor:
    """Mean absolute pixel difference between two images (or batches)."""
    ta, tb = _t(a), _t(b)
    if ta.shape != tb.shape:
        raise ValueError(f"shape mismatch: {tuple(ta.shape)} vs {tuple(tb.shape)}")
    return (ta - tb).abs().mean()


def d_loss_dfgan(d_real, d_fake, attr_real, attr_fake, t_attr,
                 attr_weight: float, from_logits: bool = False,
                 confidence: str = "dynamic") -> torch.Tensor:
    """Paired-discriminator loss: adversarial terms plus confidence-weighted
    attribute cross-entropies.

    ``confidence="dynamic"`` scales the fake attribute term by d_fake
    (detached); ``"one"`` fixes the scale to 1 (the older objective).
    """
    d_real, d_fake = _t(d_real), _t(d_fake)
    _check_prob("d_real", d_real)
    _check_prob("d_fake", d_fake)
    adv = -(torch.log(d_real).mean() + torch.log1p(-d_fake).mean())
    bce_real = _bce_per_sample(t_attr, attr_real, from_logits)
    bce_fake = _bce_per_sample(t_attr, attr_fake, from_logits)
    if confidence == "dynamic":
        conf = d_fake.detach()
    elif confidence == "one":
        conf = torch.ones_like(d_fake.detach())
    else:
        raise ValueError(f"unknown confidence mode {confidence!r}")
    return adv + attr_weight * (bce_real.mean() + (conf * bce_fake).mean())


def g_loss_dfgan(d_fake, gen_image, real_image, attr_fake, t_attr,
                 pixel_weight: float, attr_weight: float,
                 from_logits: bool = False, confidence: str = "dynamic") -> torch.Tensor:
    """Generator loss: saturating adversarial term, pixel MAE, and the
    confidence-weighted fake attribute term.

    The confidence scale is detached; d_fake itself still carries the
    generator's adversarial gradient through log(1 - d_fake).
    """
    d_fake = _t(d_fake)
    _check_prob("d_fake", d_fake)
    adv = torch.log1p(-d_fake).mean()
    pix = pixel_weight * mae_pixel(gen_image, real_image)
    bce_fake = _bce_per_sample(t_attr, attr_fake, from_logits)
    if confidence == "dynamic":
        conf = d_fake.detach()
    elif confidence == "one":
        conf = torch.ones_like(d_fake.detach())
    else:
        raise ValueError(f"unknown confidence mode {confidence!r}")
    return adv + pix + attr_weight * (conf * bce_fake).mean()


def d_loss_mcgan(d_real, d_fake, attr_real_parts, attr_fake_parts, target_parts,
                 attr_weight: float, from_logits: bool = False) -> torch.Tensor:
    """Baseline discriminator loss: per-attribute cross-entropies for both
    the real and the generated image, without confidence weighting."""
    d_real, d_fake = _t(d_real), _t(d_fake)
    _check_prob("d_real", d_real)
    _check_prob("d_fake", d_fake)
    if not (len(attr_real_parts) == len(attr_fake_parts) == len(target_parts)):
        raise ValueError("attribute part lists must have equal length")
    adv = -(torch.log(d_real).mean() + torch.log1p(-d_fake).mean())
    attr = _t(0.0)
    for t, pr, pf in zip(target_parts, attr_real_parts, attr_fake_parts):
        attr = attr + _bce_per_sample(t, pr, from_logits).mean()
        attr = attr + _bce_per_sample(t, pf, from_logits).mean()
    return adv + attr_weight * attr


def g_loss_mcgan(d_fake, gen_image, real_image, pixel_weight: float) -> torch.Tensor:
    """Baseline generator loss: adversarial term plus pixel MAE only."""
    d_fake = _t(d_fake)
    _check_prob("d_fake", d_fake)
    return torch.log1p(-d_fake).mean() + pixel_weight * mae_pixel(gen_image, real_image)
