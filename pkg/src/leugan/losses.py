"""Training objectives: structural similarity, identity, adversarial, cycle
consistency, the auxiliary classifier term, and their weighted total.

``structural_loss`` returns a similarity in [-1, 1] (1 = identical structure);
training minimizes ``1 - similarity``. The adversarial pair returns
minimization-ready scalars for the discriminator (negated classic value) and
the generator (non-saturating form). Probabilities are clamped away from 0/1
before any log.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import tensor as T
from .errors import NumericError, ShapeError

PROB_EPS = 1e-7
_VAR_EPS = 1e-24  # keeps sqrt differentiable on (near-)constant images

STABILIZER = 1.0  # structural-loss constant


@dataclass
class LossWeights:
    structural: float = 1.0
    identity: float = 10.0
    adversarial: float = 10.0
    cycle: float = 10.0
    auxiliary: float = 100.0

    def as_tuple(self):
        return (self.structural, self.identity, self.adversarial, self.cycle,
                self.auxiliary)


@dataclass
class LossBundle:
    """The five weighted components and their total for one step."""

    l_str: T.Tensor
    l_idt: T.Tensor
    l_adv: T.Tensor
    l_cyc: T.Tensor
    l_aux: T.Tensor
    l_all: T.Tensor

    def floats(self):
        return tuple(float(getattr(self, f.name).data.reshape(-1)[0]) for f in fields(self))


def _stats_pair(x: T.Tensor, y: T.Tensor):
    if x.shape != y.shape:
        raise ShapeError(f"structural_loss operands differ in shape: {x.shape} vs {y.shape}")
    n = x.size
    if n < 2:
        raise ShapeError("structural_loss needs at least two elements")
    flat_x = T.reshape(x, (n,))
    flat_y = T.reshape(y, (n,))
    mu_x = T.tmean(flat_x)
    mu_y = T.tmean(flat_y)
    dx = flat_x - mu_x
    dy = flat_y - mu_y
    scale = 1.0 / (n - 1)
    lam_x = T.sqrt(T.tsum(T.square(dx)) * scale + _VAR_EPS)
    lam_y = T.sqrt(T.tsum(T.square(dy)) * scale + _VAR_EPS)
    lam_xy = T.tsum(dx * dy) * scale
    return lam_x, lam_y, lam_xy


def structural_loss(x: T.Tensor, y: T.Tensor) -> T.Tensor:
    """Covariance-based structural similarity with unbiased statistics.

    (lam_xy + 1) / (lam_x * lam_y + 1); equals 1 when x == y and for
    constant pairs, and 0 for perfectly anticorrelated unit-variance pairs.
    """
    lam_x, lam_y, lam_xy = _stats_pair(x, y)
    return (lam_xy + STABILIZER) / (lam_x * lam_y + STABILIZER)


def mean_abs_error(x: T.Tensor, y: T.Tensor) -> T.Tensor:
    if x.shape != y.shape:
        raise ShapeError(f"operands differ in shape: {x.shape} vs {y.shape}")
    return T.tmean(T.absolute(x - y))


def identity_loss(x_beta: T.Tensor, generator) -> T.Tensor:
    """Mean absolute drift of a target-domain image under the generator."""
    return mean_abs_error(x_beta, _image_of(generator(x_beta)))


def cycle_loss(x: T.Tensor, g_forward, g_backward) -> T.Tensor:
    """Mean absolute error of the round trip through both generators."""
    return mean_abs_error(x, _image_of(g_backward(_image_of(g_forward(x)))))


def _image_of(out):
    return out.i_nor if hasattr(out, "i_nor") else out


def _as_list(logits):
    return list(logits) if isinstance(logits, (list, tuple)) else [logits]


def _clamped_prob(logits: T.Tensor) -> T.Tensor:
    return T.clamp(T.sigmoid(logits), PROB_EPS, 1.0 - PROB_EPS)


def adversarial_loss(d_real_logits, d_fake_logits):
    """Returns (loss_d, loss_g), both minimization-ready.

    The discriminator minimizes the negated classic value
    E[log D(x)] + E[log(1 - D(fake))]; the generator minimizes the
    non-saturating -E[log D(fake)]. Each argument may be a single logit
    tensor or a sequence (one entry per scale); terms are averaged.
    """
    reals = _as_list(d_real_logits)
    fakes = _as_list(d_fake_logits)
    if len(reals) != len(fakes):
        raise ShapeError("adversarial_loss needs one fake logit tensor per real one")
    value = None
    g_term = None
    for logits in reals:
        if not np.all(np.isfinite(logits.data)):
            raise NumericError("non-finite discriminator logits (real branch)")
        term = T.tmean(T.log(_clamped_prob(logits)))
        value = term if value is None else value + term
    for logits in fakes:
        if not np.all(np.isfinite(logits.data)):
            raise NumericError("non-finite discriminator logits (fake branch)")
        p = _clamped_prob(logits)
        term = T.tmean(T.log(1.0 - p))
        value = term if value is None else value + term
        g = T.tmean(T.log(p))
        g_term = g if g_term is None else g_term + g
    loss_d = -(value / float(len(reals)))
    loss_g = -(g_term / float(len(fakes)))
    return loss_d, loss_g


def auxiliary_loss(eta_real: T.Tensor, eta_fake: T.Tensor) -> T.Tensor:
    """E[eta_real^2] + E[2 log(1 - eta_fake)], probabilities clamped."""
    for name, eta in (("eta_real", eta_real), ("eta_fake", eta_fake)):
        if np.any(eta.data < 0.0) or np.any(eta.data > 1.0):
            raise ValueError(f"{name} must lie in [0, 1], got range "
                             f"[{eta.data.min()}, {eta.data.max()}]")
    real_term = T.tmean(T.square(eta_real))
    fake_term = T.tmean(2.0 * T.log(T.clamp(1.0 - eta_fake, PROB_EPS, 1.0)))
    return real_term + fake_term


def total_loss(l_str, l_idt, l_adv, l_cyc, l_aux,
               weights: LossWeights | None = None) -> LossBundle:
    """Weighted sum of the five minimization-ready components.

    ``l_str`` is expected as the structural objective (1 - similarity).
    """
    components = dict(l_str=l_str, l_idt=l_idt, l_adv=l_adv, l_cyc=l_cyc, l_aux=l_aux)
    missing = [k for k, v in components.items() if v is None]
    if missing:
        raise ValueError(f"total_loss is missing components: {missing}")
    weights = weights or LossWeights()
    ts = {k: T.as_tensor(v) for k, v in components.items()}
    w = weights.as_tuple()
    l_all = (w[0] * ts["l_str"] + w[1] * ts["l_idt"] + w[2] * ts["l_adv"]
             + w[3] * ts["l_cyc"] + w[4] * ts["l_aux"])
    return LossBundle(ts["l_str"], ts["l_idt"], ts["l_adv"], ts["l_cyc"], ts["l_aux"], l_all)
