"""Sample-reweighted decorrelation penalty on final-layer representations.

Per-sample weights ``w = softplus(u)`` are positive by construction. For each
variable m the weighted cross-moments against every other variable are
penalized, with regularizers keeping ``w`` small and its mean near one.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, Tensor
from .errors import ConfigError, ShapeError

VARIANTS = ("sq_outside", "sq_inside")


def inverse_softplus(y: float) -> float:
    return y + math.log(-math.expm1(-y))


@dataclass(eq=False)
class LcdState:
    u: Tensor
    lambda1: float = 0.1
    lambda2: float = 1.0
    gamma_raw: Tensor | None = None
    gamma_trainable: bool = False
    variant: str = "sq_outside"
    optimizer: AdamState = field(default_factory=AdamState)

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError("lambda1 and lambda2 must be non-negative")
        if self.variant not in VARIANTS:
            raise ConfigError(f"lcd variant must be one of {VARIANTS}")

    @classmethod
    def create(cls, n: int, p: int, lambda1: float = 0.1, lambda2: float = 1.0,
               gamma_trainable: bool = False, variant: str = "sq_outside", lr: float = 0.01) -> LcdState:
        """Weights start at exactly 1; gamma at all-ones."""
        u = ad.parameter(np.full((n, 1), inverse_softplus(1.0)), "lcd.u")
        gamma_raw = ad.Tensor(np.full((p - 1, 1), inverse_softplus(1.0)), requires_grad=gamma_trainable,
                              name="lcd.gamma")
        return cls(u=u, lambda1=lambda1, lambda2=lambda2, gamma_raw=gamma_raw,
                   gamma_trainable=gamma_trainable, variant=variant, optimizer=AdamState(lr=lr))

    def weights(self) -> Tensor:
        return ad.softplus(self.u)

    def gamma(self, p: int) -> Tensor:
        if self.gamma_raw is None:
            return Tensor(np.ones((p - 1, 1)))
        if self.gamma_raw.shape != (p - 1, 1):
            raise ShapeError(f"gamma has shape {self.gamma_raw.shape}, need {(p - 1, 1)}")
        return ad.softplus(self.gamma_raw)

    def parameters(self) -> list[Tensor]:
        params = [self.u]
        if self.gamma_trainable and self.gamma_raw is not None:
            params.append(self.gamma_raw)
        return params


def weighted_moment_matrix(H: Tensor, w: Tensor) -> Tensor:
    """C = H^T diag(w) H / n - (H^T w / n)(H^T w / n)^T, shape p x p."""
    n = H.shape[0]
    if n < 2:
        raise ShapeError("weighted moments need at least two samples")
    if w.shape != (n, 1):
        raise ShapeError(f"weights {w.shape} incompatible with {H.shape}")
    Ht = ad.transpose(H)
    second = ad.scale(ad.matmul(Ht, ad.scale_rows(H, w)), 1.0 / n)
    mu = ad.scale(ad.matmul(Ht, w), 1.0 / n)
    return ad.sub(second, ad.matmul(mu, ad.transpose(mu)))


def _off_diagonal_index(p: int) -> tuple[np.ndarray, np.ndarray]:
    rows = np.repeat(np.arange(p), p - 1)
    cols = np.array([k for m in range(p) for k in range(p) if k != m], dtype=np.int64)
    return rows, cols


def weighted_cov(H: Tensor, w: Tensor, m: int) -> Tensor:
    """Weighted cross-moments of column m against every other column, as a 1 x (p-1) row."""
    p = H.shape[1]
    C = weighted_moment_matrix(H, w)
    others = [k for k in range(p) if k != m]
    return ad.take(C, [m] * (p - 1), others, (1, p - 1))


def decorrelation_term(H: Tensor, w: Tensor, gamma: Tensor, variant: str = "sq_outside") -> Tensor:
    p = H.shape[1]
    rows, cols = _off_diagonal_index(p)
    D = ad.take(weighted_moment_matrix(H, w), rows, cols, (p, p - 1))
    if variant == "sq_outside":
        return ad.sum_all(ad.square(ad.matmul(ad.abs_(D), gamma)))
    return ad.sum_all(ad.matmul(ad.square(D), gamma))


def lcd_loss(H: Tensor, state: LcdState) -> Tensor:
    """Decorrelation term + (lambda1/n) sum w^2 + lambda2 (mean w - 1)^2."""
    n, p = H.shape
    if p < 2:
        raise ShapeError("decorrelation needs at least two variables")
    if state.u.shape != (n, 1):
        raise ShapeError(f"lcd weights cover {state.u.shape[0]} samples, representation has {n}")
    w = state.weights()
    loss = decorrelation_term(H, w, state.gamma(p), state.variant)
    if state.lambda1:
        loss = ad.add(loss, ad.scale(ad.sum_all(ad.square(w)), state.lambda1 / n))
    if state.lambda2:
        loss = ad.add(loss, ad.scale(ad.square(ad.add_scalar(ad.mean_all(w), -1.0)), state.lambda2))
    return loss


def step_weights(state: LcdState, grad_u: np.ndarray | None) -> LcdState:
    """Adam step on u alone; positivity of w comes from the softplus, never a projection."""
    ad.adam_step([state.u], [grad_u], state.optimizer)
    return state


def weighted_correlation(x: np.ndarray, y: np.ndarray, w: np.ndarray) -> float:
    """Pearson correlation of x and y under normalized sample weights w."""
    w = np.asarray(w, dtype=np.float64).ravel()
    w = w / w.sum()
    mx, my = w @ x, w @ y
    cxy = w @ ((x - mx) * (y - my))
    return float(cxy / math.sqrt((w @ (x - mx) ** 2) * (w @ (y - my) ** 2)))
