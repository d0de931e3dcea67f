"""Step-size sequences and mini-batch schedules for the accelerated methods.

All solvers in this package drive their extrapolation with a pair
``(alpha_k, A_k)`` where ``A_k = sum_{l<=k} alpha_l``.  The next step size
is the positive root of a quadratic coupling relation

    ``A_{k+1} (1 + A_k mu) = factor * L * alpha_{k+1}^2``

whose ``factor`` is 1 for the direct schemes and 2 for the inexact-prox and
primal-dual schemes.  Roots are computed in the cancellation-free
arrangement ``b + sqrt(b^2 + c)`` because ``A_k`` reaches 1e6+ at the
scales exercised here.

Batch-size rules expose their hidden proportionality constants as
arguments defaulting to 1, so a noiseless run degenerates to batch 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

__all__ = [
    "StepState",
    "next_alpha_stm",
    "next_alpha_strongly_convex",
    "next_alpha_spdstm",
    "acsa_params",
    "batch_size_sstm",
    "batch_size_spdstm",
    "batch_size_sstm_sc",
]


@dataclass(frozen=True)
class StepState:
    """One point of the step sequence: index, step and its running sum."""

    k: int
    alpha_k: float
    A_k: float


def _positive_root(b: float, c: float) -> float:
    """Largest root of ``x^2 - 2 b x - c = 0`` with ``b, c >= 0``."""
    return b + math.sqrt(b * b + c)


def next_alpha_stm(A_k: float, L: float, mu: float = 0.0, factor: float = 1.0):
    """Next ``(alpha, A)`` for the similar-triangles coupling.

    Solves ``(A_k + alpha)(1 + A_k mu) = factor * L * alpha^2`` for the
    positive ``alpha``.  ``factor=1`` matches the direct scheme (so that
    ``alpha_1 = 1/L`` from ``A_0 = 0`` with ``mu = 0``), ``factor=2`` the
    inexact-prox normalization.
    """
    if L <= 0:
        raise ValueError("L must be positive")
    if mu < 0 or A_k < 0:
        raise ValueError("mu and A_k must be non-negative")
    cL = factor * L
    w = 1.0 + A_k * mu
    alpha = _positive_root(w / (2.0 * cL), A_k * w / cL)
    return alpha, A_k + alpha


def next_alpha_strongly_convex(A_k: float, L: float, mu: float):
    """Next ``(alpha, A)`` for the strongly convex scheme started at ``A_0 = 1/L``.

    Identical coupling to :func:`next_alpha_stm` with ``factor=1``; kept as
    its own entry point because the initialization (``alpha_0 = A_0 = 1/L``)
    and the geometric lower bound
    ``A_k >= (1/L)(1 + sqrt(mu/L)/2)^{2k}`` are specific to this mode.
    """
    return next_alpha_stm(A_k, L, mu, factor=1.0)


def next_alpha_spdstm(A_k: float, L_tilde: float):
    """Next ``(alpha, A)`` from ``2 L_tilde alpha^2 = A_k + alpha``."""
    if L_tilde <= 0:
        raise ValueError("L_tilde must be positive")
    if A_k < 0:
        raise ValueError("A_k must be non-negative")
    alpha = _positive_root(1.0 / (4.0 * L_tilde), A_k / (2.0 * L_tilde))
    return alpha, A_k + alpha


def acsa_params(t: int, L_tilde_psi: float):
    """Per-iteration pair ``(alpha_t, gamma_t) = (2/(t+1), 4 L / (t(t+1)))``."""
    if t < 1:
        raise ValueError("t must be >= 1")
    if L_tilde_psi <= 0:
        raise ValueError("L_tilde_psi must be positive")
    return 2.0 / (t + 1), 4.0 * L_tilde_psi / (t * (t + 1))


def _ceil_at_least_one(x: float) -> int:
    return max(1, math.ceil(x))


def batch_size_sstm(alpha_next: float, A_next: float, mu: float, sigma: float,
                    eps: float, N: int, beta: float, theta: float = 1.0) -> int:
    """Mini-batch size ``max(1, ceil(sigma^2 alpha ln(N/beta) / ((1+A mu) eps)))``.

    ``theta`` is the hidden proportionality constant (default 1).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if sigma == 0.0:
        return 1
    raw = theta * sigma ** 2 * alpha_next * math.log(N / beta) / ((1.0 + A_next * mu) * eps)
    return _ceil_at_least_one(raw)


def batch_size_spdstm(alpha_tilde_k: float, sigma_psi: float, eps: float,
                      N: int, beta: float, C_hat: float = 1.0) -> int:
    """Primal-dual batch rule ``max(1, ceil(sigma_psi^2 alpha~ ln(N/beta)/(C_hat eps)))``."""
    if C_hat <= 0:
        raise ValueError("C_hat must be positive")
    if eps <= 0:
        raise ValueError("eps must be positive")
    if sigma_psi == 0.0:
        return 1
    raw = sigma_psi ** 2 * alpha_tilde_k * math.log(N / beta) / (C_hat * eps)
    return _ceil_at_least_one(raw)


def batch_size_sstm_sc(L_psi: float, mu_psi: float, sigma_psi: float, eps: float,
                       N: int, beta: float, C: float = 1.0) -> int:
    """Batch rule for the strongly convex dual scheme.

    ``max(1, ceil((mu/L)^{3/2} N^2 sigma^2 ln(N/beta) / (C eps)))``.
    """
    if eps <= 0 or C <= 0:
        raise ValueError("eps and C must be positive")
    if sigma_psi == 0.0:
        return 1
    raw = (mu_psi / L_psi) ** 1.5 * N ** 2 * sigma_psi ** 2 * math.log(N / beta) / (C * eps)
    return _ceil_at_least_one(raw)
