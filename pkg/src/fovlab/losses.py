"""Temporal contrastive and bootstrap losses with closed-form gradients.

Both losses return ``(loss, grad)`` so the gradient can be checked
independently; :func:`simclr_tt` and :func:`byol_tt` wrap them as autograd
functions for training.
"""
from __future__ import annotations

import torch


class ZeroNormError(ValueError):
    pass


def _unit(z: torch.Tensor):
    norm = z.norm(dim=1, keepdim=True)
    if bool((norm == 0).any()):
        raise ZeroNormError("cosine similarity undefined for zero-norm embeddings")
    return z / norm, norm


def _through_normalization(grad_u, u, norm):
    # d(z/|z|)^T g = (g - u (u . g)) / |z|
    return (grad_u - u * (u * grad_u).sum(1, keepdim=True)) / norm


def simclr_tt_loss(z: torch.Tensor, pair_index, tau: float):
    """Temporal InfoNCE averaged over all anchors.

    ``pair_index[i]`` is the temporal partner of row ``i``.  The denominator
    runs over every k != i, positive included.
    """
    if tau <= 0:
        raise ValueError("temperature must be > 0")
    n = z.shape[0]
    if n < 4:
        raise ValueError("need a batch of at least 4 embeddings")
    pair = torch.as_tensor(pair_index, dtype=torch.long)
    u, norm = _unit(z)
    logits = (u @ u.T) / tau
    diag = torch.eye(n, dtype=torch.bool)
    logits = logits.masked_fill(diag, float("-inf"))
    log_denom = torch.logsumexp(logits, dim=1)
    rows = torch.arange(n)
    loss = (log_denom - logits[rows, pair]).mean()

    prob = torch.softmax(logits, dim=1)  # zero on the diagonal
    prob[rows, pair] -= 1.0
    grad_u = (prob @ u + prob.T @ u) / (tau * n)
    return loss, _through_normalization(grad_u, u, norm)


def byol_tt_loss(q: torch.Tensor, z_target: torch.Tensor):
    """Mean of 2 - 2 cos(q_i, z'_i); the target side receives no gradient.

    Symmetrization over both temporal directions is done by stacking the
    anchors as (x_t, x_t+dt) and the targets as (x_t+dt, x_t).
    """
    if q.shape != z_target.shape:
        raise ValueError(f"shape mismatch {tuple(q.shape)} vs {tuple(z_target.shape)}")
    u, norm = _unit(q)
    v, _ = _unit(z_target.detach())
    n = q.shape[0]
    cos = (u * v).sum(1)
    loss = (2.0 - 2.0 * cos).mean()
    grad_u = -2.0 * v / n
    return loss, _through_normalization(grad_u, u, norm)


class _SimCLRTT(torch.autograd.Function):
    @staticmethod
    def forward(ctx, z, pair, tau):
        loss, grad = simclr_tt_loss(z.detach(), pair, tau)
        ctx.save_for_backward(grad)
        return loss

    @staticmethod
    def backward(ctx, g):
        (grad,) = ctx.saved_tensors
        return g * grad, None, None


class _BYOLTT(torch.autograd.Function):
    @staticmethod
    def forward(ctx, q, z_target):
        loss, grad = byol_tt_loss(q.detach(), z_target)
        ctx.save_for_backward(grad)
        return loss

    @staticmethod
    def backward(ctx, g):
        (grad,) = ctx.saved_tensors
        return g * grad, None


def simclr_tt(z, pair_index, tau):
    return _SimCLRTT.apply(z, torch.as_tensor(pair_index, dtype=torch.long), tau)


def byol_tt(q, z_target):
    return _BYOLTT.apply(q, z_target)
