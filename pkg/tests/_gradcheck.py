"""Central finite-difference gradient checking shared by the test modules."""

import numpy as np
import torch


def randomize_parameters(model: torch.nn.Module, seed: int = 0, scale: float = 0.05):
    """Move zero-initialized layers off their saddle so gradients are generic."""
    torch.manual_seed(seed)
    with torch.no_grad():
        for p in model.parameters():
            p.add_(torch.randn_like(p) * scale)


def finite_diff_check(
    model: torch.nn.Module,
    loss_fn,
    num_params: int = 10,
    h: float = 1e-6,
    seed: int = 0,
    tol: float = 1e-4,
):
    """Compare autograd gradients against central differences.

    Picks ``num_params`` random parameter entries with non-negligible
    gradient (single-slot cross-attention leaves its query/key projections
    without gradient by construction) and asserts the relative error of
    (loss(p+h) - loss(p-h)) / 2h against the autograd value.
    """
    model.zero_grad()
    loss = loss_fn()
    loss.backward()
    named = [(n, p) for n, p in model.named_parameters() if p.grad is not None]
    rng = np.random.default_rng(seed)

    checked = 0
    attempts = 0
    while checked < num_params:
        attempts += 1
        assert attempts < 1000, "could not find enough parameters with usable gradients"
        name, p = named[rng.integers(len(named))]
        idx = tuple(int(rng.integers(s)) for s in p.shape)
        grad = p.grad[idx].item()
        if abs(grad) < 1e-7:
            continue
        with torch.no_grad():
            orig = p[idx].item()
            p[idx] = orig + h
            loss_plus = loss_fn().item()
            p[idx] = orig - h
            loss_minus = loss_fn().item()
            p[idx] = orig
        fd = (loss_plus - loss_minus) / (2.0 * h)
        rel = abs(fd - grad) / max(abs(fd), abs(grad))
        assert rel < tol, f"{name}{idx}: autograd {grad:.3e} vs fd {fd:.3e} (rel {rel:.2e})"
        checked += 1
