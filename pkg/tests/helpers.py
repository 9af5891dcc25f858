"""Finite-difference helpers shared by the gradient tests."""
import torch
from torch.func import functional_call


def sampled_entries(module, fraction=1.0, seed=0, names=None):
    """Pick ``fraction`` of the scalar entries of every trainable parameter (at least one each)."""
    generator = torch.Generator().manual_seed(seed)
    picks = []
    for name, param in module.named_parameters():
        if not param.requires_grad or (names is not None and name not in names):
            continue
        count = param.numel()
        k = max(1, int(round(fraction * count)))
        picks.append((name, torch.randperm(count, generator=generator)[:k]))
    return picks


def param_gradcheck(module, scalar_fn, fraction=1.0, seed=0, atol=1e-5, rtol=1e-3, names=None):
    """gradcheck of ``scalar_fn(call)`` w.r.t. sampled parameter entries.

    ``call(*args)`` runs the module with the sampled entries substituted, so
    the sampled values become differentiable inputs of gradcheck.
    """
    params = dict(module.named_parameters())
    picks = sampled_entries(module, fraction, seed, names)

    def fn(*values):
        overrides = {}
        for (name, idx), value in zip(picks, values):
            base = params[name].detach().reshape(-1)
            overrides[name] = base.scatter(0, idx, value).view_as(params[name])

        def call(*args):
            return functional_call(module, overrides, args)

        return scalar_fn(call)

    inputs = tuple(
        params[name].detach().reshape(-1)[idx].clone().requires_grad_(True) for name, idx in picks
    )
    return torch.autograd.gradcheck(fn, inputs, eps=1e-6, atol=atol, rtol=rtol)


def random_projection(shape, seed=0, dtype=torch.float64):
    """Fixed weights turning a tensor into a scalar without symmetric cancellation."""
    generator = torch.Generator().manual_seed(seed)
    return torch.randn(shape, generator=generator, dtype=dtype)
