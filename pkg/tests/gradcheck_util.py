"""Finite-difference helpers shared by the gradient tests."""

import torch

from rgbdsod.training import total_loss


def loss_fn(model, batch):
    out = model(batch["rgb"], batch.get("depth"))
    return total_loss(out["saliency"], out["edge"], batch["gt"], batch["edge"],
                      model.cfg.variant).L


def fd_check(model, batch, names, h=1e-5, per_tensor=1):
    """Central differences on the largest-gradient entries of each named tensor.

    Returns a list of (name, index, analytic, numeric, relative error).
    """
    params = dict(model.named_parameters())
    model.zero_grad()
    loss_fn(model, batch).backward()
    results = []
    for name in names:
        p = params[name]
        g = p.grad.detach().reshape(-1)
        for idx in torch.topk(g.abs(), per_tensor).indices.tolist():
            flat = p.data.view(-1)
            orig = flat[idx].item()
            with torch.no_grad():
                flat[idx] = orig + h
                up = loss_fn(model, batch).item()
                flat[idx] = orig - h
                down = loss_fn(model, batch).item()
                flat[idx] = orig
            num = (up - down) / (2 * h)
            ana = g[idx].item()
            rel = abs(ana - num) / max(abs(ana), abs(num), 1e-12)
            results.append((name, idx, ana, num, rel))
    return results


def random_batch(cfg, b=2, dtype=torch.float64, seed=0):
    g = torch.Generator().manual_seed(seed)
    s = cfg.input_size
    gt = (torch.rand(b, 1, s, s, generator=g) > 0.5).to(dtype)
    return {
        "rgb": torch.randn(b, 3, s, s, generator=g).to(dtype),
        "depth": torch.randn(b, 3, s, s, generator=g).to(dtype),
        "gt": gt,
        "edge": (torch.rand(b, 1, s, s, generator=g) > 0.8).to(dtype),
    }


def sample_parameter_names(model, per_group=5):
    """Pick tensors spread over backbone, AFE, CMI, gate and decoder."""
    groups = {
        "backbone": lambda n: n.startswith(("rgb_encoder", "depth_encoder")),
        "afe": lambda n: n.startswith(("afe_rgb", "afe_depth")),
        "cmi": lambda n: n.startswith("interaction"),
        "gma": lambda n: n.startswith("gates"),
        "decoder": lambda n: n.startswith(("decoder", "skip")),
    }
    names = [n for n, _ in model.named_parameters()]
    chosen = {}
    for group, pred in groups.items():
        members = [n for n in names if pred(n)]
        step = max(len(members) // per_group, 1)
        chosen[group] = members[::step][:per_group]
    return chosen


@torch.no_grad()
def randomize_parameters(model, seed=0):
    """Move to a generic point: fan-in scaled weights, small random tables.

    At initialization attention logits are nearly flat and the zero position
    tables sit on a symmetric point, which leaves some gradients below the
    round-off floor of a central difference.
    """
    g = torch.Generator().manual_seed(seed)
    for name, p in model.named_parameters():
        if p.ndim >= 2 and "table" not in name and not name.endswith(("pos_r", "pos_d")):
            fan_in = p[0].numel()
            p.copy_(torch.randn(p.shape, generator=g, dtype=p.dtype) / fan_in ** 0.5)
        else:
            p.add_(0.1 * torch.randn(p.shape, generator=g, dtype=p.dtype))
