"""Central finite-difference gradient checking at 64-bit precision."""

import numpy as np

FD_STEP = 1e-5
FD_TOL = 1e-4

# gradient elements below this are indistinguishable from the cancellation
# noise of central differences at FD_STEP on O(1) losses
NOISE_FLOOR = 1e-6


def finite_difference_check(params, loss_fn, h=FD_STEP, max_elements=None, rng=None):
    """Compare analytic gradients of loss_fn() against central differences.

    Returns the worst relative error over all checked parameters. Parameters
    must be float64 for the tolerance to be meaningful. If max_elements is
    given, the largest-magnitude analytic entries plus a random sample are
    checked per parameter; otherwise every element is.
    """
    for p in params:
        p.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = {p.name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for p in params}
    worst = 0.0
    for p in params:
        flat = p.data.reshape(-1)
        an = analytic[p.name].reshape(-1)
        if max_elements is not None and flat.size > max_elements:
            k_top = max(1, max_elements // 2)
            top = np.argsort(-np.abs(an))[:k_top]
            extra = (rng or np.random.default_rng(0)).choice(
                flat.size, size=max_elements - k_top, replace=False
            )
            idx = np.unique(np.concatenate([top, extra]))
        else:
            idx = np.arange(flat.size)
        num = np.zeros(len(idx))
        for k, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + h
            fp = loss_fn().item()
            flat[i] = orig - h
            fm = loss_fn().item()
            flat[i] = orig
            num[k] = (fp - fm) / (2.0 * h)
        an_sel = an[idx]
        denom = max(np.linalg.norm(an_sel) + np.linalg.norm(num), NOISE_FLOOR)
        rel = np.linalg.norm(an_sel - num) / denom
        worst = max(worst, rel)
    for p in params:
        p.grad = None
    return worst
