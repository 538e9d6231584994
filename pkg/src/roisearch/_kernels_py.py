"""NumPy implementations of the hot kernels.

Used when the compiled extension is unavailable or ``ROISEARCH_PURE_PYTHON``
is set. Signatures and results match ``_kernels.pyx``.
"""

import numpy as np


def pair_counts(a, b):
    """Return ``(S, tied_a, tied_b, n_pairs)`` over all unordered pairs.

    ``S`` is concordant minus discordant; ``tied_a``/``tied_b`` count pairs tied
    in ``a``/``b`` (a pair tied in both counts in both).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n = a.shape[0]
    iu = np.triu_indices(n, k=1)
    sa = np.sign(a[:, None] - a[None, :])[iu]
    sb = np.sign(b[:, None] - b[None, :])[iu]
    s = int(np.sum(sa * sb))
    return s, int(np.sum(sa == 0)), int(np.sum(sb == 0)), n * (n - 1) // 2


def hinge_pairs(pred, label, ii, jj, eps):
    """Pairwise margin hinge over index pairs ``(ii[p], jj[p])``.

    Returns ``(loss_sum, n_valid, grad)`` where ``grad`` is d(loss_sum)/d(pred).
    Pairs with equal labels are skipped.
    """
    pred = np.asarray(pred, dtype=np.float64)
    label = np.asarray(label, dtype=np.float64)
    ii = np.asarray(ii, dtype=np.int64)
    jj = np.asarray(jj, dtype=np.int64)
    y = np.sign(label[ii] - label[jj])
    valid = y != 0
    h = -y * (pred[ii] - pred[jj]) + eps
    active = valid & (h > 0)
    loss = float(np.sum(h[active]))
    grad = np.zeros_like(pred)
    g = np.where(active, -y, 0.0)
    np.add.at(grad, ii, g)
    np.add.at(grad, jj, -g)
    return loss, int(np.sum(valid)), grad


def score_grad(idx, adv, probs, offsets, temperature):
    """Mean score-function gradient over a batch of categorical draws.

    ``probs`` is the flat concatenation of per-decision softmax blocks and
    ``offsets[j]`` the start of block ``j``. Returns
    ``mean_b adv_b * d log p(x_b) / d logits``.
    """
    idx = np.asarray(idx, dtype=np.int64)
    adv = np.asarray(adv, dtype=np.float64)
    probs = np.asarray(probs, dtype=np.float64)
    offsets = np.asarray(offsets, dtype=np.int64)
    n = idx.shape[0]
    grad = np.zeros_like(probs)
    np.add.at(grad, (idx + offsets[None, :]).ravel(), np.repeat(adv, idx.shape[1]))
    grad -= adv.sum() * probs
    return grad / (n * temperature)
