"""Pure-numpy MLP kernels: forward pass, softmax cross-entropy, backprop.

This is the fallback backend; the Cython extension in ``_kernels_cy.pyx``
implements the same three functions with identical semantics. Both operate
on a list of weight matrices ``ws`` (shape ``(n_in, n_out)`` each) and bias
vectors ``bs``, with ReLU between layers and raw logits at the output.
"""

import numpy as np


def forward(ws, bs, x):
    """Return logits of shape (n, K) for inputs x of shape (n, d)."""
    a = x
    last = len(ws) - 1
    for l, (w, b) in enumerate(zip(ws, bs)):
        a = a @ w + b
        if l != last:
            np.maximum(a, 0.0, out=a)
    return a


def _log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def per_sample_losses(ws, bs, x, y):
    """Softmax cross-entropy (natural log) per sample, shape (n,)."""
    logp = _log_softmax(forward(ws, bs, x))
    return -logp[np.arange(len(y)), y]


def loss_and_grad(ws, bs, x, y):
    """Mean cross-entropy loss and its gradients.

    Returns ``(loss, gws, gbs)`` where ``gws``/``gbs`` mirror the shapes of
    ``ws``/``bs`` and hold the gradient of the *mean* loss over the batch.
    """
    n = x.shape[0]
    last = len(ws) - 1

    # Forward, keeping post-activation values for backprop.
    acts = [x]
    a = x
    for l, (w, b) in enumerate(zip(ws, bs)):
        a = a @ w + b
        if l != last:
            np.maximum(a, 0.0, out=a)
        acts.append(a)

    logits = acts[-1]
    logp = _log_softmax(logits)
    loss = -logp[np.arange(n), y].mean()

    # delta at the output: (softmax - onehot) / n
    delta = np.exp(logp)
    delta[np.arange(n), y] -= 1.0
    delta /= n

    gws = [None] * len(ws)
    gbs = [None] * len(bs)
    for l in range(last, -1, -1):
        gws[l] = acts[l].T @ delta
        gbs[l] = delta.sum(axis=0)
        if l > 0:
            delta = delta @ ws[l].T
            # ReLU sub-gradient: 0 where the activation was clamped
            delta[acts[l] <= 0.0] = 0.0
    return loss, gws, gbs
