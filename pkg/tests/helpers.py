"""Shared test helpers."""
import numpy as np

from certshare.network import network_from_arrays


def random_net(rng, dims, scale=1.0):
    """Dense ReLU net with layer widths ``dims`` (input first, logits last)."""
    ws, bs = [], []
    for a, b in zip(dims[:-1], dims[1:]):
        ws.append(rng.normal(0.0, scale / np.sqrt(a), size=(b, a)))
        bs.append(rng.normal(0.0, 0.3, size=b))
    return network_from_arrays(ws, bs)
