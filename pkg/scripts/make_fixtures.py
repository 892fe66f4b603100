"""Regenerate the fixture networks and datasets under src/certshare/fixtures.

Deterministic: every random draw comes from a seeded generator.
Run from the repository root:  python3 scripts/make_fixtures.py
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from certshare.data import encode_idx, save_network
from certshare.network import network_from_arrays

OUT = Path(__file__).resolve().parents[1] / "src" / "certshare" / "fixtures"

RUNNING_EXAMPLE = {
    "input_shape": [2],
    "num_classes": 2,
    "layers": [
        {"type": "dense", "weights": [[1, -1], [0, 3]], "bias": [1, -1]},
        {"type": "relu"},
        {"type": "dense", "weights": [[-1, 0], [-1, 1]], "bias": [2, 0]},
        {"type": "relu"},
        {"type": "dense", "weights": [[2, 0], [-1, 1]], "bias": [2.5, 0]},
    ],
}


def stroke_images(n: int, rng: np.random.Generator):
    """28x28 images of three classes: vertical bar, horizontal bar, hollow square."""
    imgs = np.zeros((n, 28, 28))
    labels = rng.integers(0, 3, n)
    for img, y in zip(imgs, labels):
        t = rng.integers(3, 6)
        if y == 0:
            c = rng.integers(8, 20 - t)
            img[5:23, c:c + t] = 1.0
        elif y == 1:
            r = rng.integers(8, 20 - t)
            img[r:r + t, 5:23] = 1.0
        else:
            a, b = rng.integers(5, 9), rng.integers(19, 23)
            img[a:b, a:a + 2] = img[a:b, b - 2:b] = 1.0
            img[a:a + 2, a:b] = img[b - 2:b, a:b] = 1.0
        img *= rng.uniform(0.7, 1.0)
        img += rng.uniform(0.0, 0.15, img.shape)
    return np.clip(imgs, 0.0, 1.0), labels


def blobs(n: int, rng: np.random.Generator):
    """Two-class 4-d Gaussian clusters, three clusters per class."""
    centers = rng.uniform(0.2, 0.8, (6, 4))
    which = rng.integers(0, 6, n)
    x = np.clip(centers[which] + rng.normal(0, 0.03, (n, 4)), 0.0, 1.0)
    return x, which % 2


def train(x, y, hidden, classes, rng, epochs=60, lr=3e-3, decay=1e-4, augment=None):
    """Plain Adam on softmax cross-entropy; returns weight and bias lists."""
    sizes = [x.shape[1], *hidden, classes]
    W = [rng.normal(0, np.sqrt(2.0 / a), (b, a)) for a, b in zip(sizes[:-1], sizes[1:])]
    B = [np.zeros(b) for b in sizes[1:]]
    params = W + B
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    step = 0
    for _ in range(epochs):
        order = rng.permutation(len(x))
        for s in range(0, len(x), 32):
            idx = order[s:s + 32]
            xb, yb = x[idx], y[idx]
            if augment is not None:
                xb = augment(xb, rng)
            acts = [xb]
            for i in range(len(W)):
                z = acts[-1] @ W[i].T + B[i]
                acts.append(np.maximum(z, 0) if i < len(W) - 1 else z)
            logits = acts[-1]
            p = np.exp(logits - logits.max(1, keepdims=True))
            p /= p.sum(1, keepdims=True)
            g = p
            g[np.arange(len(yb)), yb] -= 1
            g /= len(yb)
            gW, gB = [None] * len(W), [None] * len(W)
            for i in range(len(W) - 1, -1, -1):
                gW[i] = g.T @ acts[i] + decay * W[i]
                gB[i] = g.sum(0)
                if i:
                    g = (g @ W[i]) * (acts[i] > 0)
            step += 1
            for j, (p_, g_) in enumerate(zip(params, gW + gB)):
                m[j] = 0.9 * m[j] + 0.1 * g_
                v[j] = 0.999 * v[j] + 0.001 * g_ ** 2
                mh = m[j] / (1 - 0.9 ** step)
                vh = v[j] / (1 - 0.999 ** step)
                p_ -= lr * mh / (np.sqrt(vh) + 1e-8)
    return W, B


def accuracy(W, B, x, y):
    a = x
    for i in range(len(W)):
        a = a @ W[i].T + B[i]
        if i < len(W) - 1:
            a = np.maximum(a, 0)
    return float((a.argmax(1) == y).mean())


def patch_noise(xb, rng):
    """Random 2x2 patches at random intensities, plus mild global noise."""
    xb = xb.copy().reshape(-1, 28, 28)
    for img in xb:
        for _ in range(3):
            r, c = rng.integers(0, 27, 2)
            img[r:r + 2, c:c + 2] = rng.uniform(0, 1, (2, 2))
    xb += rng.uniform(-0.05, 0.05, xb.shape)
    return np.clip(xb, 0, 1).reshape(len(xb), -1)


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    (OUT / "running_example.json").write_text(json.dumps(RUNNING_EXAMPLE, indent=1), encoding="utf-8")

    rng = np.random.default_rng(2024)
    imgs, labels = stroke_images(1200, rng)
    x = imgs.reshape(len(imgs), -1)
    test_imgs, test_labels = stroke_images(40, np.random.default_rng(7))
    img_bytes, lab_bytes = encode_idx(np.round(test_imgs * 255), test_labels)
    (OUT / "strokes-images.idx").write_bytes(img_bytes)
    (OUT / "strokes-labels.idx").write_bytes(lab_bytes)
    test_x = np.round(test_imgs * 255).reshape(len(test_imgs), -1) / 255.0

    for name, hidden, seed in (("dense_7x20", [20] * 7, 1), ("dense_3x16", [16] * 3, 2)):
        W, B = train(x, labels, hidden, 3, np.random.default_rng(seed), epochs=15, decay=1e-3,
                     augment=patch_noise)
        print(name, "test accuracy", accuracy(W, B, test_x, test_labels))
        save_network(network_from_arrays(W, B, (1, 28, 28)), OUT / f"{name}.json")

    bx, by = blobs(400, np.random.default_rng(11))
    W, B = train(bx, by, [12, 12], 2, np.random.default_rng(3), epochs=80, decay=1e-4)
    print("blobs accuracy", accuracy(W, B, bx, by))
    save_network(network_from_arrays(W, B), OUT / "blobs_net.json")
    (OUT / "blobs.json").write_text(json.dumps({"x": bx.tolist(), "y": by.tolist()}), encoding="utf-8")


if __name__ == "__main__":
    main()
