"""A small fixed-weight convolutional objectness scorer.

This is a stand-in for a real detector's objectness head so that the
patch pipeline can run and be gradient-checked without pretrained
weights. It makes no claim to behave like any particular detector.

Architecture: three 3x3 stride-2 convolutions with softplus, then a 1x1
convolution and a logistic, giving one score per 8x8 input cell. First
stage filters are blind to constant color and linear ramps and the head
weights are nonnegative, so flat or gently shaded regions score close to
``base_score`` and local texture raises the score.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logit

from .image import check_image

__all__ = ["SurrogateDetector", "conv2d", "conv2d_backward"]


def _pad(x, pad):
    # Edge replication: flat regions stay flat up to the image border.
    return np.pad(x, ((pad, pad), (pad, pad), (0, 0)), mode="edge")


def _unpad(gp, pad):
    """Adjoint of :func:`_pad`: fold border gradients onto the edge pixels."""
    if pad == 0:
        return gp
    gp = gp.copy()
    gp[pad] += gp[:pad].sum(axis=0)
    gp[-pad - 1] += gp[-pad:].sum(axis=0)
    gp = gp[pad:-pad]
    gp[:, pad] += gp[:, :pad].sum(axis=1)
    gp[:, -pad - 1] += gp[:, -pad:].sum(axis=1)
    return gp[:, pad:-pad]


def _patches(xp, ksize, stride, out_h, out_w):
    cols = [
        xp[dy : dy + stride * out_h : stride, dx : dx + stride * out_w : stride]
        for dy in range(ksize)
        for dx in range(ksize)
    ]
    return np.concatenate(cols, axis=2)  # (out_h, out_w, k*k*C)


def conv2d(x, weight, bias, stride=1, pad=0):
    """Cross-correlation of an (H, W, C) map with (k, k, C, F) weights, edge padded."""
    k = weight.shape[0]
    xp = _pad(x, pad)
    out_h = (xp.shape[0] - k) // stride + 1
    out_w = (xp.shape[1] - k) // stride + 1
    cols = _patches(xp, k, stride, out_h, out_w)
    return cols @ weight.reshape(-1, weight.shape[3]) + bias


def conv2d_backward(grad_out, x_shape, weight, stride=1, pad=0):
    """Gradient of :func:`conv2d` with respect to its input."""
    k, _, c, f = weight.shape
    out_h, out_w, _ = grad_out.shape
    gcols = grad_out @ weight.reshape(-1, f).T  # (out_h, out_w, k*k*C)
    gp = np.zeros((x_shape[0] + 2 * pad, x_shape[1] + 2 * pad, c))
    idx = 0
    for dy in range(k):
        for dx in range(k):
            gp[dy : dy + stride * out_h : stride, dx : dx + stride * out_w : stride] += gcols[
                :, :, idx * c : (idx + 1) * c
            ]
            idx += 1
    return _unpad(gp, pad)


def _texture_only(w):
    """Remove constant and linear-ramp components from each 3x3 kernel."""
    yy, xx = np.mgrid[-1:2, -1:2]
    basis, _ = np.linalg.qr(np.stack([np.ones(9), xx.ravel(), yy.ravel()], axis=1))
    flat = w.reshape(9, -1)
    return (flat - basis @ (basis.T @ flat)).reshape(w.shape)


def _softplus(x):
    return np.logaddexp(0.0, x)


@dataclass(frozen=True)
class SurrogateDetector:
    """Seeded surrogate objectness network; weights are fixed at construction."""

    seed: int = 0
    channels: tuple = (3, 8, 16, 16)
    gain: float = 5.0
    base_score: float = 0.05
    weights: list = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        rng = np.random.default_rng(self.seed)
        layers = []
        for i, (cin, cout) in enumerate(zip(self.channels[:-1], self.channels[1:])):
            w = self.gain * rng.standard_normal((3, 3, cin, cout)) / np.sqrt(9 * cin)
            if i == 0:
                w = _texture_only(w)
            layers.append((w, np.zeros(cout)))
        cin = self.channels[-1]
        head = np.abs(rng.standard_normal((1, 1, cin, 1))) / np.sqrt(cin)
        layers.append((head, np.zeros(1)))
        object.__setattr__(self, "weights", layers)
        # Calibrate the head bias on a flat image, away from the borders.
        flat = self._forward(np.full((4 * self.stride,) * 2 + (3,), 0.5), logits=True)[0]
        layers[-1] = (head, np.full(1, logit(self.base_score) - flat[2, 2]))
        for w, b in layers:
            w.setflags(write=False)
            b.setflags(write=False)

    @property
    def stride(self):
        return 2 ** (len(self.channels) - 1)

    def _prepare(self, img):
        img = check_image(img)
        h, w, _ = img.shape
        s = self.stride
        ph, pw = -h % s, -w % s
        if ph or pw:
            img = np.pad(img, ((0, ph), (0, pw), (0, 0)))
        return img - 0.5, (h, w)

    def _forward(self, img, logits=False):
        x, orig = self._prepare(img)
        cache = []
        for weight, bias in self.weights[:-1]:
            z = conv2d(x, weight, bias, stride=2, pad=1)
            cache.append((x.shape, z))
            x = _softplus(z)
        weight, bias = self.weights[-1]
        out = conv2d(x, weight, bias)[:, :, 0]
        return (out if logits else expit(out)), cache, x.shape, orig

    def score_map(self, img):
        """Objectness scores in (0, 1), one per ``stride x stride`` cell."""
        return self._forward(img)[0]

    def backward(self, img, upstream):
        """Vector-Jacobian product of :meth:`score_map` at ``img``."""
        scores, cache, feat_shape, (h, w) = self._forward(img)
        g = np.asarray(upstream, dtype=np.float64)
        if g.shape != scores.shape:
            raise ValueError(f"upstream shape {g.shape} != score grid {scores.shape}")
        g = (g * scores * (1.0 - scores))[:, :, None]
        head_w = self.weights[-1][0]
        g = conv2d_backward(g, feat_shape, head_w)
        for (weight, _), (x_shape, z) in zip(reversed(self.weights[:-1]), reversed(cache)):
            g = g * expit(z)
            g = conv2d_backward(g, x_shape, weight, stride=2, pad=1)
        return g[:h, :w]
