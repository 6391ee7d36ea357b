"""Training losses and evaluation metrics.

The total objective is lambda_r * L_rec + lambda_s * L_syn + lambda_cl * L_cl:
reconstruction over available slices, synthesis over missing slices (each an
L1 plus weighted perceptual term), and the mean contrastive loss of the
graph-completion taps. Metrics (MAE / PSNR / SSIM) are plain numpy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ContractError

PERCEPTUAL_NET_SEED = 77  # weights are fixed and identical across runs


@dataclass(frozen=True)
class LossWeights:
    lambda_r: float = 5.0
    lambda_s: float = 20.0
    lambda_cl: float = 0.001
    perceptual_weight: float = 0.1  # weight of the perceptual term inside L_rec/L_syn

    def __post_init__(self):
        if min(self.lambda_r, self.lambda_s, self.lambda_cl, self.perceptual_weight) < 0:
            raise ConfigError("loss weights must be nonnegative")


class PerceptualNet:
    """Three fixed random-weight 2-D conv layers (stride 2, widths 8/16/32).

    Never trained; seed-pinned so the loss is identical across runs. Slices
    go in as [B, 1, H, W]; features come out at three depths.
    """

    WIDTHS = (8, 16, 32)

    def __init__(self, seed: int = PERCEPTUAL_NET_SEED, dtype=np.float32):
        rng = np.random.default_rng(seed)
        self.weights: list[Tensor] = []
        c_in = 1
        for c_out in self.WIDTHS:
            fan = c_in * 9
            w = (rng.standard_normal((c_out, c_in, 3, 3)) / np.sqrt(fan)).astype(dtype)
            self.weights.append(Tensor(w))
            c_in = c_out

    def features(self, slices: Tensor) -> list[Tensor]:
        feats = []
        x = slices
        for w in self.weights:
            x = ad.leaky_relu(ad.conv2d(x, w, stride=2), 0.2)
            feats.append(x)
        return feats

    def checksum(self) -> int:
        import zlib

        acc = 0
        for w in self.weights:
            acc = zlib.crc32(w.data.tobytes(), acc)
        return acc


def _selector_weights(selector: np.ndarray, like: Tensor) -> tuple[np.ndarray, int]:
    selector = np.asarray(selector, dtype=bool)
    count = int(np.count_nonzero(selector))
    if count == 0:
        raise ContractError("loss selector picks no slices")
    return selector.astype(like.data.dtype), count


def l1_loss(pred: Tensor, target: np.ndarray, selector: np.ndarray) -> Tensor:
    """Mean absolute difference over the selected slices only."""
    if pred.shape != tuple(np.shape(target)):
        raise ConfigError(f"shape mismatch: pred {pred.shape} vs target {np.shape(target)}")
    sel, count = _selector_weights(selector, pred)
    diff = ad.abs_(ad.sub(pred, ad.Tensor(np.asarray(target, dtype=pred.data.dtype))))
    weighted = ad.mul(diff, ad.Tensor(sel[:, None, None]))
    denom = float(count * pred.shape[1] * pred.shape[2])
    return ad.mul(ad.sum_(weighted), 1.0 / denom)


def perceptual_loss(pred: Tensor, target: np.ndarray, selector: np.ndarray,
                    net: PerceptualNet) -> Tensor:
    """Mean L1 distance between per-slice feature maps at all three depths,
    averaged over the selected slices."""
    if pred.shape != tuple(np.shape(target)):
        raise ConfigError(f"shape mismatch: pred {pred.shape} vs target {np.shape(target)}")
    sel, count = _selector_weights(selector, pred)
    n = pred.shape[0]
    pred_slices = ad.reshape(pred, (n, 1) + pred.shape[1:])
    tgt = np.asarray(target, dtype=pred.data.dtype).reshape(n, 1, *pred.shape[1:])
    feats_p = net.features(pred_slices)
    feats_t = net.features(ad.Tensor(tgt))
    terms = []
    for fp, ft in zip(feats_p, feats_t):
        per_slice = ad.sum_(ad.abs_(ad.sub(fp, ft)), axis=(1, 2, 3))
        per_slice = ad.mul(per_slice, 1.0 / float(np.prod(fp.shape[1:])))
        weighted = ad.sum_(ad.mul(per_slice, ad.Tensor(sel)))
        terms.append(ad.mul(weighted, 1.0 / count))
    return ad.mul(ad.add(ad.add(terms[0], terms[1]), terms[2]), 1.0 / 3.0)


def total_loss(pred: Tensor, target: np.ndarray, slice_mask: np.ndarray,
               pad_mask: np.ndarray, cl_losses: list[Tensor],
               weights: LossWeights, net: PerceptualNet):
    """Weighted objective and its unweighted components.

    L_rec covers available slices, L_syn covers missing slices (empty -> 0),
    L_cl is the mean over the graph-completion taps. Returns (scalar Tensor,
    dict of float components).
    """
    slice_mask = np.asarray(slice_mask, dtype=bool)
    pad_mask = np.asarray(pad_mask, dtype=bool)
    avail = slice_mask & ~pad_mask
    miss = ~slice_mask & ~pad_mask
    if not avail.any():
        raise ContractError("total_loss requires at least one available slice")

    def pixel_term(sel):
        l1 = l1_loss(pred, target, sel)
        if weights.perceptual_weight == 0.0:
            return l1
        return ad.add(l1, ad.mul(perceptual_loss(pred, target, sel, net),
                                 weights.perceptual_weight))

    l_rec = pixel_term(avail)
    l_syn = pixel_term(miss) if miss.any() else None
    l_cl = None
    if cl_losses:
        acc = cl_losses[0]
        for extra in cl_losses[1:]:
            acc = ad.add(acc, extra)
        l_cl = ad.mul(acc, 1.0 / len(cl_losses))

    total = ad.mul(l_rec, weights.lambda_r)
    if l_syn is not None:
        total = ad.add(total, ad.mul(l_syn, weights.lambda_s))
    if l_cl is not None:
        total = ad.add(total, ad.mul(l_cl, weights.lambda_cl))

    components = {
        "total": float(total.data),
        "rec": float(l_rec.data),
        "syn": float(l_syn.data) if l_syn is not None else 0.0,
        "cl": float(l_cl.data) if l_cl is not None else 0.0,
    }
    return total, components


# ---------------------------------------------------------------------------
# metrics (numpy only; callers pass the slice subset they want scored)
# ---------------------------------------------------------------------------

def mae(pred: np.ndarray, target: np.ndarray) -> float:
    pred, target = np.asarray(pred), np.asarray(target)
    if pred.shape != target.shape:
        raise ConfigError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return float(np.mean(np.abs(pred.astype(np.float64) - target.astype(np.float64))))


def psnr(pred: np.ndarray, target: np.ndarray, data_range: float = 2.0) -> float:
    """10 log10(range^2 / MSE), capped at 100 dB when MSE < 1e-12."""
    pred, target = np.asarray(pred), np.asarray(target)
    if pred.shape != target.shape:
        raise ConfigError(f"shape mismatch: {pred.shape} vs {target.shape}")
    if data_range <= 0:
        raise ConfigError(f"data_range must be > 0, got {data_range}")
    mse = float(np.mean((pred.astype(np.float64) - target.astype(np.float64)) ** 2))
    if mse < 1e-12:
        return 100.0
    return float(10.0 * np.log10(data_range * data_range / mse))


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(r * r) / (2.0 * sigma * sigma))
    k = np.outer(g, g)
    return k / k.sum()


def ssim(pred: np.ndarray, target: np.ndarray, data_range: float = 2.0) -> float:
    """Mean structural similarity over slices.

    Per slice: 11x11 Gaussian window (sigma 1.5) local statistics over valid
    window positions, C1 = (0.01 range)^2, C2 = (0.03 range)^2. Input is
    [N, H, W] (or a single [H, W] slice) with H, W >= 11.
    """
    pred, target = np.asarray(pred, np.float64), np.asarray(target, np.float64)
    if pred.shape != target.shape:
        raise ConfigError(f"shape mismatch: {pred.shape} vs {target.shape}")
    if pred.ndim == 2:
        pred, target = pred[None], target[None]
    if min(pred.shape[1], pred.shape[2]) < 11:
        raise ConfigError(f"ssim needs in-plane size >= 11, got {pred.shape[1:]}")
    kernel = _gaussian_window()
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2

    def local_mean(img):
        win = sliding_window_view(img, (11, 11))
        return np.tensordot(win, kernel, axes=([2, 3], [0, 1]))

    values = []
    for x, y in zip(pred, target):
        mu_x, mu_y = local_mean(x), local_mean(y)
        mu_xx, mu_yy, mu_xy = local_mean(x * x), local_mean(y * y), local_mean(x * y)
        var_x = mu_xx - mu_x * mu_x
        var_y = mu_yy - mu_y * mu_y
        cov = mu_xy - mu_x * mu_y
        num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
        den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
        values.append(np.mean(num / den))
    return float(np.mean(values))


def metric_record(pred: np.ndarray, target: np.ndarray, scope: str,
                  data_range: float = 2.0) -> dict:
    """One JSON-ready metrics entry: {"mae", "psnr", "ssim", "scope"}."""
    return {
        "mae": mae(pred, target),
        "psnr": psnr(pred, target, data_range),
        "ssim": ssim(pred, target, data_range),
        "scope": scope,
    }
