"""Volumetric spatial adapter: a bottlenecked 3-D convolutional residual branch.

The adapter output is h + GELU(Conv3D(Norm(h) @ W_down)) @ W_up, where the
convolution is depthwise over the 3-D token grid. W_up starts at zero so a
freshly initialized adapter is exactly the identity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError


@dataclass
class VsaParams:
    """Learnable state of one adapter; channel width C, bottleneck C/r."""

    w_down: Tensor  # [C, C/r]
    conv_kernel: Tensor  # [C/r, kd, kh, kw]
    w_up: Tensor  # [C/r, C]
    gamma: Tensor  # [C]
    beta: Tensor  # [C]
    reduction: int


def init_vsa_params(
    channels: int,
    reduction: int,
    rng: np.random.Generator,
    dtype=np.float32,
    kernel: tuple[int, int, int] = (3, 3, 3),
) -> VsaParams:
    if channels % reduction != 0:
        raise ConfigError(
            f"channels ({channels}) must be divisible by reduction ({reduction})"
        )
    hidden = channels // reduction
    scale = 1.0 / np.sqrt(channels)
    return VsaParams(
        w_down=Tensor(
            (rng.standard_normal((channels, hidden)) * scale).astype(dtype),
            requires_grad=True,
        ),
        conv_kernel=Tensor(
            (rng.standard_normal((hidden,) + kernel) * (1.0 / np.sqrt(np.prod(kernel)))).astype(dtype),
            requires_grad=True,
        ),
        w_up=Tensor(np.zeros((hidden, channels), dtype=dtype), requires_grad=True),
        gamma=Tensor(np.ones(channels, dtype=dtype), requires_grad=True),
        beta=Tensor(np.zeros(channels, dtype=dtype), requires_grad=True),
        reduction=reduction,
    )


def vsa_forward(h: Tensor, grid: tuple[int, int, int], params: VsaParams) -> Tensor:
    """Apply the adapter to a token matrix [tokens, C].

    `grid` = (D, Hp, Wp) gives the 3-D patch layout of the token axis in
    (depth, height, width) row-major order; tokens must equal D*Hp*Wp.
    """
    d, hp, wp = grid
    tokens, channels = h.shape
    if tokens != d * hp * wp:
        raise ShapeError(
            f"token count {tokens} does not match grid {grid} (= {d * hp * wp})"
        )
    hidden = channels // params.reduction
    z = ad.layer_norm(h, params.gamma, params.beta)
    z = ad.matmul(z, params.w_down)  # [tokens, C/r]
    zg = ad.reshape(ad.transpose(z), (hidden, d, hp, wp))
    zc = ad.depthwise_conv3d(zg, params.conv_kernel)
    zt = ad.transpose(ad.reshape(zc, (hidden, tokens)))
    branch = ad.matmul(ad.gelu(zt), params.w_up)
    return ad.add(h, branch)


def vsa_param_count(params: VsaParams) -> int:
    return sum(
        t.size
        for t in (params.w_down, params.conv_kernel, params.w_up, params.gamma, params.beta)
    )
