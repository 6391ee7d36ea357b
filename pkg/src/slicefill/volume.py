"""Volume data model, missing-mask sampling, preprocessing, phantoms, file formats.

A `Volume` is a stack of in-plane slices [N, H, W] with a per-slice
availability mask. Zero-padded slices live in a separate `pad_mask` and are
never counted as available or missing; they are excluded from losses,
metrics, and graph nodes downstream.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractError, DegenerateInputError, FormatError

VOLUME_MAGIC = b"SGCV"
MASK_MAGIC = b"SGCM"
FORMAT_VERSION = 1


@dataclass
class Volume:
    """Intensity grid [N, H, W] plus per-slice availability and padding masks."""

    data: np.ndarray
    slice_mask: np.ndarray  # bool [N], True = available
    pad_mask: np.ndarray | None = None  # bool [N], True = zero padding
    norm_range: tuple[float, float] | None = None  # (min, max) of the raw data

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 3:
            raise ConfigError(f"volume data must be [N,H,W], got shape {self.data.shape}")
        n = self.data.shape[0]
        self.slice_mask = np.asarray(self.slice_mask, dtype=bool).copy()
        if self.slice_mask.shape != (n,):
            raise ConfigError(f"slice_mask must have shape ({n},), got {self.slice_mask.shape}")
        if self.pad_mask is None:
            self.pad_mask = np.zeros(n, dtype=bool)
        else:
            self.pad_mask = np.asarray(self.pad_mask, dtype=bool).copy()
            if self.pad_mask.shape != (n,):
                raise ConfigError(f"pad_mask must have shape ({n},), got {self.pad_mask.shape}")
        # pad slices are neither available nor missing
        self.slice_mask[self.pad_mask] = False
        if not np.all(np.isfinite(self.data)):
            raise ConfigError("volume data contains non-finite values")

    @property
    def n_slices(self) -> int:
        return self.data.shape[0]

    @property
    def n_available(self) -> int:
        return int(np.count_nonzero(self.slice_mask & ~self.pad_mask))

    @property
    def n_missing(self) -> int:
        return int(np.count_nonzero(~self.slice_mask & ~self.pad_mask))

    @property
    def valid_mask(self) -> np.ndarray:
        """Non-pad slices: the ones that count for losses and metrics."""
        return ~self.pad_mask


@dataclass(frozen=True)
class MissingSpec:
    """Missing-slice sampling configuration: eta = P/N."""

    eta: float
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.eta < 1.0:
            raise ConfigError(f"eta must lie in [0, 1), got {self.eta}")


@dataclass(frozen=True)
class PhantomParams:
    """Synthetic-volume generator parameters."""

    n_slices: int = 12
    height: int = 32
    width: int = 32
    n_blobs: int = 8
    smoothness: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.smoothness <= 0:
            raise ConfigError(f"smoothness must be > 0, got {self.smoothness}")
        if min(self.n_slices, self.height, self.width) < 1:
            raise ConfigError("phantom dimensions must be positive")


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def sample_mask(n_slices: int, eta: float, rng: np.random.Generator) -> np.ndarray:
    """Draw a fresh availability mask with exactly round(eta * N) missing slices."""
    if not 0.0 <= eta < 1.0:
        raise ConfigError(f"eta must lie in [0, 1), got {eta}")
    p = round_half_up(eta * n_slices)
    if p >= n_slices:
        raise ConfigError(
            f"eta={eta} with N={n_slices} leaves no available slice (P={p})"
        )
    mask = np.ones(n_slices, dtype=bool)
    missing = rng.choice(n_slices, size=p, replace=False)
    mask[missing] = False
    return mask


def sample_missing_mask(n_slices: int, spec: MissingSpec) -> np.ndarray:
    """Availability mask for `spec` (True = available); seeded by spec.rng_seed."""
    return sample_mask(n_slices, spec.eta, np.random.default_rng(spec.rng_seed))


def minmax_normalize(raw: np.ndarray) -> Volume:
    """Affine map of a raw grid onto [-1, 1]: min -> -1, max -> +1."""
    raw = np.asarray(raw, dtype=np.float32)
    lo = float(raw.min())
    hi = float(raw.max())
    if hi <= lo:
        raise DegenerateInputError(
            f"cannot normalize a constant volume (min == max == {lo})"
        )
    data = (raw - lo) * (2.0 / (hi - lo)) - 1.0
    return Volume(
        data=data.astype(np.float32),
        slice_mask=np.ones(raw.shape[0], dtype=bool),
        norm_range=(lo, hi),
    )


def denormalize(volume: Volume) -> np.ndarray:
    """Inverse of minmax_normalize using the stored (min, max)."""
    if volume.norm_range is None:
        raise ContractError("volume has no stored normalization range")
    lo, hi = volume.norm_range
    return ((volume.data + 1.0) * ((hi - lo) / 2.0) + lo).astype(np.float32)


def zero_pad(volume: Volume, target_n: int) -> Volume:
    """Pad with zero slices at the high-index end up to target_n slices."""
    n = volume.n_slices
    if target_n < n:
        raise ContractError(f"target_n={target_n} is smaller than N={n}")
    if target_n == n:
        return volume
    extra = target_n - n
    data = np.concatenate(
        [volume.data, np.zeros((extra,) + volume.data.shape[1:], dtype=np.float32)]
    )
    slice_mask = np.concatenate([volume.slice_mask, np.zeros(extra, dtype=bool)])
    pad_mask = np.concatenate([volume.pad_mask, np.ones(extra, dtype=bool)])
    return Volume(data, slice_mask, pad_mask, volume.norm_range)


def augment(volume: Volume, rng: np.random.Generator) -> Volume:
    """Random in-plane flip and 90-degree rotation, identical for all slices.

    Each of the two transforms fires with probability 0.5; the rotation count
    k is uniform in 0..3. Non-square volumes only rotate by multiples of 180
    degrees. Draw order is fixed (flip, then rotation) for reproducibility.
    """
    data = volume.data
    if rng.random() < 0.5:
        data = data[:, :, ::-1]
    if rng.random() < 0.5:
        k = int(rng.integers(0, 4))
        if data.shape[1] != data.shape[2] and k % 2 == 1:
            k = (k + 1) % 4
        data = np.rot90(data, k, axes=(1, 2))
    return replace(volume, data=np.ascontiguousarray(data))


def phantom_field(params: PhantomParams) -> np.ndarray:
    """Raw synthetic anatomy: a sum of drifting 3-D Gaussian blobs.

    Each blob has a through-plane Gaussian intensity profile and an in-plane
    center that drifts linearly with slice index, so adjacent slices stay
    highly correlated while through-plane intensity varies nonlinearly.
    Deterministic given params.seed.
    """
    rng = np.random.default_rng(params.seed)
    n, h, w = params.n_slices, params.height, params.width
    z = np.arange(n, dtype=np.float64)[:, None, None]
    y = np.arange(h, dtype=np.float64)[None, :, None]
    x = np.arange(w, dtype=np.float64)[None, None, :]
    scale = min(h, w) / 32.0
    vol = np.zeros((n, h, w), dtype=np.float64)
    for _ in range(params.n_blobs):
        amp = rng.uniform(0.4, 1.0)
        cz = rng.uniform(0.15, 0.85) * n
        sz = params.smoothness * 0.75 * rng.uniform(0.8, 1.3)
        cy = rng.uniform(0.25, 0.75) * h
        cx = rng.uniform(0.25, 0.75) * w
        dy = rng.uniform(-1.4, 1.4) * scale
        dx = rng.uniform(-1.4, 1.4) * scale
        sig = params.smoothness * 1.7 * rng.uniform(0.8, 1.6) * scale
        cy_z = cy + dy * (z - cz)
        cx_z = cx + dx * (z - cz)
        profile = np.exp(-0.5 * ((z - cz) / sz) ** 2)
        blob = np.exp(-0.5 * (((y - cy_z) ** 2 + (x - cx_z) ** 2) / sig**2))
        vol += amp * profile * blob
    return vol.astype(np.float32)


def phantom_generate(params: PhantomParams) -> Volume:
    """Normalized synthetic volume (the complete ground truth, all available)."""
    return minmax_normalize(phantom_field(params))


# ---------------------------------------------------------------------------
# file formats (all integers little-endian)
# ---------------------------------------------------------------------------

def save_volume(volume: Volume, path: str | Path) -> None:
    """Volume file: "SGCV", u32 version, u32 N, u32 H, u32 W, N*H*W f32."""
    n, h, w = volume.data.shape
    payload = volume.data.astype("<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(VOLUME_MAGIC)
        fh.write(struct.pack("<IIII", FORMAT_VERSION, n, h, w))
        fh.write(payload)


def load_volume(path: str | Path) -> Volume:
    blob = Path(path).read_bytes()
    if len(blob) < 4 or blob[:4] != VOLUME_MAGIC:
        raise FormatError(
            f"bad magic {blob[:4]!r}, expected {VOLUME_MAGIC.decode()!r}", offset=0
        )
    if len(blob) < 20:
        raise FormatError("truncated header", offset=len(blob))
    version, n, h, w = struct.unpack_from("<IIII", blob, 4)
    if version != FORMAT_VERSION:
        raise FormatError(
            f"unsupported volume format version {version}, expected {FORMAT_VERSION}",
            offset=4,
        )
    expected = n * h * w * 4
    if len(blob) - 20 != expected:
        raise FormatError(
            f"payload length {len(blob) - 20} does not match header N*H*W*4 = {expected}",
            offset=20,
        )
    data = np.frombuffer(blob, dtype="<f4", offset=20).reshape(n, h, w)
    return Volume(data.copy(), slice_mask=np.ones(n, dtype=bool))


def save_mask(mask: np.ndarray, path: str | Path) -> None:
    """Mask file: "SGCM", u32 version, u32 N, N bytes (1=available, 0=missing)."""
    mask = np.asarray(mask, dtype=bool)
    with open(path, "wb") as fh:
        fh.write(MASK_MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, mask.size))
        fh.write(mask.astype(np.uint8).tobytes())


def load_mask(path: str | Path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if len(blob) < 4 or blob[:4] != MASK_MAGIC:
        raise FormatError(
            f"bad magic {blob[:4]!r}, expected {MASK_MAGIC.decode()!r}", offset=0
        )
    if len(blob) < 12:
        raise FormatError("truncated header", offset=len(blob))
    version, n = struct.unpack_from("<II", blob, 4)
    if version != FORMAT_VERSION:
        raise FormatError(
            f"unsupported mask format version {version}, expected {FORMAT_VERSION}",
            offset=4,
        )
    if len(blob) - 12 != n:
        raise FormatError(
            f"payload length {len(blob) - 12} does not match header N = {n}", offset=12
        )
    raw = np.frombuffer(blob, dtype=np.uint8, offset=12)
    if not np.all((raw == 0) | (raw == 1)):
        bad = int(np.argmax((raw != 0) & (raw != 1)))
        raise FormatError(f"mask byte must be 0 or 1, got {raw[bad]}", offset=12 + bad)
    return raw.astype(bool)


def attach_mask(volume: Volume, mask: np.ndarray) -> Volume:
    """Volume with the given availability mask (pads stay pads)."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (volume.n_slices,):
        raise ConfigError(
            f"mask length {mask.shape} does not match volume N={volume.n_slices}"
        )
    return replace(volume, slice_mask=mask.copy())
