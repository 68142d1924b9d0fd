"""Alternative input representations: grayscale, YCbCr and Lab channels, 3x3 Laws maps."""
from __future__ import annotations

from enum import Enum

import numpy as np
from skimage.color import rgb2lab

from .data_io import LabeledImageSet

LUMA = np.array([0.299, 0.587, 0.114])
# full-range BT.601, chroma offset by 0.5
YCBCR = np.array(
    [
        [0.299, 0.587, 0.114],
        [-0.168736, -0.331264, 0.5],
        [0.5, -0.418688, -0.081312],
    ]
)
YCBCR_OFFSET = np.array([0.0, 0.5, 0.5])

L3 = np.array([1.0, 2.0, 1.0])
E3 = np.array([-1.0, 0.0, 1.0])
S3 = np.array([-1.0, 2.0, -1.0])
_LAWS_PAIRS = [
    (L3, L3), (E3, E3), (S3, S3), (L3, S3), (S3, L3),
    (L3, E3), (E3, L3), (S3, E3), (E3, S3),
]
LAWS_KERNELS = {f"L{i + 1}": np.outer(a, b) for i, (a, b) in enumerate(_LAWS_PAIRS)}


class InputForm(str, Enum):
    RGB = "RGB"
    GRAY = "GRAY"
    YCBCR_Y = "YCBCR_Y"
    YCBCR_CB = "YCBCR_CB"
    YCBCR_CR = "YCBCR_CR"
    LAB_L = "LAB_L"
    LAB_A = "LAB_A"
    LAB_B = "LAB_B"
    LAWS_L1 = "LAWS_L1"
    LAWS_L2 = "LAWS_L2"
    LAWS_L3 = "LAWS_L3"
    LAWS_L4 = "LAWS_L4"
    LAWS_L5 = "LAWS_L5"
    LAWS_L6 = "LAWS_L6"
    LAWS_L7 = "LAWS_L7"
    LAWS_L8 = "LAWS_L8"
    LAWS_L9 = "LAWS_L9"

    @property
    def channel_count(self) -> int:
        return 3 if self is InputForm.RGB else 1


def _require_rgb(data: LabeledImageSet):
    if data.channels != 3:
        raise ValueError(f"expected 3-channel images, got {data.channels}")


def to_grayscale(data: LabeledImageSet) -> LabeledImageSet:
    if data.channels == 1:
        return data
    _require_rgb(data)
    gray = np.einsum("c,nchw->nhw", LUMA, data.images)[:, None]
    return data.with_images(np.clip(gray, 0.0, 1.0), name=f"{data.name}:GRAY")


def to_ycbcr(data: LabeledImageSet) -> tuple[LabeledImageSet, LabeledImageSet, LabeledImageSet]:
    _require_rgb(data)
    ycc = np.einsum("kc,nchw->nkhw", YCBCR, data.images) + YCBCR_OFFSET[None, :, None, None]
    ycc = np.clip(ycc, 0.0, 1.0)
    return tuple(
        data.with_images(ycc[:, i : i + 1].copy(), name=f"{data.name}:{tag}")
        for i, tag in enumerate(("YCBCR_Y", "YCBCR_CB", "YCBCR_CR"))
    )


def to_lab(data: LabeledImageSet) -> tuple[LabeledImageSet, LabeledImageSet, LabeledImageSet]:
    """sRGB -> CIELAB (D65), rescaled so L, a and b all land in [0, 1]."""
    _require_rgb(data)
    lab = rgb2lab(np.moveaxis(data.images, 1, -1), illuminant="D65")
    lab = np.moveaxis(lab, -1, 1)
    scaled = np.empty_like(lab)
    scaled[:, 0] = lab[:, 0] / 100.0
    scaled[:, 1:] = (lab[:, 1:] + 128.0) / 255.0
    scaled = np.clip(scaled, 0.0, 1.0)
    return tuple(
        data.with_images(scaled[:, i : i + 1].copy(), name=f"{data.name}:{tag}")
        for i, tag in enumerate(("LAB_L", "LAB_A", "LAB_B"))
    )


def correlate_same(images: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """3x3 cross-correlation of (n, h, w) images, zero padded, same size."""
    kh, kw = kernel.shape
    ph, pw = kh // 2, kw // 2
    h, w = images.shape[-2:]
    padded = np.pad(images, ((0, 0), (ph, ph), (pw, pw)))
    out = np.zeros(images.shape, dtype=np.float64)
    for u in range(kh):
        for v in range(kw):
            if kernel[u, v] != 0.0:
                out += kernel[u, v] * padded[:, u : u + h, v : v + w]
    return out


def minmax_rescale(maps: np.ndarray) -> np.ndarray:
    """Per-image min-max rescale to [0, 1]; flat images map to zeros."""
    lo = maps.min(axis=(-2, -1), keepdims=True)
    span = maps.max(axis=(-2, -1), keepdims=True) - lo
    safe = np.where(span > 0, span, 1.0)
    return np.where(span > 0, (maps - lo) / safe, 0.0)


def laws_filter(data: LabeledImageSet, kernel_id: str, rescale: bool = True) -> LabeledImageSet:
    if data.channels != 1:
        raise ValueError("Laws filtering needs single-channel input; convert to grayscale first")
    key = kernel_id.removeprefix("LAWS_")
    if key not in LAWS_KERNELS:
        raise ValueError(f"unknown Laws kernel {kernel_id!r}")
    maps = correlate_same(data.images[:, 0], LAWS_KERNELS[key])
    if rescale:
        maps = minmax_rescale(maps)
    return data.with_images(maps[:, None], name=f"{data.name}:LAWS_{key}")


def apply_form(data: LabeledImageSet, form: InputForm | str) -> LabeledImageSet:
    """Produce the named input representation of `data`."""
    form = InputForm(form)
    if form is InputForm.RGB:
        _require_rgb(data)
        return data
    if form is InputForm.GRAY:
        return to_grayscale(data)
    if form.value.startswith("YCBCR"):
        return to_ycbcr(data)[["YCBCR_Y", "YCBCR_CB", "YCBCR_CR"].index(form.value)]
    if form.value.startswith("LAB"):
        return to_lab(data)[["LAB_L", "LAB_A", "LAB_B"].index(form.value)]
    return laws_filter(to_grayscale(data), form.value)
