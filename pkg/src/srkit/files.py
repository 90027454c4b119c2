"""Loading images and feature files for the command-line tools."""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import FormatError
from .loss import FeatureStack
from .tensorfile import read_tensor


@dataclass
class LoadedImage:
    data: np.ndarray  # H x W x C float64, raw values
    peak: float  # value that represents full scale
    source_dtype: str


def _peak_for(dtype: np.dtype, bits: int | None) -> float:
    if dtype == np.uint8:
        return 255.0
    if dtype == np.uint16:
        return float(2**bits - 1) if bits else 65535.0
    if np.issubdtype(dtype, np.integer):
        return float(np.iinfo(dtype).max)
    return 1.0


def _read_png(path):
    import cv2

    arr = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if arr is None:
        raise FormatError(f"cannot decode image {path}")
    if arr.ndim == 3:
        order = {3: cv2.COLOR_BGR2RGB, 4: cv2.COLOR_BGRA2RGBA}.get(arr.shape[2])
        if order is not None:
            arr = cv2.cvtColor(arr, order)
    return arr


def _read_tiff(path):
    import tifffile

    try:
        arr = tifffile.imread(str(path))
    except (ValueError, tifffile.TiffFileError) as exc:
        raise FormatError(f"cannot decode TIFF {path}: {exc}") from None
    # planar multiband files come back band-first
    if arr.ndim == 3 and arr.shape[0] <= 16 and arr.shape[0] < arr.shape[2]:
        arr = np.moveaxis(arr, 0, -1)
    return arr


def load_image(path, bits: int | None = None) -> LoadedImage:
    """Read PNG, TIFF (8/16-bit) or a portable tensor file as float64 H x W x C."""
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise FileNotFoundError(f"no such file: {path}")
    ext = os.path.splitext(path)[1].lower()
    if ext in (".png",):
        arr = _read_png(path)
    elif ext in (".tif", ".tiff"):
        arr = _read_tiff(path)
    else:
        arr = read_tensor(path)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise FormatError(f"{path}: expected a 2-D or 3-D image, got {arr.ndim}-D")
    return LoadedImage(arr.astype(np.float64), _peak_for(arr.dtype, bits), str(arr.dtype))


def load_matrix(path) -> np.ndarray:
    arr = read_tensor(path).astype(np.float64)
    return arr[:, None] if arr.ndim == 1 else arr


def load_feature_stack(directory) -> FeatureStack:
    """A directory of ``layer_<i>.srtn`` (H x W x C) and optional ``weights_<i>.srtn`` (C)."""
    directory = os.fspath(directory)
    if not os.path.isdir(directory):
        raise FileNotFoundError(f"feature stack directory not found: {directory}")
    layers, weights = [], []
    i = 0
    while os.path.isfile(os.path.join(directory, f"layer_{i}.srtn")):
        f = read_tensor(os.path.join(directory, f"layer_{i}.srtn")).astype(np.float64)
        if f.ndim == 2:
            f = f[:, :, None]
        wpath = os.path.join(directory, f"weights_{i}.srtn")
        w = read_tensor(wpath).astype(np.float64) if os.path.isfile(wpath) else np.ones(f.shape[-1])
        layers.append(f)
        weights.append(w)
        i += 1
    if not layers:
        raise FormatError(f"{directory} contains no layer_0.srtn")
    return FeatureStack(layers, weights)
