"""Desk-scale stand-in corpus built from the photographs bundled with scikit-image.

    python -m diffnet_lab.reference_corpus OUT_DIR [--downscale 2]

Each image is converted to grayscale (same luma weights as the PPM reader),
block-averaged by ``downscale`` to raise the detail per pixel, and written as
a 16-bit PGM. Needs the optional ``scikit-image`` dependency.
"""

import argparse
import os

import numpy as np

from . import pnm

NAMES = (
    "astronaut", "brick", "camera", "cat", "chelsea", "coffee", "coins", "grass",
    "gravel", "hubble_deep_field", "immunohistochemistry", "moon", "rocket",
)


def _gray(a):
    a = np.asarray(a)
    scale = 65535.0 if a.dtype == np.uint16 else 255.0 if a.dtype == np.uint8 else 1.0
    a = a.astype(np.float64) / scale
    if a.ndim == 3:
        a = pnm.LUMA[0] * a[..., 0] + pnm.LUMA[1] * a[..., 1] + pnm.LUMA[2] * a[..., 2]
    return a


def block_mean(u, factor):
    if factor == 1:
        return u
    h, w = (u.shape[0] // factor) * factor, (u.shape[1] // factor) * factor
    return u[:h, :w].reshape(h // factor, factor, w // factor, factor).mean(axis=(1, 3))


def reference_images(downscale=2):
    from skimage import data as skdata

    return {name: block_mean(_gray(getattr(skdata, name)()), downscale) for name in NAMES}


def write_reference_corpus(out_dir, downscale=2):
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for name, img in reference_images(downscale).items():
        path = os.path.join(out_dir, f"{name}.pgm")
        pnm.save_image(path, img)
        paths.append(path)
    return paths


def main(argv=None):
    parser = argparse.ArgumentParser(description="write the scikit-image stand-in corpus as PGMs")
    parser.add_argument("out_dir")
    parser.add_argument("--downscale", type=int, default=2)
    args = parser.parse_args(argv)
    for path in write_reference_corpus(args.out_dir, args.downscale):
        print(path)


if __name__ == "__main__":
    main()
