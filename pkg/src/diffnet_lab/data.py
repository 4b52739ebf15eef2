"""Training data: synthetic disks, natural-image patches, degradation and manifests.

A degraded sample is ``forward(clean) + eta`` with ``eta ~ N(0, sigma^2)`` and
``sigma = noise_pct / 100 * (max - min)`` of the noise-free forward output.
Noise is drawn from a per-sample seed and never clipped.
"""

import os
from dataclasses import dataclass, field

import numpy as np

from . import pnm
from .diffusion import DiffusionConfig, DiffusionMode, Scheme, evolve, gaussian_convolve
from .grid import as_image

GENERATOR_VERSION = "1"
IMAGE_SUFFIXES = (".pgm", ".ppm")


@dataclass(frozen=True)
class GaussianBlur:
    """Forward model ``u -> G * u`` (Green's operator of the heat equation at time T)."""

    T: float = 1.0

    def __post_init__(self):
        if not self.T >= 0:
            raise ValueError(f"blur time must be nonnegative, got {self.T}")

    def apply(self, u):
        return gaussian_convolve(u, self.T)


def forward_apply(forward, u):
    if isinstance(forward, DiffusionConfig):
        return evolve(u, forward, Scheme.EXPLICIT)
    return forward.apply(u)


def gen_disks(count, size, seed):
    """``count`` images of one anti-aliased disk on a black background.

    Radius ~ U[size/12, size/3], contrast ~ U[0.2, 1]; the centre keeps a
    margin of radius + 1 pixels so the disk never touches the frame.
    """
    if size < 16:
        raise ValueError(f"disk images need size >= 16, got {size}")
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    images = []
    for i in range(count):
        rng = np.random.default_rng([seed, i])
        r = rng.uniform(size / 12, size / 3)
        contrast = rng.uniform(0.2, 1.0)
        cy, cx = rng.uniform(r + 1, size - r - 1, size=2)
        dist = np.hypot(yy - cy, xx - cx)
        # linear coverage ramp one pixel wide across the rim
        images.append(contrast * np.clip(r - dist + 0.5, 0.0, 1.0))
    return images


def sample_seed(seed, index):
    """64-bit per-sample seed derived from a run seed and a sample index."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class SamplePair:
    clean: np.ndarray
    degraded: np.ndarray
    noise_pct: float
    seed: int


def add_noise(u, noise_pct, seed):
    """``u + eta`` with sigma = noise_pct/100 of the range of ``u``; no clipping."""
    if noise_pct < 0:
        raise ValueError(f"noise_pct must be nonnegative, got {noise_pct}")
    if noise_pct == 0:
        return u
    sigma = noise_pct / 100.0 * (u.max() - u.min())
    return u + np.random.default_rng(seed).normal(0.0, sigma, size=u.shape)


def degrade(clean, forward, noise_pct, seed):
    if noise_pct < 0:
        raise ValueError(f"noise_pct must be nonnegative, got {noise_pct}")
    return add_noise(forward_apply(forward, as_image(clean)), noise_pct, seed)


def make_pairs(images, forward, noise_pct, seed):
    pairs = []
    for i, clean in enumerate(images):
        s = sample_seed(seed, i)
        clean = as_image(clean, copy=True)
        pairs.append(SamplePair(clean, degrade(clean, forward, noise_pct, s), float(noise_pct), s))
    return pairs


def load_corpus(directory):
    """All PGM/PPM files of a directory (sorted by name) as grayscale images."""
    names = sorted(n for n in os.listdir(directory) if n.lower().endswith(IMAGE_SUFFIXES))
    if not names:
        raise FileNotFoundError(f"no .pgm/.ppm images in {directory}")
    return [pnm.load_image(os.path.join(directory, n)) for n in names]


def extract_patches(images, size, count, seed, split="train", test_fraction=0.2):
    """Random ``size`` x ``size`` patches from one horizontal band of each image.

    The top ``1 - test_fraction`` of every image's rows feeds the train split
    and the bottom band feeds the test split, so the two never overlap.
    Images whose band is too small for a patch are skipped.
    """
    if split not in ("train", "test"):
        raise ValueError(f"split must be 'train' or 'test', got {split!r}")
    bands = []
    for img in images:
        cut = int(np.floor(img.shape[0] * (1 - test_fraction)))
        band = img[:cut] if split == "train" else img[cut:]
        if band.shape[0] >= size and band.shape[1] >= size:
            bands.append(band)
    if not bands:
        raise ValueError(f"no image has a {split} band large enough for {size}x{size} patches")
    rng = np.random.default_rng([seed, 0 if split == "train" else 1])
    patches = []
    for _ in range(count):
        band = bands[rng.integers(len(bands))]
        i = rng.integers(band.shape[0] - size + 1)
        j = rng.integers(band.shape[1] - size + 1)
        patches.append(band[i:i + size, j:j + size].copy())
    return patches


@dataclass
class Dataset:
    train: list
    test: list
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.train:
            raise ValueError("dataset has no training samples")

    @staticmethod
    def stack(pairs, dtype=np.float64):
        x = np.stack([p.degraded for p in pairs]).astype(dtype)
        y = np.stack([p.clean for p in pairs]).astype(dtype)
        return x, y

    def subset(self, n_train):
        return Dataset(self.train[:n_train], self.test, dict(self.meta, n_train=n_train))


def disk_dataset(n_train=256, n_test=64, size=64, blur_T=1.0, noise_pct=0.0, seed=0):
    forward = GaussianBlur(blur_T)
    train = make_pairs(gen_disks(n_train, size, seed), forward, noise_pct, seed)
    test = make_pairs(gen_disks(n_test, size, seed + 1), forward, noise_pct, seed + 1)
    return Dataset(train, test, {"scenario": "disks", "size": size, "blur_T": blur_T, "noise_pct": noise_pct})


def corpus_dataset(images, n_train=2000, n_test=200, size=48, forward=DiffusionConfig(), noise_pct=0.0, seed=0):
    train = make_pairs(extract_patches(images, size, n_train, seed, "train"), forward, noise_pct, seed)
    test = make_pairs(extract_patches(images, size, n_test, seed, "test"), forward, noise_pct, seed + 1)
    return Dataset(train, test, {"scenario": "corpus", "size": size, "noise_pct": noise_pct})


# manifests ------------------------------------------------------------------

def forward_to_dict(forward):
    if isinstance(forward, DiffusionConfig):
        return {"forward": "diffusion", "mode": forward.mode.value, "dt": repr(forward.dt),
                "steps": str(forward.steps), "lambda": repr(forward.lam)}
    return {"forward": "blur", "blur_T": repr(forward.T)}


def forward_from_dict(d):
    kind = d.get("forward")
    if kind == "diffusion":
        return DiffusionConfig(dt=float(d["dt"]), steps=int(d["steps"]), lam=float(d["lambda"]),
                               mode=DiffusionMode(d["mode"]))
    if kind == "blur":
        return GaussianBlur(float(d["blur_T"]))
    raise ValueError(f"unknown forward model {kind!r}")


@dataclass
class Manifest:
    forward: object
    noise_pct: float
    samples: dict  # split -> list of (path, seed, noise_pct)
    extra: dict = field(default_factory=dict)
    version: str = GENERATOR_VERSION

    def write(self, path):
        lines = [f"generator_version={self.version}", f"noise_pct={self.noise_pct!r}"]
        lines += [f"{k}={v}" for k, v in forward_to_dict(self.forward).items()]
        lines += [f"{k}={v}" for k, v in sorted(self.extra.items())]
        for split in ("train", "test"):
            for p, s, n in self.samples.get(split, []):
                lines.append(f"{split}={p},{s},{n!r}")
        tmp = f"{path}.tmp"
        with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
        os.replace(tmp, path)

    @classmethod
    def read(cls, path):
        header, samples = {}, {"train": [], "test": []}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line or line.startswith("#"):
                    continue
                key, sep, value = line.partition("=")
                if not sep:
                    raise ValueError(f"{path}:{lineno}: expected key=value")
                if key in samples:
                    p, s, n = value.rsplit(",", 2)
                    samples[key].append((p, int(s), float(n)))
                else:
                    header[key] = value
        forward = forward_from_dict(header)
        known = {"generator_version", "noise_pct", "forward", "mode", "dt", "steps", "lambda", "blur_T"}
        extra = {k: v for k, v in header.items() if k not in known}
        return cls(forward, float(header["noise_pct"]), samples, extra, header.get("generator_version", "?"))

    def regenerate(self, base_dir):
        """Rebuild the dataset from clean image files and per-sample seeds."""
        splits = {}
        for split, records in self.samples.items():
            pairs = []
            for p, s, n in records:
                clean = pnm.load_image(os.path.join(base_dir, p))
                pairs.append(SamplePair(clean, degrade(clean, self.forward, n, s), n, s))
            splits[split] = pairs
        return Dataset(splits["train"], splits["test"], dict(self.extra))


def write_dataset(out_dir, clean_train, clean_test, forward, noise_pct, seed, extra=None):
    """Store clean images as 16-bit PGMs plus a manifest; return the regenerated dataset.

    Degraded images are computed from the quantised files, so regeneration from
    the manifest reproduces them bit for bit.
    """
    os.makedirs(out_dir, exist_ok=True)
    samples = {}
    for split, images, split_seed in (("train", clean_train, seed), ("test", clean_test, seed + 1)):
        os.makedirs(os.path.join(out_dir, split), exist_ok=True)
        records = []
        for i, img in enumerate(images):
            rel = f"{split}/{i:05d}.pgm"
            pnm.save_image(os.path.join(out_dir, rel), img)
            records.append((rel, sample_seed(split_seed, i), float(noise_pct)))
        samples[split] = records
    manifest = Manifest(forward, float(noise_pct), samples, dict(extra or {}, seed=seed))
    manifest.write(os.path.join(out_dir, "manifest.txt"))
    return manifest.regenerate(out_dir)
