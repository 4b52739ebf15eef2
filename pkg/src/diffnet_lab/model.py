"""Linear diffusion network and nonlinear DiffNet.

DiffNet layer k estimates five filter planes from the current image with a
small CNN and applies them as an explicit stencil update::

    zeta = estimator_k(F)                      # (B, H, W, 5)
    F <- F - dt_k * stencil5(F, zeta)

The estimator's fifth channel is the stencil's center coefficient, so the
conventional diagonal filter zeta5 is its negation.
"""

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

HIDDEN_CHANNELS = 32
FILTER_CHANNELS = 5


@dataclass(frozen=True)
class EstimatorConfig:
    depth: int = 4

    def __post_init__(self):
        if self.depth < 2:
            raise ValueError(f"estimator depth must be >= 2, got {self.depth}")

    def channels(self):
        """(in, out) channel pairs of each convolution."""
        dims = [1] + [HIDDEN_CHANNELS] * (self.depth - 1) + [FILTER_CHANNELS]
        return list(zip(dims[:-1], dims[1:]))


@dataclass(frozen=True)
class DiffNetConfig:
    diffusion_layers: int = 5
    estimator: EstimatorConfig = EstimatorConfig()
    learn_dt: bool = True
    final_relu: bool = True
    dt_init: float = 0.1

    def __post_init__(self):
        if self.diffusion_layers < 1:
            raise ValueError("need at least one diffusion layer")


@dataclass(frozen=True)
class LinearDiffNetConfig:
    diffusion_layers: int = 3
    image_shape: tuple = (64, 64)
    learn_dt: bool = False
    dt_init: float = 0.1

    def __post_init__(self):
        if self.diffusion_layers < 1:
            raise ValueError("need at least one diffusion layer")


def estimator_param_count(cfg):
    k = cfg.depth
    h, o = HIDDEN_CHANNELS, FILTER_CHANNELS
    return 9 * (h + h * o + h * h * (k - 2)) + h * (k - 1) + o


def count_params(cfg):
    """Closed-form trainable parameter count for any of the three configs."""
    if isinstance(cfg, EstimatorConfig):
        return estimator_param_count(cfg)
    if isinstance(cfg, DiffNetConfig):
        return cfg.diffusion_layers * (estimator_param_count(cfg.estimator) + int(cfg.learn_dt))
    if isinstance(cfg, LinearDiffNetConfig):
        h, w = cfg.image_shape
        return cfg.diffusion_layers * (4 * h * w + int(cfg.learn_dt))
    raise TypeError(f"unsupported config {type(cfg).__name__}")


class _Network:
    def __init__(self, cfg, params):
        self.cfg = cfg
        self.params = params

    def parameters(self):
        return list(self.params.values())

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def num_parameters(self):
        return sum(p.value.size for p in self.params.values())

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def state_dict(self):
        return OrderedDict((name, p.value.copy()) for name, p in self.params.items())

    def load_state_dict(self, arrays):
        missing = set(self.params) ^ set(arrays)
        if missing:
            raise ValueError(f"parameter names differ: {sorted(missing)}")
        for name, p in self.params.items():
            value = np.asarray(arrays[name])
            if value.shape != p.value.shape:
                raise ValueError(f"{name}: shape {value.shape}, expected {p.value.shape}")
            p.value = value.astype(p.dtype, copy=True)
            p.zero_grad()

    def _input(self, u):
        if isinstance(u, ad.Tensor):
            return u
        u = np.asarray(u, dtype=self.dtype)
        if u.ndim == 2:
            u = u[None, :, :, None]
        elif u.ndim == 3:
            u = u[..., None]
        return ad.Tensor(np.ascontiguousarray(u))


class DiffNet(_Network):
    """Nonlinear diffusion network with per-layer CNN filter estimators."""

    def __init__(self, cfg=DiffNetConfig(), params=None, *, seed=0, dtype=np.float64):
        super().__init__(cfg, params if params is not None else self._init_params(cfg, seed, dtype))

    @staticmethod
    def _init_params(cfg, seed, dtype):
        rng = np.random.default_rng(seed)
        params = OrderedDict()
        for k in range(cfg.diffusion_layers):
            for i, (cin, cout) in enumerate(cfg.estimator.channels()):
                bound = 1.0 / np.sqrt(9 * cin)
                w = rng.uniform(-bound, bound, size=(cout, cin, 3, 3)).astype(dtype)
                params[f"layer{k}.conv{i}.weight"] = ad.Param(f"layer{k}.conv{i}.weight", w)
                params[f"layer{k}.conv{i}.bias"] = ad.Param(f"layer{k}.conv{i}.bias", np.zeros(cout, dtype))
            if cfg.learn_dt:
                params[f"layer{k}.dt"] = ad.Param(f"layer{k}.dt", np.full((1,), cfg.dt_init, dtype))
        return params

    @classmethod
    def zeros(cls, cfg=DiffNetConfig(), dtype=np.float64):
        net = cls(cfg, dtype=dtype)
        for p in net.params.values():
            if not p.name.endswith(".dt"):
                p.value[...] = 0
        return net

    def layer_dt(self, k):
        if self.cfg.learn_dt:
            return self.params[f"layer{k}.dt"]
        return ad.Tensor(np.full((1,), self.cfg.dt_init, self.dtype))

    def estimate(self, k, u):
        """Filter planes (B, H, W, 5) estimated by layer k's CNN from image u."""
        z = u
        depth = self.cfg.estimator.depth
        for i in range(depth):
            z = ad.conv3x3(z, self.params[f"layer{k}.conv{i}.weight"], self.params[f"layer{k}.conv{i}.bias"])
            if i < depth - 1:
                z = ad.relu(z)
        return z

    def forward(self, u, *, return_filters=False):
        """Run all layers on u of shape (H, W), (B, H, W) or (B, H, W, 1).

        Returns a (B, H, W, 1) tensor, plus each layer's (B, H, W, 5) filter
        planes when ``return_filters`` is set.
        """
        f = self._input(u)
        filters = []
        for k in range(self.cfg.diffusion_layers):
            zeta = self.estimate(k, f)
            filters.append(zeta)
            f = f - ad.scale(ad.stencil5(f, zeta), self.layer_dt(k))
        if self.cfg.final_relu:
            f = ad.relu(f)
        return (f, filters) if return_filters else f

    __call__ = forward


class LinearDiffNet(_Network):
    """Explicit learned diffusivity per layer; bound to one image size."""

    def __init__(self, cfg=LinearDiffNetConfig(), params=None, *, gamma_init=0.0, dtype=np.float64):
        if params is None:
            params = OrderedDict()
            for k in range(cfg.diffusion_layers):
                g = np.full((4,) + tuple(cfg.image_shape), gamma_init, dtype)
                params[f"layer{k}.gamma"] = ad.Param(f"layer{k}.gamma", g)
                if cfg.learn_dt:
                    params[f"layer{k}.dt"] = ad.Param(f"layer{k}.dt", np.full((1,), cfg.dt_init, dtype))
        super().__init__(cfg, params)

    def forward(self, u):
        f = self._input(u)
        if f.shape[1:3] != tuple(self.cfg.image_shape):
            raise ValueError(f"linear network is built for images of shape {self.cfg.image_shape}, got {f.shape[1:3]}")
        for k in range(self.cfg.diffusion_layers):
            dt = self.params[f"layer{k}.dt"] if self.cfg.learn_dt else ad.Tensor(np.full((1,), self.cfg.dt_init, self.dtype))
            f = f + ad.scale(ad.diffusion_stencil(f, self.params[f"layer{k}.gamma"]), dt)
        return f

    __call__ = forward


def network_for(cfg, **kwargs):
    if isinstance(cfg, DiffNetConfig):
        return DiffNet(cfg, **kwargs)
    if isinstance(cfg, LinearDiffNetConfig):
        return LinearDiffNet(cfg, **kwargs)
    raise TypeError(f"unsupported config {type(cfg).__name__}")
