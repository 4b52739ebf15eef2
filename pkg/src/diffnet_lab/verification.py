"""Self-checks run by ``diffnet-lab verify``: dense stencil oracle, gradients, semigroup.

Each suite is deterministic (fixed seeds) and returns a :class:`SuiteResult`
whose ``detail`` string is reproducible byte for byte.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .diffusion import DiffusionConfig, DiffusionMode, Scheme, evolve, gaussian_convolve
from .grid import FilterField, StencilMode, apply_stencil, dense_oracle_matrix
from .model import DiffNet, DiffNetConfig, EstimatorConfig

ORACLE_TOL = 1e-12
GRAD_TOL = 1e-4
FD_STEP = 1e-5


@dataclass(frozen=True)
class SuiteResult:
    name: str
    passed: bool
    detail: str

    def line(self):
        return f"{self.name}: {'PASS' if self.passed else 'FAIL'} ({self.detail})"


# dense oracle -----------------------------------------------------------------

def stencil_oracle_errors(n_cases=200, max_size=16, seed=0):
    """Max |apply_stencil - dense matrix action| for random fields, sizes and modes."""
    rng = np.random.default_rng(seed)
    errors = []
    for case in range(n_cases):
        h, w = rng.integers(1, max_size + 1, size=2)
        f = FilterField(rng.normal(size=(5, h, w)))
        mode = StencilMode.ZERO_MEAN if case % 2 == 0 else StencilMode.FREE_CENTER
        dt = float(rng.uniform(0.01, 1.0))
        u = rng.normal(size=(h, w))
        fast = apply_stencil(u, f, mode, dt)
        dense = (dense_oracle_matrix(f, mode, dt) @ u.ravel()).reshape(h, w)
        errors.append(float(np.max(np.abs(fast - dense))))
    return errors


def dense_oracle_suite(n_cases=200, seed=0):
    err = max(stencil_oracle_errors(n_cases, seed=seed))
    return SuiteResult("dense-oracle", err < ORACLE_TOL, f"{n_cases} cases, max abs error {err:.3e}")


# gradients --------------------------------------------------------------------

def relative_error(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


def check_gradient(fn, inputs, n_coords=20, seed=0, h=FD_STEP):
    """Compare reverse-mode gradients of ``sum(w * fn(*inputs))`` with central differences.

    ``inputs`` are float64 arrays; every one of them is differentiated. Returns
    the largest relative error over ``n_coords`` sampled coordinates per input.
    """
    rng = np.random.default_rng(seed)
    inputs = [np.array(x, dtype=np.float64) for x in inputs]
    params = [ad.Param(f"x{i}", x) for i, x in enumerate(inputs)]
    probe_shape = fn(*[ad.Tensor(x) for x in inputs]).shape
    w = rng.normal(size=probe_shape) if probe_shape != () else np.array(1.0)

    def scalar(arrays):
        out = fn(*[ad.Tensor(a) for a in arrays]).value
        return float(np.sum(w * out))

    with ad.Tape() as tape:
        out = fn(*params)
        loss = ad.sum_all(ad.mul(out, ad.Tensor(w))) if out.shape != () else out
        tape.backward(loss)
    worst = 0.0
    for i, x in enumerate(inputs):
        flat = x.reshape(-1)
        picks = rng.choice(flat.size, size=min(n_coords, flat.size), replace=False)
        for j in picks:
            up = [a.copy() for a in inputs]
            dn = [a.copy() for a in inputs]
            up[i].reshape(-1)[j] += h
            dn[i].reshape(-1)[j] -= h
            numeric = (scalar(up) - scalar(dn)) / (2 * h)
            worst = max(worst, relative_error(params[i].grad.reshape(-1)[j], numeric))
    return worst


def _away_from_zero(rng, shape, gap=0.05):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < gap, np.sign(x + 1e-300) * gap, x)


def primitive_cases(seed=0):
    """(name, fn, inputs) for every differentiable primitive."""
    rng = np.random.default_rng(seed)
    img = (2, 6, 7, 3)
    u1 = (2, 6, 7, 1)
    target = rng.normal(size=u1)
    return [
        ("add", ad.add, [rng.normal(size=img), rng.normal(size=img)]),
        ("sub", ad.sub, [rng.normal(size=img), rng.normal(size=img)]),
        ("neg", ad.neg, [rng.normal(size=img)]),
        ("mul", ad.mul, [rng.normal(size=img), rng.normal(size=img)]),
        ("scale", ad.scale, [rng.normal(size=img), rng.normal(size=(1,))]),
        ("relu", ad.relu, [_away_from_zero(rng, img)]),
        *[(f"shift{d}", lambda x, d=d: ad.shift(x, d), [rng.normal(size=img)]) for d in range(4)],
        ("channel", lambda x: ad.channel(x, 1), [rng.normal(size=img)]),
        ("sum_all", ad.sum_all, [rng.normal(size=img)]),
        ("mse_loss", lambda x: ad.mse_loss(x, target), [rng.normal(size=u1)]),
        ("conv3x3", ad.conv3x3, [rng.normal(size=img), rng.normal(size=(4, 3, 3, 3)), rng.normal(size=(4,))]),
        ("stencil5", ad.stencil5, [rng.normal(size=u1), rng.normal(size=(2, 6, 7, 5))]),
        ("diffusion_stencil", ad.diffusion_stencil, [rng.normal(size=u1), rng.normal(size=(4, 6, 7))]),
    ]


def network_gradient_error(n_coords=20, seed=0, h=FD_STEP):
    """Finite-difference check of the full mse loss of a 2-layer DiffNet on an 8x8 batch."""
    rng = np.random.default_rng(seed)
    net = DiffNet(DiffNetConfig(2, EstimatorConfig(3)), seed=seed, dtype=np.float64)
    # larger weights than the default init so every layer contributes visibly
    for p in net.parameters():
        if not p.name.endswith(".dt"):
            p.value[...] = rng.normal(scale=0.3, size=p.shape)
    x = rng.uniform(0.2, 0.8, size=(2, 8, 8))
    y = rng.uniform(0.2, 0.8, size=(2, 8, 8, 1))

    def loss_value():
        return float(ad.mse_loss(net(x), y).value)

    net.zero_grad()
    with ad.Tape() as tape:
        loss = ad.mse_loss(net(x), y)
        tape.backward(loss)
    coords = [(p, int(j)) for p in net.parameters() for j in range(p.value.size)]
    picks = rng.choice(len(coords), size=n_coords, replace=False)
    worst = 0.0
    for k in picks:
        p, j = coords[k]
        flat = p.value.reshape(-1)
        orig = flat[j]
        flat[j] = orig + h
        up = loss_value()
        flat[j] = orig - h
        dn = loss_value()
        flat[j] = orig
        worst = max(worst, relative_error(p.grad.reshape(-1)[j], (up - dn) / (2 * h)))
    return worst


def gradient_suite(seed=0):
    errors = {name: check_gradient(fn, inputs, seed=seed) for name, fn, inputs in primitive_cases(seed)}
    errors["diffnet-2layer"] = network_gradient_error(seed=seed)
    name, worst = max(errors.items(), key=lambda kv: kv[1])
    return SuiteResult("gradient-check", worst < GRAD_TOL,
                       f"{len(errors)} checks, worst relative error {worst:.3e} ({name})")


# semigroup --------------------------------------------------------------------

def semigroup_gaps(u0, T=1.0, counts=(10, 20, 40)):
    """Max-norm gaps between explicit isotropic evolution with N steps and the Green's operator."""
    target = gaussian_convolve(u0, T)
    gaps = []
    for n in counts:
        cfg = DiffusionConfig(dt=T / n, steps=n, mode=DiffusionMode.ISOTROPIC)
        gaps.append(float(np.max(np.abs(evolve(u0, cfg, Scheme.EXPLICIT) - target))))
    return gaps


def semigroup_suite(seed=0, size=64):
    u0 = np.random.default_rng(seed).uniform(size=(size, size))
    g10, g20, g40 = semigroup_gaps(u0)
    ratio = g20 / g40
    ok = g10 > g20 > g40 and 1.7 <= ratio <= 2.3
    return SuiteResult("semigroup", ok,
                       f"gaps N=10,20,40: {g10:.3e}, {g20:.3e}, {g40:.3e}; ratio {ratio:.3f}")


SUITES = {"dense-oracle": dense_oracle_suite, "gradient-check": gradient_suite, "semigroup": semigroup_suite}


def run_all(names=None):
    return [SUITES[n]() for n in (names or SUITES)]
