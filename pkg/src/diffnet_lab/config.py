"""Flat ``key=value`` run configuration shared by the command line tools.

A config file holds one ``key=value`` per line; blank lines and lines
starting with ``#`` are ignored. Unknown keys are rejected with their line
number. Command-line flags override file values.
"""

from dataclasses import dataclass

from .data import GaussianBlur
from .diffusion import DiffusionConfig, DiffusionMode
from .model import DiffNetConfig, EstimatorConfig, LinearDiffNetConfig
from .train import TrainConfig


class ConfigError(ValueError):
    pass


def _bool(text):
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class Key:
    kind: type
    default: object
    help: str


KEYS = {
    # model
    "model": Key(str, "diffnet", "diffnet or linear"),
    "layers": Key(int, 5, "number of diffusion layers"),
    "depth": Key(int, 4, "estimator CNN depth K"),
    "learn_dt": Key(_bool, True, "learn one time step per layer"),
    "final_relu": Key(_bool, True, "project the output onto [0, inf)"),
    "dt_init": Key(float, 0.1, "initial (or fixed) layer time step"),
    "init_seed": Key(int, 0, "seed of the weight initialisation"),
    # training
    "epochs": Key(int, 18, "training epochs"),
    "batch_size": Key(int, 16, "minibatch size"),
    "lr_initial": Key(float, 2e-3, "learning rate at the first step"),
    "lr_final": Key(float, 4e-6, "learning rate at the last step"),
    "seed": Key(int, 0, "shuffle and data seed"),
    "max_steps": Key(int, 0, "fixed optimizer-step budget (0: use epochs)"),
    "timing": Key(str, "wall", "wall or off (off writes 0 wall times)"),
    # data and forward model
    "scenario": Key(str, "corpus", "disks or corpus"),
    "corpus_dir": Key(str, "", "directory of PGM/PPM images for the corpus scenario"),
    "size": Key(int, 48, "image or patch size"),
    "n_train": Key(int, 2000, "training samples"),
    "n_test": Key(int, 200, "test samples"),
    "noise_pct": Key(float, 0.0, "noise sigma as percent of the degraded range"),
    "forward": Key(str, "diffusion", "diffusion or blur"),
    "mode": Key(str, "perona-malik", "isotropic or perona-malik"),
    "dt": Key(float, 0.1, "forward diffusion time step"),
    "steps": Key(int, 4, "forward diffusion steps"),
    "lambda": Key(float, 0.2, "Perona-Malik contrast parameter"),
    "blur_T": Key(float, 1.0, "diffusion time of the Gaussian blur"),
}


def parse_lines(lines, source="<config>"):
    values = {}
    for lineno, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}")
        if key not in KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            values[key] = KEYS[key].kind(value.strip())
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
    return values


def load(path):
    with open(path, encoding="utf-8") as fh:
        return parse_lines(fh, path)


def resolve(file_values=None, overrides=None):
    """Defaults, then file values, then non-None overrides."""
    out = {k: spec.default for k, spec in KEYS.items()}
    out.update(file_values or {})
    for k, v in (overrides or {}).items():
        if v is None:
            continue
        if k not in KEYS:
            raise ConfigError(f"unknown key {k!r}")
        try:
            out[k] = KEYS[k].kind(v) if isinstance(v, str) else v
        except ValueError as exc:
            raise ConfigError(f"bad value for {k}: {exc}") from None
    return out


def dump(values):
    return "\n".join(f"{k}={values[k]}" for k in KEYS if k in values) + "\n"


def model_config(v):
    if v["model"] == "diffnet":
        return DiffNetConfig(v["layers"], EstimatorConfig(v["depth"]), v["learn_dt"], v["final_relu"], v["dt_init"])
    if v["model"] == "linear":
        return LinearDiffNetConfig(v["layers"], (v["size"], v["size"]), v["learn_dt"], v["dt_init"])
    raise ConfigError(f"unknown model {v['model']!r}")


def train_config(v):
    return TrainConfig(epochs=v["epochs"], batch_size=v["batch_size"], lr_initial=v["lr_initial"],
                       lr_final=v["lr_final"], seed=v["seed"], max_steps=v["max_steps"], timing=v["timing"])


def forward_model(v):
    if v["forward"] == "diffusion":
        return DiffusionConfig(v["dt"], v["steps"], v["lambda"], DiffusionMode(v["mode"]))
    if v["forward"] == "blur":
        return GaussianBlur(v["blur_T"])
    raise ConfigError(f"unknown forward model {v['forward']!r}")
