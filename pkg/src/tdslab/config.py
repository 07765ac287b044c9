"""Plain-text ``key=value`` experiment configs.

One flat namespace covers generation, augmentation, loss, tower and training
keys. The same keys are accepted as CLI flags (``--key value``), and flags
override file values. Lines starting with ``#`` are comments.
"""
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .augment import AugmentConfig
from .errors import ConfigError
from .generator import GeneratorConfig
from .losses import LossWeights
from .model import TowerConfig
from .trainer import TrainConfig


def _bool(text):
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int_tuple(text):
    text = str(text).strip()
    if text in ("", "none"):
        return ()
    return tuple(int(x) for x in text.split(","))


def _opt_int(text):
    return None if str(text).strip().lower() in ("none", "") else int(text)


@dataclass(frozen=True)
class Key:
    name: str
    section: str  # gen | aug | loss | tower | train | run
    field: str
    parse: object
    help: str = ""


def _gen_keys():
    keys = []
    for f in fields(GeneratorConfig):
        if f.name == "seed":
            continue
        default = getattr(GeneratorConfig(), f.name)
        if f.name == "shock_span":
            parse = _opt_int
        elif isinstance(default, bool):
            parse = _bool
        elif isinstance(default, int):
            parse = int
        else:
            parse = float
        keys.append(Key(f.name, "gen", f.name, parse, "generator"))
    return keys


KEYS = _gen_keys() + [
    Key("p", "aug", "p", float, "share of feature columns eligible for perturbation"),
    Key("r", "aug", "r", int, "bucket perturbation radius"),
    Key("p_seq", "aug", "p_seq", float, "sequence position mask rate"),
    Key("p_cate", "aug", "p_cate", float, "categorical embedding dropout rate"),
    Key("views", "aug", "J", int, "augmented views per sample"),
    Key("alpha", "loss", "alpha", float, "weight of the self-supervised terms"),
    Key("tau", "loss", "tau", float, "InfoNCE temperature"),
    Key("listwise", "loss", "listwise_enabled", _bool, "add the ListNet term"),
    Key("embed_dim", "tower", "embed_dim", int),
    Key("encoder_hidden", "tower", "encoder_hidden", _int_tuple, "comma-separated widths"),
    Key("latent_dim", "tower", "d_z", int),
    Key("decoder_hidden", "tower", "decoder_hidden", _int_tuple, "comma-separated widths"),
    Key("zero_init_decoder", "tower", "zero_init_decoder", _bool),
    Key("embed_scale", "tower", "embed_scale", float),
    Key("method", "train", "method", str, "erm | aug | infonce | elbo_tds"),
    Key("batch_size", "train", "batch_size", int),
    Key("lr", "train", "lr", float),
    Key("eval_every_span", "train", "eval_every_span", _bool),
    Key("seed", "run", "seed", int, "seed for generation and training"),
    Key("collapse", "run", "collapse", _bool, "log collapse diagnostics at every evaluation"),
]
KEY_BY_NAME = {k.name: k for k in KEYS}


def parse_config_text(text, origin="<config>"):
    """Return ``{key: raw string}``; rejects unknown keys and malformed lines."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"{origin}:{lineno}: expected key=value")
        if key not in KEY_BY_NAME:
            raise ConfigError(f"{origin}:{lineno}: unknown key {key!r}")
        out[key] = value.strip()
    return out


def read_config(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text, str(path))


@dataclass(frozen=True)
class Experiment:
    gen: GeneratorConfig
    train: TrainConfig
    seed: int = 0
    collapse: bool = False

    def with_seed(self, seed):
        return replace(self, seed=seed, gen=replace(self.gen, seed=seed), train=replace(self.train, seed=seed))

    def echo(self):
        """Resolved key=value pairs, in registry order."""
        rows = []
        for k in KEYS:
            if k.section == "run":
                value = getattr(self, k.field)
            else:
                obj = {"gen": self.gen, "train": self.train, "aug": self.train.augment,
                       "loss": self.train.weights, "tower": self.train.tower}[k.section]
                value = getattr(obj, k.field)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            rows.append((k.name, "none" if value is None else str(value)))
        return rows


def build_experiment(values):
    """``values`` maps key names to raw strings (file merged with flags)."""
    parts = {s: {} for s in ("gen", "aug", "loss", "tower", "train", "run")}
    for name, raw in values.items():
        key = KEY_BY_NAME.get(name)
        if key is None:
            raise ConfigError(f"unknown key {name!r}")
        try:
            parts[key.section][key.field] = key.parse(raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for {name}: {exc}") from exc
    seed = parts["run"].get("seed", 0)
    gen = GeneratorConfig(seed=seed, **parts["gen"])
    train = TrainConfig(augment=AugmentConfig(seed=seed, **parts["aug"]),
                        weights=LossWeights(**parts["loss"]),
                        tower=TowerConfig(**parts["tower"]), seed=seed, **parts["train"])
    return Experiment(gen, train, seed, parts["run"].get("collapse", False))


def echo_text(exp, extra=()):
    lines = [f"{k}={v}" for k, v in exp.echo()]
    lines += [f"{k}={v}" for k, v in extra]
    return "\n".join(lines) + "\n"
