"""Flat `section.key = value` experiment configs.

One schema drives parsing, validation, serialization and the `defaults`
command. Unknown keys are rejected; `out.dir` is the only key without a
usable default and must appear explicitly. parse -> serialize -> parse
is the identity on parsed configs.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import losses as loss_mod
from . import model as model_mod
from . import synthdata as sd
from . import teacher as tch
from . import trainer as tr
from .errors import ConfigError

REQUIRED = object()


@dataclass(frozen=True)
class Key:
    type: type
    default: object
    choices: tuple = ()


SCHEMA = {
    "corpus.vocab_size": Key(int, 16),
    "corpus.d_in": Key(int, 16),
    "corpus.train_utts": Key(int, 2000),
    "corpus.dev_utts": Key(int, 200),
    "corpus.test_utts": Key(int, 200),
    "corpus.n_min": Key(int, 4),
    "corpus.n_max": Key(int, 10),
    "corpus.r_min": Key(int, 3),
    "corpus.r_max": Key(int, 3),
    "corpus.noise_sigma": Key(float, 1.0),
    "corpus.markov_alpha": Key(float, 0.15),
    "corpus.seed": Key(int, 17),
    "model.d_model": Key(int, 64),
    "model.layers": Key(int, 2),
    "model.heads": Key(int, 4),
    "model.ffn_dim": Key(int, 128),
    "model.dropout": Key(float, 0.1),
    "train.variant": Key(str, "vanilla", choices=model_mod.VARIANTS),
    "train.epochs": Key(int, 15),
    "train.batch_size": Key(int, 16),
    "train.base_lr": Key(float, 0.1),
    "train.warmup": Key(int, 500),
    "train.patience": Key(int, 3),
    "train.average_last": Key(int, 10),
    "train.seed": Key(int, 1),
    "loss.k": Key(float, 20.0),
    "loss.lambda": Key(float, 0.3),
    "loss.beta": Key(float, 0.3),
    "loss.aux": Key(str, "cosine", choices=loss_mod.AUX_KINDS),
    "teacher.layers": Key(int, 2),
    "teacher.heads": Key(int, 4),
    "teacher.ffn_dim": Key(int, 128),
    "teacher.directionality": Key(str, "auto", choices=("auto",) + tch.DIRECTIONALITIES),
    "teacher.mode": Key(str, "fitted", choices=tch.MODES),
    "teacher.seed": Key(int, 101),
    "teacher.fit_lr": Key(float, 3e-3),
    "decode.beam": Key(int, 10),
    "decode.lm_weight": Key(float, 0.3),
    "decode.joint_gamma": Key(float, 0.5),
    "out.dir": Key(str, REQUIRED),
}

_SAMPLE = {"out.dir": "runs/exp"}  # shown by `defaults`; still explicit in real configs


def _convert(key: str, raw: str):
    spec = SCHEMA[key]
    try:
        if spec.type is int:
            value = int(raw)
        elif spec.type is float:
            value = float(raw)
        else:
            value = raw
    except ValueError as exc:
        raise ConfigError(f"key {key!r}: cannot parse {raw!r} as {spec.type.__name__}") from exc
    if spec.choices and value not in spec.choices:
        raise ConfigError(f"key {key!r}: {value!r} not in {spec.choices}")
    return value


def parse_text(text: str) -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'section.key = value', got {line!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _convert(key, raw)
    for key, spec in SCHEMA.items():
        if key not in values:
            if spec.default is REQUIRED:
                raise ConfigError(f"missing required key {key!r}")
            values[key] = spec.default
    return values


def serialize(cfg: dict) -> str:
    lines = []
    for key in sorted(SCHEMA):
        value = cfg[key]
        text = repr(value) if isinstance(value, float) else str(value)
        lines.append(f"{key} = {text}")
    return "\n".join(lines) + "\n"


def load_file(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_text(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def defaults_dict() -> dict:
    out = {}
    for key, spec in SCHEMA.items():
        out[key] = _SAMPLE.get(key, spec.default)
        if out[key] is REQUIRED:
            raise ConfigError(f"no sample value for required key {key!r}")
    return out


def defaults_text() -> str:
    return serialize(defaults_dict())


# --- typed views ------------------------------------------------------------


def corpus_config(cfg: dict) -> sd.CorpusConfig:
    return sd.CorpusConfig(
        vocab_size=cfg["corpus.vocab_size"], d_in=cfg["corpus.d_in"],
        train_utts=cfg["corpus.train_utts"], dev_utts=cfg["corpus.dev_utts"],
        test_utts=cfg["corpus.test_utts"], n_min=cfg["corpus.n_min"],
        n_max=cfg["corpus.n_max"], r_min=cfg["corpus.r_min"], r_max=cfg["corpus.r_max"],
        noise_sigma=cfg["corpus.noise_sigma"], markov_alpha=cfg["corpus.markov_alpha"],
        seed=cfg["corpus.seed"],
    )


def model_config(cfg: dict) -> model_mod.ModelConfig:
    return model_mod.ModelConfig(
        vocab_size=cfg["corpus.vocab_size"], d_in=cfg["corpus.d_in"],
        d_model=cfg["model.d_model"], layers=cfg["model.layers"], heads=cfg["model.heads"],
        ffn_dim=cfg["model.ffn_dim"], dropout=cfg["model.dropout"],
        variant=cfg["train.variant"],
    )


def train_config(cfg: dict) -> tr.TrainConfig:
    return tr.TrainConfig(
        epochs=cfg["train.epochs"], batch_size=cfg["train.batch_size"],
        base_lr=cfg["train.base_lr"], warmup=cfg["train.warmup"],
        patience=cfg["train.patience"], average_last=cfg["train.average_last"],
        seed=cfg["train.seed"],
        loss=loss_mod.LossConfig(k=cfg["loss.k"], lam=cfg["loss.lambda"],
                                 beta=cfg["loss.beta"], aux_kind=cfg["loss.aux"]),
    )


def resolve_directionality(cfg: dict) -> str:
    """auto -> the variant's default teacher directionality."""
    explicit = cfg["teacher.directionality"]
    if explicit != "auto":
        return explicit
    return "unidirectional" if cfg["train.variant"] == "kt-cl" else "bidirectional"


def teacher_config(cfg: dict, directionality: str | None = None) -> tch.TeacherConfig:
    return tch.TeacherConfig(
        vocab_size=cfg["corpus.vocab_size"], d_model=cfg["model.d_model"],
        layers=cfg["teacher.layers"], heads=cfg["teacher.heads"],
        ffn_dim=cfg["teacher.ffn_dim"],
        directionality=directionality or resolve_directionality(cfg),
        mode=cfg["teacher.mode"], seed=cfg["teacher.seed"], fit_lr=cfg["teacher.fit_lr"],
    )


def decode_config(cfg: dict, mode: str = "beam") -> tr.DecodeConfig:
    return tr.DecodeConfig(
        mode=mode, beam=cfg["decode.beam"], lm_weight=cfg["decode.lm_weight"],
        joint_gamma=cfg["decode.joint_gamma"],
    )
