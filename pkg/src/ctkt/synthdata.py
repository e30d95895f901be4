"""Deterministic synthetic corpus: Markov label sequences rendered to
noisy frame sequences.

Labels come from an order-1 Markov chain with a seeded, zero-diagonal
transition matrix (no immediate repeats, so a perfect frame classifier
survives CTC collapse). Each token emits r frames (r >= 2) of its
prototype vector plus white noise; frames round through float32 so an
in-memory corpus equals its on-disk round trip bit for bit.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import atomic_write
from .errors import CheckpointError, ContractError

SPLITS = ("train", "dev", "test")

_GLOBAL_STREAM = 0xC0
_SPLIT_IDS = {name: i + 1 for i, name in enumerate(SPLITS)}


@dataclass
class CorpusConfig:
    vocab_size: int = 16          # tokens, excluding blank
    d_in: int = 16
    train_utts: int = 2000
    dev_utts: int = 200
    test_utts: int = 200
    n_min: int = 4
    n_max: int = 10
    r_min: int = 3
    r_max: int = 3
    noise_sigma: float = 1.0
    markov_alpha: float = 0.15    # Dirichlet concentration of transition rows
    seed: int = 17

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ContractError(f"vocab_size must be >= 2, got {self.vocab_size}")
        if self.d_in < 1:
            raise ContractError(f"d_in must be >= 1, got {self.d_in}")
        if self.n_min < 1 or self.n_max < self.n_min:
            raise ContractError(f"bad label length range [{self.n_min}, {self.n_max}]")
        if self.r_min < 2 or self.r_max < self.r_min:
            raise ContractError(
                f"frames-per-token range needs r_min >= 2, got [{self.r_min}, {self.r_max}]"
            )
        if self.noise_sigma < 0:
            raise ContractError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.markov_alpha <= 0:
            raise ContractError(f"markov_alpha must be > 0, got {self.markov_alpha}")
        for name in ("train_utts", "dev_utts", "test_utts"):
            if getattr(self, name) < 1:
                raise ContractError(f"{name} must be >= 1")


@dataclass
class Utterance:
    id: str
    frames: np.ndarray  # (M, d_in) float64
    transcript: tuple
    durations: tuple | None = None  # frames per token; generation metadata

    @property
    def m(self) -> int:
        return self.frames.shape[0]

    @property
    def n(self) -> int:
        return len(self.transcript)


PAIR_GAP = 0.8  # within-pair prototype distance; confusable under unit noise


@dataclass
class LabelModel:
    """Seeded token prototypes and Markov label process.

    Prototypes come in near-duplicate pairs (2k-1, 2k) separated by
    PAIR_GAP: under noise the pair is easy to spot but the member is
    ambiguous from acoustics alone, so the Markov context carries real
    information. Pairs stay distinct, so a noiseless oracle classifier
    is still exact.
    """

    prototypes: np.ndarray  # (V, d_in); row v-1 belongs to token v
    init_dist: np.ndarray   # (V,)
    transitions: np.ndarray  # (V, V), zero diagonal

    @staticmethod
    def create(cfg: CorpusConfig) -> "LabelModel":
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, _GLOBAL_STREAM]))
        v = cfg.vocab_size
        prototypes = rng.standard_normal((v, cfg.d_in))
        for a in range(0, v - 1, 2):
            base = rng.standard_normal(cfg.d_in)
            delta = rng.standard_normal(cfg.d_in)
            delta *= PAIR_GAP / (2.0 * np.linalg.norm(delta))
            prototypes[a] = base + delta
            prototypes[a + 1] = base - delta
        init = rng.dirichlet(np.full(v, 1.0))
        rows = []
        for i in range(v):
            row = rng.dirichlet(np.full(v - 1, cfg.markov_alpha))
            rows.append(np.insert(row, i, 0.0))
        return LabelModel(prototypes, init, np.asarray(rows))


def _utterance_rng(cfg: CorpusConfig, split: str, index: int):
    return np.random.default_rng(np.random.SeedSequence([cfg.seed, _SPLIT_IDS[split], index]))


def _sample_utterance(cfg: CorpusConfig, model: LabelModel, split: str, index: int) -> Utterance:
    rng = _utterance_rng(cfg, split, index)
    n = int(rng.integers(cfg.n_min, cfg.n_max + 1))
    tokens = [1 + int(rng.choice(cfg.vocab_size, p=model.init_dist))]
    for _ in range(n - 1):
        tokens.append(1 + int(rng.choice(cfg.vocab_size, p=model.transitions[tokens[-1] - 1])))
    durations = rng.integers(cfg.r_min, cfg.r_max + 1, size=n)
    proto = np.repeat(model.prototypes[np.asarray(tokens) - 1], durations, axis=0)
    frames = proto + rng.standard_normal(proto.shape) * cfg.noise_sigma
    frames = frames.astype(np.float32).astype(np.float64)
    return Utterance(id=f"{split}-{index:05d}", frames=frames, transcript=tuple(tokens),
                     durations=tuple(int(d) for d in durations))


@dataclass
class Corpus:
    cfg: CorpusConfig
    splits: dict = field(default_factory=dict)  # split name -> list[Utterance]

    @property
    def train(self):
        return self.splits["train"]

    @property
    def dev(self):
        return self.splits["dev"]

    @property
    def test(self):
        return self.splits["test"]


def generate_corpus(cfg: CorpusConfig) -> Corpus:
    model = LabelModel.create(cfg)
    counts = {"train": cfg.train_utts, "dev": cfg.dev_utts, "test": cfg.test_utts}
    splits = {
        name: [_sample_utterance(cfg, model, name, i) for i in range(counts[name])]
        for name in SPLITS
    }
    return Corpus(cfg=cfg, splits=splits)


def corpus_stats(utts) -> dict:
    if not utts:
        raise ContractError("corpus_stats needs a nonempty utterance list")
    n_values = [u.n for u in utts]
    m_values = [u.m for u in utts]
    token_counts = {}
    for u in utts:
        for y in u.transcript:
            token_counts[y] = token_counts.get(y, 0) + 1
    total_tokens = sum(token_counts.values())
    return {
        "count": len(utts),
        "tokens": total_tokens,
        "n_hist": {n: n_values.count(n) for n in sorted(set(n_values))},
        "m_hist": {m: m_values.count(m) for m in sorted(set(m_values))},
        "unigram": {y: c / total_tokens for y, c in sorted(token_counts.items())},
    }


def adjacent_mutual_information(utts) -> float:
    """Empirical MI (nats) between adjacent label pairs."""
    uni = {}
    bi = {}
    total = 0
    for u in utts:
        for a, b in zip(u.transcript, u.transcript[1:]):
            bi[(a, b)] = bi.get((a, b), 0) + 1
            total += 1
    for u in utts:
        for y in u.transcript:
            uni[y] = uni.get(y, 0) + 1
    usum = sum(uni.values())
    mi = 0.0
    for (a, b), c in bi.items():
        p_ab = c / total
        mi += p_ab * math.log(p_ab / ((uni[a] / usum) * (uni[b] / usum)))
    return mi


# --- on-disk format -------------------------------------------------------
# record: u32 id_len + id, u32 N, u32 M, u32 token_str_len + "t1 t2 ...",
#         u64 float count, float32 LE row-major frames


def save_split(path, utts) -> None:
    parts = []
    for u in utts:
        idb = u.id.encode("utf-8")
        toks = " ".join(str(t) for t in u.transcript).encode("ascii")
        frames = np.ascontiguousarray(u.frames, dtype="<f4")
        parts.append(struct.pack("<I", len(idb)))
        parts.append(idb)
        parts.append(struct.pack("<II", u.n, u.m))
        parts.append(struct.pack("<I", len(toks)))
        parts.append(toks)
        parts.append(struct.pack("<Q", frames.size))
        parts.append(frames.tobytes())
    atomic_write(path, b"".join(parts))


def save_manifest(path, utts) -> None:
    lines = [f"{u.id}\t{u.n}\t{u.m}" for u in utts]
    atomic_write(path, ("\n".join(lines) + "\n").encode("utf-8"))


def load_split(path) -> list:
    with open(path, "rb") as fh:
        blob = fh.read()
    utts = []
    off = 0
    try:
        while off < len(blob):
            (id_len,) = struct.unpack_from("<I", blob, off)
            off += 4
            uid = blob[off : off + id_len].decode("utf-8")
            off += id_len
            n, m = struct.unpack_from("<II", blob, off)
            off += 8
            (tok_len,) = struct.unpack_from("<I", blob, off)
            off += 4
            toks = blob[off : off + tok_len].decode("ascii")
            off += tok_len
            (count,) = struct.unpack_from("<Q", blob, off)
            off += 8
            frames = np.frombuffer(blob, dtype="<f4", count=count, offset=off)
            off += 4 * count
            transcript = tuple(int(t) for t in toks.split()) if toks else ()
            if len(transcript) != n or count % max(m, 1) != 0:
                raise CheckpointError(f"{path}: inconsistent record for {uid!r}")
            utts.append(
                Utterance(id=uid, frames=frames.reshape(m, count // m).astype(np.float64), transcript=transcript)
            )
    except (struct.error, UnicodeDecodeError, ValueError) as exc:
        raise CheckpointError(f"{path}: malformed corpus record ({exc})") from exc
    return utts


def save_corpus(out_dir, corpus: Corpus) -> None:
    import os

    os.makedirs(out_dir, exist_ok=True)
    for name in SPLITS:
        save_split(os.path.join(out_dir, f"{name}.bin"), corpus.splits[name])
        save_manifest(os.path.join(out_dir, f"{name}.manifest.txt"), corpus.splits[name])


def load_corpus(out_dir, cfg: CorpusConfig | None = None) -> Corpus:
    import os

    splits = {}
    for name in SPLITS:
        path = os.path.join(out_dir, f"{name}.bin")
        if not os.path.exists(path):
            raise ContractError(f"missing corpus split file: {path}")
        splits[name] = load_split(path)
    return Corpus(cfg=cfg, splits=splits)
