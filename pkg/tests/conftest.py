import numpy as np
import pytest

from ctkt import model as mm
from ctkt import synthdata as sd
from ctkt import teacher as tch


@pytest.fixture(scope="session")
def tiny_corpus():
    cfg = sd.CorpusConfig(
        vocab_size=6, d_in=8, train_utts=48, dev_utts=12, test_utts=12,
        n_min=3, n_max=5, r_min=2, r_max=3, noise_sigma=0.6, seed=23,
    )
    return sd.generate_corpus(cfg)


@pytest.fixture(scope="session")
def tiny_teachers(tiny_corpus):
    transcripts = [u.transcript for u in tiny_corpus.train]
    make = lambda direction, seed: tch.create_teacher(
        tch.TeacherConfig(vocab_size=6, d_model=16, layers=1, heads=2, ffn_dim=32,
                          directionality=direction, mode="fitted", seed=seed),
        transcripts=transcripts,
    )
    return {"bidirectional": make("bidirectional", 5), "unidirectional": make("unidirectional", 6)}


def tiny_model_cfg(variant="vanilla", **kw):
    base = dict(vocab_size=6, d_in=8, d_model=16, layers=1, heads=2, ffn_dim=32, dropout=0.1)
    base.update(kw)
    return mm.ModelConfig(variant=variant, **base)
