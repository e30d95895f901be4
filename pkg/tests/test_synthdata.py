import numpy as np
import pytest

from ctkt import synthdata as sd
from ctkt.errors import CheckpointError, ContractError


def tiny_cfg(**kw):
    base = dict(vocab_size=6, d_in=5, train_utts=40, dev_utts=8, test_utts=8,
                n_min=3, n_max=6, r_min=2, r_max=3, noise_sigma=0.8, seed=11)
    base.update(kw)
    return sd.CorpusConfig(**base)


class TestConfig:
    @pytest.mark.parametrize("bad", [
        dict(vocab_size=1), dict(r_min=1), dict(n_min=0), dict(n_max=2, n_min=5),
        dict(noise_sigma=-1.0), dict(train_utts=0), dict(markov_alpha=0.0),
    ])
    def test_validation(self, bad):
        with pytest.raises(ContractError):
            tiny_cfg(**bad)


class TestGeneration:
    def test_deterministic(self):
        a = sd.generate_corpus(tiny_cfg())
        b = sd.generate_corpus(tiny_cfg())
        for split in sd.SPLITS:
            for ua, ub in zip(a.splits[split], b.splits[split]):
                assert ua.id == ub.id
                assert ua.transcript == ub.transcript
                assert np.array_equal(ua.frames, ub.frames)

    def test_noiseless_frames_equal_prototypes(self):
        cfg = tiny_cfg(noise_sigma=0.0)
        corpus = sd.generate_corpus(cfg)
        model = sd.LabelModel.create(cfg)
        protos32 = model.prototypes.astype(np.float32).astype(np.float64)
        for u in corpus.train[:10]:
            seen = {tuple(np.round(f, 6)) for f in u.frames}
            allowed = {tuple(np.round(protos32[t - 1], 6)) for t in u.transcript}
            assert seen <= allowed

    def test_frame_budget_invariant(self):
        corpus = sd.generate_corpus(tiny_cfg())
        for split in sd.SPLITS:
            for u in corpus.splits[split]:
                assert u.m >= 2 * u.n
                assert all(1 <= t <= 6 for t in u.transcript)

    def test_no_adjacent_repeats(self):
        corpus = sd.generate_corpus(tiny_cfg())
        for u in corpus.train:
            assert all(a != b for a, b in zip(u.transcript, u.transcript[1:]))

    def test_splits_disjoint_streams(self):
        corpus = sd.generate_corpus(tiny_cfg())
        t0 = corpus.train[0]
        d0 = corpus.dev[0]
        assert not np.array_equal(t0.frames[: d0.m], d0.frames)


class TestStats:
    def test_counts(self):
        corpus = sd.generate_corpus(tiny_cfg())
        stats = sd.corpus_stats(corpus.train)
        assert stats["count"] == 40
        assert sum(stats["n_hist"].values()) == 40

    def test_unigram_sums_to_one(self):
        stats = sd.corpus_stats(sd.generate_corpus(tiny_cfg()).train)
        assert abs(sum(stats["unigram"].values()) - 1.0) < 1e-12

    def test_fixed_n_single_bin(self):
        corpus = sd.generate_corpus(tiny_cfg(n_min=4, n_max=4))
        stats = sd.corpus_stats(corpus.train)
        assert list(stats["n_hist"].keys()) == [4]

    def test_empty_rejected(self):
        with pytest.raises(ContractError):
            sd.corpus_stats([])


def test_markov_labels_carry_more_adjacent_information_than_shuffled():
    corpus = sd.generate_corpus(tiny_cfg(train_utts=300))
    mi = sd.adjacent_mutual_information(corpus.train)
    rng = np.random.default_rng(0)
    shuffled = []
    for u in corpus.train:
        toks = list(u.transcript)
        rng.shuffle(toks)
        shuffled.append(sd.Utterance(id=u.id, frames=u.frames, transcript=tuple(toks)))
    mi_shuffled = sd.adjacent_mutual_information(shuffled)
    assert mi > mi_shuffled + 0.1


def test_bayes_ceiling_noiseless_oracle_classifier():
    # an oracle per-frame classifier decoded greedily must make 0 errors
    from ctkt import ctc

    cfg = tiny_cfg(noise_sigma=0.0)
    corpus = sd.generate_corpus(cfg)
    model = sd.LabelModel.create(cfg)
    protos32 = model.prototypes.astype(np.float32).astype(np.float64)
    for u in corpus.dev:
        d2 = ((u.frames[:, None, :] - protos32[None, :, :]) ** 2).sum(axis=2)
        logits = np.full((u.m, cfg.vocab_size + 1), -1e9)
        logits[:, 1:] = -d2
        logp = logits - np.log(np.exp(logits - logits.max(axis=1, keepdims=True)).sum(axis=1, keepdims=True)) - logits.max(axis=1, keepdims=True)
        assert ctc.greedy_decode(logp) == u.transcript


class TestRoundTrip:
    def test_split_round_trip_bit_exact(self, tmp_path):
        corpus = sd.generate_corpus(tiny_cfg())
        path = tmp_path / "train.bin"
        sd.save_split(path, corpus.train)
        loaded = sd.load_split(path)
        assert len(loaded) == len(corpus.train)
        for a, b in zip(corpus.train, loaded):
            assert a.id == b.id and a.transcript == b.transcript
            assert np.array_equal(a.frames, b.frames)

    def test_save_is_deterministic(self, tmp_path):
        corpus = sd.generate_corpus(tiny_cfg())
        p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
        sd.save_split(p1, corpus.train)
        sd.save_split(p2, corpus.train)
        assert p1.read_bytes() == p2.read_bytes()

    def test_corrupt_record_detected(self, tmp_path):
        corpus = sd.generate_corpus(tiny_cfg(train_utts=2))
        path = tmp_path / "train.bin"
        sd.save_split(path, corpus.train)
        blob = bytearray(path.read_bytes())
        blob = blob[: len(blob) - 7]  # truncate mid-record
        path.write_bytes(bytes(blob))
        with pytest.raises(CheckpointError):
            sd.load_split(path)

    def test_corpus_dir_round_trip(self, tmp_path):
        corpus = sd.generate_corpus(tiny_cfg())
        sd.save_corpus(tmp_path / "data", corpus)
        loaded = sd.load_corpus(tmp_path / "data")
        for split in sd.SPLITS:
            for a, b in zip(corpus.splits[split], loaded.splits[split]):
                assert np.array_equal(a.frames, b.frames)
        manifest = (tmp_path / "data" / "train.manifest.txt").read_text()
        first = corpus.train[0]
        assert manifest.splitlines()[0] == f"{first.id}\t{first.n}\t{first.m}"

    def test_missing_split_rejected(self, tmp_path):
        with pytest.raises(ContractError):
            sd.load_corpus(tmp_path)
