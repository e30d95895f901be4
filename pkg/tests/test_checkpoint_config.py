import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctkt import checkpoint as ck
from ctkt import config as cfg_mod
from ctkt.errors import CheckpointError, ConfigError


class TestFnv:
    def test_published_vectors(self):
        assert ck.fnv1a64(b"") == 0xCBF29CE484222325
        assert ck.fnv1a64(b"a") == 0xAF63DC4C8601EC8C
        assert ck.fnv1a64(b"foobar") == 0x85944171F73967E8


def random_arrays(rng):
    return {
        "scalar": rng.standard_normal(()),
        "vec": rng.standard_normal(5),
        "mat": rng.standard_normal((3, 4)),
        "cube": rng.standard_normal((2, 2, 2)),
    }


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        arrays = random_arrays(np.random.default_rng(0))
        path = tmp_path / "m.ckpt"
        ck.save_checkpoint(path, arrays)
        loaded = ck.load_checkpoint(path)
        assert list(loaded) == list(arrays)
        for k in arrays:
            assert np.array_equal(loaded[k], np.asarray(arrays[k]))

    def test_save_load_save_identical_bytes(self, tmp_path):
        arrays = random_arrays(np.random.default_rng(1))
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        ck.save_checkpoint(p1, arrays)
        ck.save_checkpoint(p2, ck.load_checkpoint(p1))
        assert p1.read_bytes() == p2.read_bytes()

    def test_magic_bytes(self, tmp_path):
        path = tmp_path / "m.ckpt"
        ck.save_checkpoint(path, {"x": np.zeros(2)})
        assert path.read_bytes()[:4] == b"CTKT"

    @pytest.mark.parametrize("offset", [0, 4, 9, -9, -1])
    def test_corrupted_byte_detected(self, tmp_path, offset):
        path = tmp_path / "m.ckpt"
        ck.save_checkpoint(path, random_arrays(np.random.default_rng(2)))
        blob = bytearray(path.read_bytes())
        blob[offset] ^= 0x40
        path.write_bytes(bytes(blob))
        with pytest.raises(CheckpointError):
            ck.load_checkpoint(path)

    def test_truncated_detected(self, tmp_path):
        path = tmp_path / "m.ckpt"
        path.write_bytes(b"CTKT\x01")
        with pytest.raises(CheckpointError, match="truncated"):
            ck.load_checkpoint(path)

    def test_atomic_write_leaves_no_tmp(self, tmp_path):
        path = tmp_path / "m.ckpt"
        ck.save_checkpoint(path, {"x": np.ones(3)})
        assert not (tmp_path / "m.ckpt.tmp").exists()

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1))
    def test_round_trip_random_shapes(self, tmp_path_factory, seed):
        rng = np.random.default_rng(seed)
        arrays = {
            f"t{i}": rng.standard_normal(tuple(rng.integers(1, 4, size=rng.integers(0, 3))))
            for i in range(int(rng.integers(1, 5)))
        }
        path = tmp_path_factory.mktemp("ck") / "m.ckpt"
        ck.save_checkpoint(path, arrays)
        loaded = ck.load_checkpoint(path)
        for k, v in arrays.items():
            assert np.array_equal(loaded[k], np.asarray(v))


class TestModelCheckpointRoundTrip:
    def test_model_params_meta_round_trip(self, tmp_path):
        from conftest import tiny_model_cfg
        from ctkt import model as mm

        for variant in mm.VARIANTS:
            mp = mm.ModelParams.build(tiny_model_cfg(variant), seed=3)
            path = tmp_path / f"{variant}.ckpt"
            ck.save_checkpoint(path, mp.to_arrays())
            back = mm.ModelParams.from_arrays(ck.load_checkpoint(path))
            assert back.cfg == mp.cfg
            assert back.checksum() == mp.checksum()

    def test_teacher_round_trip(self, tmp_path, tiny_teachers):
        from ctkt import teacher as tch

        t = tiny_teachers["unidirectional"]
        path = tmp_path / "t.ckpt"
        ck.save_checkpoint(path, tch.teacher_to_arrays(t))
        back = tch.teacher_from_arrays(ck.load_checkpoint(path))
        assert back.cfg == t.cfg
        assert back.checksum() == t.checksum()
        lp_a = tch.next_token_logprobs(t, (1, 2))
        lp_b = tch.next_token_logprobs(back, (1, 2))
        assert np.array_equal(lp_a, lp_b)

    def test_student_checkpoint_is_not_a_teacher(self, tmp_path):
        from conftest import tiny_model_cfg
        from ctkt import model as mm
        from ctkt import teacher as tch

        mp = mm.ModelParams.build(tiny_model_cfg(), seed=1)
        path = tmp_path / "s.ckpt"
        ck.save_checkpoint(path, mp.to_arrays())
        with pytest.raises(CheckpointError):
            tch.teacher_from_arrays(ck.load_checkpoint(path))


class TestConfig:
    def test_defaults_parse_back(self):
        cfg = cfg_mod.parse_text(cfg_mod.defaults_text())
        assert cfg["corpus.vocab_size"] == 16
        assert cfg["train.variant"] == "vanilla"

    def test_parse_serialize_parse_identity(self):
        text = "out.dir = runs/x\ncorpus.vocab_size = 8\nloss.lambda = 0.25\n"
        cfg = cfg_mod.parse_text(text)
        again = cfg_mod.parse_text(cfg_mod.serialize(cfg))
        assert again == cfg

    def test_comments_and_blanks(self):
        cfg = cfg_mod.parse_text("# comment\n\nout.dir = x  # trailing\n")
        assert cfg["out.dir"] == "x"

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="mystery"):
            cfg_mod.parse_text("out.dir = x\ncorpus.mystery = 1\n")

    def test_missing_required_key_named(self):
        with pytest.raises(ConfigError, match="out.dir"):
            cfg_mod.parse_text("corpus.vocab_size = 8\n")

    def test_duplicate_key_rejected(self):
        with pytest.raises(ConfigError, match="duplicate"):
            cfg_mod.parse_text("out.dir = x\nout.dir = y\n")

    def test_bad_type_rejected(self):
        with pytest.raises(ConfigError, match="vocab_size"):
            cfg_mod.parse_text("out.dir = x\ncorpus.vocab_size = many\n")

    def test_bad_choice_rejected(self):
        with pytest.raises(ConfigError, match="variant"):
            cfg_mod.parse_text("out.dir = x\ntrain.variant = resnet\n")

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1))
    def test_round_trip_random_configs(self, seed):
        rng = np.random.default_rng(seed)
        cfg = cfg_mod.defaults_dict()
        cfg["corpus.noise_sigma"] = float(rng.uniform(0, 3))
        cfg["train.base_lr"] = float(rng.uniform(1e-4, 1.0))
        cfg["train.seed"] = int(rng.integers(0, 10 ** 6))
        cfg["train.variant"] = ["vanilla", "kt-rl-cif", "kt-rl-att", "kt-cl"][rng.integers(0, 4)]
        again = cfg_mod.parse_text(cfg_mod.serialize(cfg))
        assert again == cfg

    def test_typed_views(self):
        cfg = cfg_mod.parse_text("out.dir = x\ntrain.variant = kt-cl\n")
        assert cfg_mod.resolve_directionality(cfg) == "unidirectional"
        cfg2 = cfg_mod.parse_text("out.dir = x\ntrain.variant = kt-rl-cif\n")
        assert cfg_mod.resolve_directionality(cfg2) == "bidirectional"
        assert cfg_mod.corpus_config(cfg).vocab_size == 16
        assert cfg_mod.model_config(cfg).variant == "kt-cl"
        assert cfg_mod.train_config(cfg).loss.aux_kind == "cosine"
        assert cfg_mod.teacher_config(cfg).directionality == "unidirectional"
