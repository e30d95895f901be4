"""Self-check suites: oracle equivalence, gradients, CIF invariants,
masking, and decoder agreement.

Each suite returns a SuiteReport with its seed so any failure can be
reproduced; `run_all` powers the CLI `verify` command and the
acceptance tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import alignment as al
from . import autodiff as ad
from . import ctc as ctc_mod
from . import losses as loss_mod
from . import model as model_mod
from . import oracles
from . import synthdata as sd
from . import teacher as tch
from .autodiff import Tensor
from .errors import InfeasibleAlignmentError
from .gradcheck import check_gradients


@dataclass
class SuiteReport:
    name: str
    passed: int = 0
    failed: int = 0
    seed: int = 0
    failures: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.failed == 0

    def check(self, condition: bool, detail: str):
        if condition:
            self.passed += 1
        else:
            self.failed += 1
            if len(self.failures) < 8:
                self.failures.append(detail)

    def line(self) -> str:
        status = "ok" if self.ok else "FAIL"
        return f"{self.name:<12} {status:<4} {self.passed}/{self.passed + self.failed} checks (seed={self.seed})"


def ctc_oracle_suite(n_cases: int = 200, n_conservation: int = 20, seed: int = 20260501) -> SuiteReport:
    """Forward recursion vs exhaustive path enumeration, plus total mass."""
    report = SuiteReport("ctc-oracle", seed=seed)
    rng = np.random.default_rng(seed)
    done = 0
    while done < n_cases:
        m = int(rng.integers(1, 7))
        v = int(rng.integers(2, 5))
        n = int(rng.integers(0, 4))
        target = tuple(int(x) for x in rng.integers(1, v, size=n))
        if m < ctc_mod.min_frames(target):
            continue
        lp = oracles.random_log_prob_matrix(rng, m, v)
        got = ctc_mod.ctc_loss(Tensor(lp), target).item()
        want = oracles.brute_force_neg_log_prob(lp, target)
        report.check(abs(got - want) <= 1e-9,
                     f"loss mismatch {got!r} vs {want!r} (M={m} V={v} target={target})")
        done += 1
    for _ in range(n_conservation):
        m = int(rng.integers(2, 5))
        v = int(rng.integers(2, 4))
        lp = oracles.random_log_prob_matrix(rng, m, v)
        total = 0.0
        for tr_ in oracles.all_transcripts(v, m):
            if m >= ctc_mod.min_frames(tr_):
                total += math.exp(-ctc_mod.ctc_loss(Tensor(lp), tr_).item())
        report.check(abs(total - 1.0) <= 1e-6, f"probability mass {total!r} != 1 (M={m} V={v})")
    return report


def _tiny_utterance(rng, vocab=4, d_in=3):
    n = int(rng.integers(2, 4))
    tokens = [int(rng.integers(1, vocab + 1))]
    while len(tokens) < n:
        c = int(rng.integers(1, vocab + 1))
        if c != tokens[-1]:
            tokens.append(c)
    m = int(rng.integers(2 * n, 2 * n + 4))
    frames = rng.standard_normal((m, d_in))
    return sd.Utterance(id=f"g-{rng.integers(1e9)}", frames=frames, transcript=tuple(tokens))


def gradient_suite(n_seeds: int = 20, seed: int = 20260502, quick: bool = False) -> SuiteReport:
    """Finite-difference agreement for every differentiable piece."""
    report = SuiteReport("gradients", seed=seed)
    if quick:
        n_seeds = 3
    vocab, d_in = 4, 3
    teachers = {
        "bidirectional": tch.build_teacher(vocab, d_model=8, layers=1, heads=2, ffn_dim=12,
                                           directionality="bidirectional", seed=seed % 1000),
        "unidirectional": tch.build_teacher(vocab, d_model=8, layers=1, heads=2, ffn_dim=12,
                                            directionality="unidirectional", seed=seed % 1000 + 1),
    }
    for trial in range(n_seeds):
        rng = np.random.default_rng(seed + trial)

        # ctc loss wrt log-probabilities
        target = tuple(int(x) for x in rng.integers(1, 4, size=2))
        m = ctc_mod.min_frames(target) + int(rng.integers(1, 4))
        lp = Tensor(oracles.random_log_prob_matrix(rng, m, 4), requires_grad=True)
        worst, _ = check_gradients(lambda: ctc_mod.ctc_loss(lp, target), [lp])
        report.check(worst <= 1e-4, f"ctc grad rel err {worst:.2e} (trial {trial})")

        # cosine / mse / cross-entropy
        a = Tensor(rng.standard_normal((3, 4)) + 0.2, requires_grad=True)
        b = Tensor(rng.standard_normal((3, 4)) + 0.2, requires_grad=True)
        logits = Tensor(rng.standard_normal((3, 5)), requires_grad=True)
        tgt = tuple(int(x) for x in rng.integers(0, 5, size=3))
        for name, build in (
            ("cosine", lambda: loss_mod.cosine_embedding_loss(a, b, 20.0)),
            ("mse", lambda: loss_mod.mse_aux_loss(a, b)),
            ("cross-entropy", lambda: loss_mod.cross_entropy(logits, tgt)),
        ):
            worst, _ = check_gradients(build, [a, b, logits])
            report.check(worst <= 1e-4, f"{name} grad rel err {worst:.2e} (trial {trial})")

        # cross attention
        p = al.AttentionParams.create(4, 2, rng)
        q = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        kv = Tensor(rng.standard_normal((4, 4)), requires_grad=True)
        probe = Tensor(rng.standard_normal((3, 4)))
        worst, _ = check_gradients(
            lambda: ad.tsum(ad.mul(al.mha_cross(q, kv, p), probe)),
            [q, kv, p.wq, p.wk, p.wv, p.wo],
        )
        report.check(worst <= 1e-4, f"mha grad rel err {worst:.2e} (trial {trial})")

        # weight -> rescale -> fire chain, away from fire boundaries
        n_fire, m_fire, d = 2, 5, 3
        while True:
            h_raw = rng.standard_normal((m_fire, d))
            fcw = rng.standard_normal((d, 4)) * 0.7
            fcb = rng.standard_normal(4) * 0.1
            with ad.no_grad():
                w = al.cif_weights(Tensor(h_raw), Tensor(fcw), Tensor(fcb))
                w_hat = al.scale_weights(w, n_fire)
            cums = np.cumsum(w_hat.data)[:-1]
            if np.min(np.abs(cums - np.round(cums))) > 5e-3:
                break
        ht = Tensor(h_raw, requires_grad=True)
        fw = Tensor(fcw, requires_grad=True)
        fb = Tensor(fcb, requires_grad=True)
        probe2 = Tensor(rng.standard_normal((n_fire, d)))

        def cif_chain():
            w = al.cif_weights(ht, fw, fb)
            return ad.tsum(ad.mul(al.cif_fire(al.scale_weights(w, n_fire), ht, n_fire), probe2))

        worst, _ = check_gradients(cif_chain, [ht, fw, fb])
        report.check(worst <= 1e-4, f"cif chain grad rel err {worst:.2e} (trial {trial})")

        # full variant losses
        utt = _tiny_utterance(rng, vocab=vocab, d_in=d_in)
        for variant in model_mod.VARIANTS:
            cfg = model_mod.ModelConfig(vocab_size=vocab, d_in=d_in, d_model=8, layers=1,
                                        heads=2, ffn_dim=12, dropout=0.0, variant=variant)
            mp = model_mod.ModelParams.build(cfg, seed=seed + trial)
            teacher = None
            if variant == "kt-cl":
                teacher = teachers["unidirectional"]
            elif variant != "vanilla":
                teacher = teachers["bidirectional"]

            def build():
                return model_mod.forward_variant(mp, utt, teacher=teacher).loss

            worst, n_checked = check_gradients(
                build, list(mp.params.values()), max_coords_per_tensor=3,
                rng=np.random.default_rng(seed + trial),
            )
            report.check(worst <= 1e-4 and n_checked > 0,
                         f"{variant} grad rel err {worst:.2e} (trial {trial})")
    return report


def cif_suite(n_cases: int = 500, seed: int = 20260503) -> SuiteReport:
    """Fire count, convexity and mass bookkeeping on random inputs."""
    report = SuiteReport("cif", seed=seed)
    rng = np.random.default_rng(seed)
    for case in range(n_cases):
        n = int(rng.integers(1, 8))
        m = int(rng.integers(n, 3 * n + 4))
        w = rng.uniform(1e-3, 1.0 - 1e-3, size=m)
        with ad.no_grad():
            w_hat = al.scale_weights(Tensor(w), n)
            report.check(abs(w_hat.data.sum() - n) <= 1e-9,
                         f"rescaled mass {w_hat.data.sum()!r} != {n} (case {case})")
            coeff = al.cif_fire(w_hat, Tensor(np.eye(m)), n).data
        report.check(coeff.shape[0] == n, f"fired {coeff.shape[0]} != {n} (case {case})")
        report.check(
            bool(np.all(coeff >= -1e-12)) and bool(np.max(np.abs(coeff.sum(axis=1) - 1.0)) <= 1e-9),
            f"non-convex fire coefficients (case {case})",
        )
        report.check(
            bool(np.max(np.abs(coeff.sum(axis=0) - w_hat.data)) <= 1e-9),
            f"per-frame mass not conserved (case {case})",
        )
    return report


def masking_suite(n_trials: int = 50, seed: int = 20260504) -> SuiteReport:
    """Future-token invariance for kt-cl and teacher directionality."""
    report = SuiteReport("masking", seed=seed)
    vocab, d_in = 5, 3
    for trial in range(n_trials):
        rng = np.random.default_rng(seed + trial)
        uni = tch.build_teacher(vocab, d_model=8, layers=1, heads=2, ffn_dim=12,
                                directionality="unidirectional", seed=trial)
        bi = tch.build_teacher(vocab, d_model=8, layers=1, heads=2, ffn_dim=12,
                               directionality="bidirectional", seed=trial)
        tokens = [int(rng.integers(1, vocab + 1)) for _ in range(5)]
        j = int(rng.integers(1, len(tokens)))
        pert = list(tokens)
        pert[j] = pert[j] % vocab + 1

        g0 = tch.teacher_embed(uni, tokens).data
        g1 = tch.teacher_embed(uni, pert).data
        report.check(np.max(np.abs(g0[:j] - g1[:j])) <= 1e-12,
                     f"unidirectional leak at trial {trial} (j={j})")

        e0 = tch.teacher_embed(bi, tokens).data
        e1 = tch.teacher_embed(bi, pert).data
        report.check(np.max(np.abs(e0[:j] - e1[:j])) > 1e-9,
                     f"bidirectional teacher insensitive at trial {trial} (j={j})")

        cfg = model_mod.ModelConfig(vocab_size=vocab, d_in=d_in, d_model=8, layers=1,
                                    heads=2, ffn_dim=12, dropout=0.0, variant="kt-cl")
        mp = model_mod.ModelParams.build(cfg, seed=trial)
        frames = rng.standard_normal((8, d_in))
        with ad.no_grad():
            h = model_mod.encode(mp, frames)
            base = model_mod.ktcl_positional_logits(mp, h, uni, tuple(tokens)).data
            after = model_mod.ktcl_positional_logits(mp, h, uni, tuple(pert)).data
        report.check(np.max(np.abs(base[:j] - after[:j])) <= 1e-12,
                     f"kt-cl output leaks future tokens at trial {trial} (j={j})")
    return report


def decoder_suite(n_posterior: int = 100, n_peaked: int = 50, seed: int = 20260505) -> SuiteReport:
    """Beam search vs exhaustive posterior, greedy agreement, LM off-switch."""
    report = SuiteReport("decoder", seed=seed)
    rng = np.random.default_rng(seed)
    for case in range(n_posterior):
        m = int(rng.integers(1, 5))
        v = int(rng.integers(2, 4))
        lp = oracles.random_log_prob_matrix(rng, m, v)
        got = ctc_mod.prefix_beam_search(lp, v ** m)
        want_tr, want_score = oracles.posterior_argmax(lp)
        report.check(got[0][0] == want_tr and abs(got[0][1] - want_score) <= 1e-9,
                     f"beam top-1 {got[0]!r} != oracle {(want_tr, want_score)!r} (case {case})")
    for case in range(n_peaked):
        m = int(rng.integers(2, 7))
        v = int(rng.integers(2, 5))
        lp = oracles.random_log_prob_matrix(rng, m, v, peaked=True)
        top = ctc_mod.prefix_beam_search(lp, 1)[0][0]
        report.check(top == ctc_mod.greedy_decode(lp),
                     f"beam=1 != greedy on peaked case {case}")
    class _Flat:
        def next_token_logprobs(self, prefix):
            return np.full(8, -math.log(8.0))

    for case in range(20):
        lp = oracles.random_log_prob_matrix(rng, 4, 3)
        plain = ctc_mod.prefix_beam_search(lp, 5)
        zero = ctc_mod.prefix_beam_search(lp, 5, lm=_Flat(), lm_weight=0.0)
        report.check(plain == zero, f"lm_weight=0 differs from no-LM (case {case})")
    return report


def _guard(name: str, fn) -> SuiteReport:
    """An exception inside a suite is a failure, not a crash."""
    try:
        return fn()
    except Exception as exc:  # noqa: BLE001 - converted into a report
        rep = SuiteReport(name)
        rep.check(False, f"suite raised {type(exc).__name__}: {exc}")
        return rep


def run_all(quick: bool = False) -> list:
    if quick:
        suites = [
            ("ctc-oracle", lambda: ctc_oracle_suite(n_cases=30, n_conservation=4)),
            ("gradients", lambda: gradient_suite(quick=True)),
            ("cif", lambda: cif_suite(n_cases=60)),
            ("masking", lambda: masking_suite(n_trials=8)),
            ("decoder", lambda: decoder_suite(n_posterior=20, n_peaked=10)),
        ]
    else:
        suites = [
            ("ctc-oracle", ctc_oracle_suite),
            ("gradients", gradient_suite),
            ("cif", cif_suite),
            ("masking", masking_suite),
            ("decoder", decoder_suite),
        ]
    return [_guard(name, fn) for name, fn in suites]
