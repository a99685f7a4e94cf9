"""Acceptance suite: one test per top-level criterion, each printing a
PASS/FAIL line (run with ``pytest -s tests/test_acceptance.py -v``).

Criterion 6 (late-epoch stability ordering vs the chi-square baseline) is
implemented exactly as stated and is expected to fail at this scale: the
chi-square trainer converges and freezes on the synthetic benchmark while
the debiasing adapter's equilibrium is actively maintained, so its
worst-group trace keeps a quantization-level jitter on the small
evaluation cells.  The README's testing section records the analysis.
"""
import math
import time

import numpy as np
import pytest

from subpop import adapter, cli, dro, ldro, losses, store, synth, zeroshot
from subpop.losses import LdroConfig


def record(name: str, passed: bool, detail: str = "") -> None:
    status = "PASS" if passed else "FAIL"
    print(f"\n{status}: {name}" + (f"  [{detail}]" if detail else ""))
    assert passed, f"{name} failed: {detail}"


@pytest.fixture(scope="module")
def default_data():
    return synth.generate(synth.SynthConfig())


@pytest.fixture(scope="module")
def zero_shot_report(default_data):
    clf = zeroshot.Classifier(default_data.prompts.classification.data)
    return zeroshot.evaluate(clf, default_data.test)


def test_c1_gradient_soundness():
    t0 = time.time()
    rng = np.random.default_rng(101)
    e, b, s, c = 8, 4, 3, 2
    net = adapter.init_adapter(e=e, depth=2, h=e, alpha=1.0, seed=11)
    batch = rng.standard_normal((b, e))
    direction_rows = rng.standard_normal((s, e))
    class_texts = rng.standard_normal((c, e))
    labels = rng.integers(0, c, b)
    cfg = LdroConfig(eta=0.2)

    def entropy_fn(out):
        h, dh = losses._entropy_rows_grad(out @ direction_rows.T)
        return float(h.mean()), (dh @ direction_rows) / b

    def cosine_fn(out):
        vals, grad = np.empty(b), np.zeros_like(out)
        for i in range(b):
            vals[i], g = losses.cosine_sim_grad(batch[i], out[i])
            grad[i] = g / b
        return float(vals.mean()), grad

    def ce_fn(out):
        return losses.weighted_cross_entropy_grad(out, class_texts, labels, 3.0, None)

    def ldro_fn(out):
        return losses.ldro_objective(batch, out, [direction_rows], cfg)

    worst = 0.0
    for name, fn in (("entropy", entropy_fn), ("cosine", cosine_fn),
                     ("cross-entropy", ce_fn), ("ldro", ldro_fn)):
        rep = adapter.grad_check(net, fn, batch, step_size=1e-5, tol=1e-5)
        worst = max(worst, rep.max_rel_err)
        assert rep.passed, f"{name}: max rel err {rep.max_rel_err:.2e}"
    elapsed = time.time() - t0
    record(
        "C1 gradient soundness (all losses through 2-layer adapter, tol 1e-5)",
        worst <= 1e-5 and elapsed < 5.0,
        f"max rel err {worst:.2e}, {elapsed:.1f}s",
    )


def test_c2_entropy_law():
    rng = np.random.default_rng(102)
    ok = True
    for _ in range(1000):
        s = int(rng.integers(2, 9))
        a = rng.standard_normal(s) * rng.uniform(0.1, 50)
        h = losses.entropy_loss(a)
        ok &= -1e-9 <= h <= math.log(s) + 1e-9
        ok &= abs(losses.entropy_loss(a + rng.uniform(-100, 100)) - h) <= 1e-9
    for s in range(2, 9):
        ok &= abs(losses.entropy_loss(np.zeros(s)) - math.log(s)) <= 1e-9
    record("C2 entropy law (bounds, uniform equality, shift invariance)", bool(ok))


def test_c3_cvar_dual_primal(default_data):
    rng = np.random.default_rng(103)
    max_gap = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 65))
        l = rng.standard_normal(n) * rng.uniform(0.1, 5)
        for alpha in (0.1, 0.25, 0.5, 1.0):
            value, _ = dro.cvar_risk(l, alpha)
            dual = min(
                float(eta + np.maximum(l - eta, 0.0).mean() / alpha) for eta in l
            )
            max_gap = max(max_gap, abs(value - dual))
    small = synth.generate(synth.SynthConfig(n=600, seed=31))
    a_cvar, _ = dro.train_dro(
        small.train, small.prompts, dro.DroConfig(method="cvar", alpha=1.0, seed=5, epochs=3)
    )
    a_erm, _ = dro.train_dro(
        small.train, small.prompts, dro.DroConfig(method="erm", seed=5, epochs=3)
    )
    identical = a_cvar.param_bytes() == a_erm.param_bytes()
    record(
        "C3 tail-risk dual equals sorted primal; alpha=1 training is step-identical to ERM",
        max_gap <= 1e-6 and identical,
        f"max dual-primal gap {max_gap:.2e}",
    )


def test_c4_chi2_dual_vs_bruteforce():
    from test_dro import active_set_max, simplex_grid_max_3

    rng = np.random.default_rng(104)
    max_gap = 0.0
    for rho in (0.1, 1.0):
        for _ in range(5):
            l3 = rng.uniform(0, 3, 3)
            value, _ = dro.chi2_risk(l3, rho)
            max_gap = max(max_gap, abs(value - simplex_grid_max_3(l3, rho)))
        for n in (3, 4, 5, 6):
            for _ in range(5):
                l = rng.uniform(0, 3, n)
                value, _ = dro.chi2_risk(l, rho)
                max_gap = max(max_gap, abs(value - active_set_max(l, rho)))
    monotone = True
    for _ in range(30):
        l = rng.standard_normal(10)
        vals = [dro.chi2_risk(l, r)[0] for r in (0.05, 0.1, 0.5, 1.0, 4.0)]
        monotone &= all(vals[i] <= vals[i + 1] + 1e-9 for i in range(4))
    record(
        "C4 chi-square dual matches constrained primal maximization; nondecreasing in rho",
        max_gap <= 1e-3 and monotone,
        f"max gap {max_gap:.2e}",
    )


def test_c5_synthetic_debiasing_end_to_end(default_data, zero_shot_report):
    t0 = time.time()
    zs = zero_shot_report
    attrs = synth.attr_from_group(default_data.test.groups)
    probe_raw = synth.group_probe(default_data.test.embeddings, attrs, default_data.v_group)
    run = ldro.LdroRun(seed=0, epochs=50)
    assert run.cfg.eta == 0.2
    trained, rep = ldro.train_ldro(
        default_data.train, default_data.prompts, run,
        val=default_data.val, test=default_data.test,
    )
    final = rep.rows[-1].reports["test"]
    clf = zeroshot.Classifier(default_data.prompts.classification.data, (trained,))
    adapted = zeroshot.apply_chain(
        clf, default_data.test.embeddings.data, already_normalized=True
    )
    probe_adapted = synth.group_probe(adapted, attrs, default_data.v_group)
    elapsed = time.time() - t0

    gates = {
        "zs avg >= 0.85": zs.average_acc >= 0.85,
        "zs worst <= 0.75": zs.worst_group_acc <= 0.75,
        "worst +10pts": final.worst_group_acc >= zs.worst_group_acc + 0.10,
        "avg within 3pts": abs(final.average_acc - zs.average_acc) <= 0.03,
        "probe raw >= 0.90": probe_raw >= 0.90,
        "probe adapted <= 0.60": probe_adapted <= 0.60,
        "runtime < 60s": elapsed < 60.0,
    }
    record(
        "C5 synthetic debiasing end-to-end (worst-group recovery without labels)",
        all(gates.values()),
        f"zs {zs.average_acc:.3f}/{zs.worst_group_acc:.3f} -> "
        f"{final.average_acc:.3f}/{final.worst_group_acc:.3f}, "
        f"probe {probe_raw:.2f}->{probe_adapted:.2f}, {elapsed:.0f}s; "
        + ", ".join(k for k, v in gates.items() if not v),
    )


@pytest.fixture(scope="module")
def ten_seed_traces(default_data):
    data = default_data
    ld, chi = [], []
    for seed in range(10):
        _, rep = ldro.train_ldro(
            data.train, data.prompts, ldro.LdroRun(seed=seed, epochs=50),
            val=data.val, test=data.test,
        )
        ld.append(rep.series("test", "worst_group_acc"))
        _, rep2 = dro.train_dro(
            data.train, data.prompts,
            dro.DroConfig(method="chi2", seed=seed, epochs=50),
            val=data.val, test=data.test,
        )
        chi.append(rep2.series("test", "worst_group_acc"))
    return np.array(ld), np.array(chi)


def test_c6_stability_ordering(ten_seed_traces):
    ld, chi = ten_seed_traces
    ld_std = float(np.mean([np.std(t[-20:]) for t in ld]))
    chi_std = float(np.mean([np.std(t[-20:]) for t in chi]))
    record(
        "C6 late-epoch stability: debias-adapter std <= chi-square std (known red, see README)",
        ld_std <= chi_std,
        f"ldro {ld_std:.4f} vs chi2 {chi_std:.4f} over final 20 epochs, 10 seeds",
    )


def test_c7_label_blindness(default_data):
    data = default_data.train
    run = ldro.LdroRun(seed=9, epochs=3)
    a_full, _ = ldro.train_ldro(data, default_data.prompts, run)
    rng = np.random.default_rng(0)
    shuffled = store.GroupedDataset(
        data.embeddings, rng.permutation(data.labels), rng.permutation(data.groups),
        data.class_count, data.group_count,
    )
    a_shuf, _ = ldro.train_ldro(shuffled, default_data.prompts, run)
    stripped = store.GroupedDataset(
        data.embeddings, None, None, data.class_count, data.group_count
    )
    a_none, _ = ldro.train_ldro(stripped, default_data.prompts, run)
    record(
        "C7 label blindness: shuffled or deleted labels leave the adapter byte-identical",
        a_full.param_bytes() == a_shuf.param_bytes() == a_none.param_bytes(),
    )


def test_c8_stacked_dispersion(default_data):
    data = default_data
    plain, stacked = [], []
    for seed in range(10):
        cfg = dro.DroConfig(method="cvar", alpha=0.2, seed=seed, epochs=50, depth=3)
        _, rep = dro.train_dro(data.train, data.prompts, cfg, val=data.val, test=data.test)
        plain.append(rep.rows[rep.selected_epoch].reports["test"].worst_group_acc)
        run = ldro.LdroRun(seed=seed, epochs=50)
        cfg2 = dro.DroConfig(method="cvar", alpha=0.2, seed=seed, epochs=50)
        _, rep2 = ldro.train_stacked(
            data.train, data.prompts, run, cfg2, val=data.val, test=data.test
        )
        stacked.append(rep2.rows[rep2.selected_epoch].reports["test"].worst_group_acc)
    record(
        "C8 stacked-adapter dispersion: debias+tail-risk seed-std <= plain tail-risk seed-std",
        float(np.std(stacked)) <= float(np.std(plain)),
        f"stacked {np.std(stacked):.4f} (mean {np.mean(stacked):.3f}) vs "
        f"plain {np.std(plain):.4f} (mean {np.mean(plain):.3f})",
    )


def test_c9_format_roundtrip_and_manifest_reruns(tmp_path):
    rng = np.random.default_rng(109)
    bitexact = True
    for _ in range(30):
        n, e = int(rng.integers(0, 50)), int(rng.integers(1, 40))
        m = store.EmbeddingMatrix(rng.standard_normal((n, e)).astype(np.float32))
        path = tmp_path / "rt.ldeb"
        store.write_embeddings(m, path)
        bitexact &= store.read_embeddings(path).data.tobytes() == m.data.tobytes()

    data_dir = tmp_path / "data"
    assert cli.main(["synth", "--out", str(data_dir), "--n", "600", "--seed", "2"]) == 0
    first = tmp_path / "first"
    assert cli.main([
        "train", "--data", str(data_dir), "--out", str(first), "--method", "cvar",
        "--epochs", "3", "--repeats", "2", "--seed", "0",
    ]) == 0
    second = tmp_path / "second"
    assert cli.main(["train", "--from-manifest", str(first / "manifest.txt"),
                     "--out", str(second)]) == 0
    reruns = True
    for rel in ("rep00/metrics.tsv", "rep01/metrics.tsv",
                "rep00/report_test_selected.txt", "rep01/report_val_selected.txt"):
        reruns &= (first / rel).read_bytes() == (second / rel).read_bytes()
    clone = tmp_path / "clone"
    assert cli.main(["synth", "--from-manifest", str(data_dir / "manifest.txt"),
                     "--out", str(clone)]) == 0
    for name in ("train.ldeb", "val.ldeb", "test.ldeb", "train.csv"):
        reruns &= (clone / name).read_bytes() == (data_dir / name).read_bytes()
    record(
        "C9 format round-trip bitwise identity; manifest reruns reproduce metric files",
        bitexact and reruns,
    )
