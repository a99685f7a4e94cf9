import numpy as np
import pytest

from subpop import store, zeroshot
from subpop.errors import ValidationError
from subpop.synth import SynthConfig, attr_from_group, generate, group_probe


def test_generate_deterministic():
    a = generate(SynthConfig(n=200, seed=5))
    b = generate(SynthConfig(n=200, seed=5))
    assert a.train.embeddings.data.tobytes() == b.train.embeddings.data.tobytes()
    assert np.array_equal(a.test.labels, b.test.labels)
    assert a.prompts.classification.data.tobytes() == b.prompts.classification.data.tobytes()
    c = generate(SynthConfig(n=200, seed=6))
    assert a.train.embeddings.data.tobytes() != c.train.embeddings.data.tobytes()


def test_planted_geometry():
    res = generate(SynthConfig(n=500, seed=2))
    assert abs(float(res.v_class @ res.v_group)) <= 1e-9
    assert np.linalg.norm(res.v_class) == pytest.approx(1.0, abs=1e-9)
    for split in res.splits().values():
        norms = np.linalg.norm(split.embeddings.data.astype(np.float64), axis=1)
        assert np.abs(norms - 1.0).max() <= 1e-6


def test_split_sizes():
    res = generate(SynthConfig(n=1000, seed=1))
    assert res.train.count == 700
    assert res.val.count == 150
    assert res.test.count == 150


def test_config_validation():
    with pytest.raises(ValidationError):
        SynthConfig(e=1)
    with pytest.raises(ValidationError):
        SynthConfig(p_spur=0.4)
    with pytest.raises(ValidationError):
        SynthConfig(p_spur=1.0)


def test_clean_prompts_give_near_perfect_zero_shot():
    res = generate(SynthConfig(beta=0.0, sigma=0.01, a_cls=1.0, n=2000, seed=4))
    rep = zeroshot.evaluate(zeroshot.Classifier(res.prompts.classification.data), res.test)
    assert all(acc >= 0.99 for acc, n in zip(rep.group_acc, rep.counts) if n > 0)


def test_no_spurious_correlation_balances_cells():
    res = generate(SynthConfig(p_spur=0.5, n=8000, seed=9))
    counts = np.bincount(res.train.groups, minlength=4)
    assert counts.min() > 0.8 * res.train.count / 4
    assert counts.max() < 1.2 * res.train.count / 4


def test_default_config_zero_shot_gates():
    res = generate(SynthConfig())
    rep = zeroshot.evaluate(zeroshot.Classifier(res.prompts.classification.data), res.test)
    assert rep.average_acc >= 0.85
    assert rep.worst_group_acc <= 0.75
    # planted-bias gap: worst below average by >= 10 points
    assert rep.average_acc - rep.worst_group_acc >= 0.10


def test_group_probe_raw_embeddings():
    res = generate(SynthConfig())
    attrs = attr_from_group(res.test.groups)
    assert group_probe(res.test.embeddings, attrs, res.v_group) >= 0.9


def test_group_probe_projected_out_is_chance():
    res = generate(SynthConfig())
    x = res.test.embeddings.data.astype(np.float64)
    proj = x - np.outer(x @ res.v_group, res.v_group)
    # stored as float32 like every embedding in the pipeline, the probe
    # sees only rounding noise along the projected-out direction
    proj32 = store.EmbeddingMatrix(proj.astype(np.float32))
    attrs = attr_from_group(res.test.groups)
    assert 0.45 <= group_probe(proj32, attrs, res.v_group) <= 0.55


def test_group_probe_random_labels_is_chance():
    res = generate(SynthConfig())
    rng = np.random.default_rng(0)
    fake = rng.integers(0, 2, res.test.count)
    acc = group_probe(res.test.embeddings, fake, res.v_group)
    assert abs(acc - 0.5) <= 0.03


def test_emits_standard_files(tmp_path):
    res = generate(SynthConfig(n=300, seed=8))
    for split, ds in res.splits().items():
        store.save_split(ds, tmp_path, split)
    store.save_prompt_set(res.prompts, tmp_path)
    back = store.load_split(tmp_path, "train", class_count=2, group_count=4)
    assert back.embeddings.data.tobytes() == res.train.embeddings.data.tobytes()
    prompts = store.load_prompt_set(tmp_path / "prompts.csv")
    assert prompts.class_count == 2
    assert len(prompts.debias_groups) == 1
    assert prompts.debias_groups[0].count == 2
