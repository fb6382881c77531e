import numpy as np
import pytest

from cfeval import train as tr
from cfeval.bundle_io import (bundle_from_text, bundle_to_text, load_bundle,
                              save_bundle)
from cfeval.errors import BundleFormatError
from cfeval.eventlog import Event, PrefixSample
from cfeval.learners import Ensemble
from cfeval.rng import stream
from cfeval.simulate import SIM_SCHEMA, intervention_spec

FAST = tr.FitOptions(max_epochs=3, patience=2,
                     search=tr.SearchSpace((8,), (1e-2,), (64,), budget=1))


def make_samples(n, levels=(1, 2, 3)):
    gen = stream("bundle_samples")
    out = []
    for i in range(n):
        score = gen.random()
        events = [Event(f"c{i:04d}", "start", i * 100),
                  Event(f"c{i:04d}", "assess", i * 100 + 50, {"score": score})]
        t = levels[int(gen.random() * len(levels))]
        out.append(PrefixSample(f"c{i:04d}", events, {"amount": score * 1e4},
                                {"sector": "retail"}, t, score + t, 2, i * 100))
    return out


def fit_bundle(learner, base="mlp", head=None):
    head = head or {"kind": "mixed_flow", "atoms": (0.0,), "components": 3}
    bundle, _ = tr.fit_evaluator(make_samples(70), SIM_SCHEMA,
                                 intervention_spec("set_rate"), learner, base,
                                 head, FAST, seed=8)
    return bundle


@pytest.mark.parametrize("learner,base", [
    ("s", "mlp"), ("t", "mlp"), ("tarnet", "lstm"), ("ensemble", "mlp"),
])
def test_round_trip_bit_exact(learner, base):
    bundle = fit_bundle(learner, base)
    text = bundle_to_text(bundle)
    clone = bundle_from_text(text)
    assert bundle_to_text(clone) == text  # save -> load -> save byte-identical

    originals = (bundle.outcome.members.values()
                 if isinstance(bundle.outcome, Ensemble) else [bundle.outcome])
    clones = (clone.outcome.members.values()
              if isinstance(clone.outcome, Ensemble) else [clone.outcome])
    for a, b in zip(originals, clones):
        assert sorted(a.params) == sorted(b.params)
        for name in a.params:
            assert np.array_equal(a.params[name], b.params[name])
        assert a.head == b.head
    assert np.array_equal(bundle.treatment.marginal, clone.treatment.marginal)


def test_truncated_file_reports_position(tmp_path):
    bundle = fit_bundle("s")
    path = tmp_path / "b.json"
    save_bundle(bundle, path)
    text = path.read_text()
    path.write_text(text[:len(text) // 2])
    with pytest.raises(BundleFormatError, match="byte"):
        load_bundle(path)


def test_version_mismatch_names_both_tags(tmp_path):
    bundle = fit_bundle("s")
    path = tmp_path / "b.json"
    save_bundle(bundle, path)
    path.write_text(path.read_text().replace('"version": "v1"', '"version": "v0"'))
    with pytest.raises(BundleFormatError, match=r"'v0'.*'v1'"):
        load_bundle(path)


def test_non_bundle_json_rejected(tmp_path):
    path = tmp_path / "x.json"
    path.write_text('{"hello": 1}')
    with pytest.raises(BundleFormatError, match="format tag"):
        load_bundle(path)


def test_loaded_bundle_predicts_identically():
    from cfeval import learners as ln
    bundle = fit_bundle("ensemble")
    clone = bundle_from_text(bundle_to_text(bundle))
    samples = make_samples(3)
    x = ln.encode_batch("mlp", bundle.encoder, samples)
    x2 = ln.encode_batch("mlp", clone.encoder, samples)
    assert np.array_equal(x, x2)
    a = ln.sample_outcome(bundle.outcome, x[:1], 2, 8, key=("rt", 0))
    b = ln.sample_outcome(clone.outcome, x2[:1], 2, 8, key=("rt", 0))
    assert np.array_equal(a, b)
