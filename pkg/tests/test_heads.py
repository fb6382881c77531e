import numpy as np
import pytest

from cfeval import diffcore as dc
from cfeval import heads
from cfeval.heads import DistParams, HeadSpec
from cfeval.rng import stream

BERN = HeadSpec("bernoulli")
CAT3 = HeadSpec("categorical", n_classes=3)
GAUSS = HeadSpec("gaussian")
MIXED = HeadSpec("mixed_flow", atoms=(0.0,), components=4)


def project_zero(spec, features=None):
    f = np.zeros((1, 3)) if features is None else features
    w = np.zeros((f.shape[1], spec.param_count))
    b = np.zeros(spec.param_count)
    return heads.project(spec, f, w, b)


def test_spec_validation():
    with pytest.raises(ValueError):
        HeadSpec("mixed_flow", atoms=(1.0, 1.0))
    with pytest.raises(ValueError):
        HeadSpec("gaussian", y_std=0.0)
    with pytest.raises(ValueError):
        HeadSpec("categorical", n_classes=1)


def test_zero_projection_gives_reference_distributions():
    assert project_zero(BERN).arrays["p"][0] == pytest.approx(0.5)
    assert np.allclose(project_zero(CAT3).arrays["probs"][0], 1 / 3)
    gp = project_zero(GAUSS)
    assert gp.arrays["mean"][0] == 0.0 and gp.arrays["log_var"][0] == 0.0


def test_log_prob_reference_values():
    assert heads.log_prob(BERN, project_zero(BERN), [1.0])[0] == pytest.approx(np.log(0.5))
    assert heads.log_prob(GAUSS, project_zero(GAUSS), [0.0])[0] == pytest.approx(
        -0.5 * np.log(2 * np.pi))
    # all mass on the atom -> log 1 = 0
    spec = HeadSpec("mixed_flow", atoms=(2.5,), components=2)
    params = project_zero(spec)
    params.arrays["log_mix"] = np.log(np.array([[1.0 - 1e-300, 1e-300]]))
    assert heads.log_prob(spec, params, [2.5])[0] == pytest.approx(0.0)


def test_single_component_flow_density_at_mode():
    # M=1, w=1, a=1, b=0 at y'=0: log f = log sig'(0) = log 0.25
    assert heads.flow_log_density(np.array([1.0]), np.array([1.0]),
                                  np.array([0.0]), 0.0) == pytest.approx(np.log(0.25))


def test_categorical_out_of_range():
    with pytest.raises(ValueError):
        heads.log_prob(CAT3, project_zero(CAT3), [3.0])


def test_bernoulli_degenerate_sampling():
    params = DistParams("bernoulli", {"logit": np.array([500.0]), "p": np.array([1.0])})
    gens = [stream("bern", i) for i in range(20)]
    assert np.all(heads.sample_n(BERN, params, gens) == 1.0)


def test_flow_median_of_symmetric_cdf():
    w = np.array([1.0]); a = np.array([1.0]); b = np.array([0.0])
    t = heads.invert_flow_cdf(w, a, b, np.array([0.5]))
    assert abs(t[0]) < 1e-7


def test_gaussian_sample_mean():
    spec = GAUSS
    params = DistParams("gaussian", {"mean": np.array([2.0]), "log_var": np.array([0.0])})
    gens = [stream("gauss_mc", i) for i in range(100_000)]
    draws = heads.sample_n(spec, params, gens)
    assert abs(draws.mean() - 2.0) < 0.02


def random_flow_params(gen, spec):
    n_atoms = len(spec.atoms)
    m = spec.components
    raw = np.concatenate([
        gen.normal(size=n_atoms + 1),
        gen.normal(size=m),
        gen.uniform(0.0, 3.0, size=m),   # slopes softplus(raw) >= 0.69: mass stays
        gen.normal(size=m),              # inside the quadrature window
    ]).reshape(1, -1)
    return DistParams("mixed_flow", heads._constrain_flow(raw, spec))


def test_flow_density_integrates_to_one():
    spec = MIXED
    for trial in range(25):
        params = random_flow_params(stream("quad", trial), spec)
        w, a, b = (params.arrays[k][0] for k in ("w", "a", "b"))
        grid = np.linspace(-30, 30, 6001)
        dens = np.exp(heads.flow_log_density(w, a, b, grid))
        integral = np.trapezoid(dens, grid)
        assert 0.99 <= integral <= 1.01


def test_flow_cdf_monotone():
    # strictly increasing on a 1000-point grid spanning the central
    # 1 - 2e-6 of the mass (outside it, float64 increments saturate)
    for trial in range(10):
        params = random_flow_params(stream("mono", trial), MIXED)
        w, a, b = (params.arrays[k][0] for k in ("w", "a", "b"))
        lo, hi = heads.invert_flow_cdf(w, a, b, np.array([1e-6, 1 - 1e-6]))
        vals = heads.flow_cdf(w, a, b, np.linspace(lo, hi, 1000))
        assert np.all(np.diff(vals) > 0)


def test_flow_inverse_round_trip():
    for trial in range(10):
        params = random_flow_params(stream("invert", trial), MIXED)
        w, a, b = (params.arrays[k][0] for k in ("w", "a", "b"))
        u = stream("invert_u", trial).random(50)
        t = heads.invert_flow_cdf(w, a, b, u)
        assert np.max(np.abs(heads.flow_cdf(w, a, b, t) - u)) <= 1e-8


def test_sampling_is_reproducible():
    params = random_flow_params(stream("repro"), MIXED)
    draw = lambda: heads.sample_n(MIXED, params, [stream("rs", i) for i in range(50)])
    assert np.array_equal(draw(), draw())


def test_sample_matches_sample_n():
    params = random_flow_params(stream("s1"), MIXED)
    singles = [heads.sample(MIXED, params, stream("sx", i)) for i in range(20)]
    batch = heads.sample_n(MIXED, params, [stream("sx", i) for i in range(20)])
    assert np.allclose(singles, batch)


def test_numpy_and_graph_log_prob_agree():
    gen = stream("agree")
    feats = gen.normal(size=(6, 4))
    cases = [
        (BERN, gen.integers(0, 2, size=6).astype(float)),
        (CAT3, gen.integers(0, 3, size=6).astype(float)),
        (HeadSpec("gaussian", y_mean=1.5, y_std=2.0), gen.normal(size=6)),
        (HeadSpec("mixed_flow", atoms=(0.0,), components=4, y_mean=1.0, y_std=3.0),
         np.where(gen.random(6) < 0.4, 0.0, gen.normal(size=6) * 3)),
    ]
    for spec, y in cases:
        w = gen.normal(size=(4, spec.param_count)) * 0.3
        b = gen.normal(size=spec.param_count) * 0.1
        params = heads.project(spec, feats, w, b)
        np_mean_nll = -heads.log_prob(spec, params, y).mean()

        tape = dc.Tape()
        raw = heads.project_graph(spec, tape.leaf(feats), tape.leaf(w), tape.leaf(b))
        graph_nll = float(heads.nll_graph(spec, raw, y).values)
        assert np_mean_nll == pytest.approx(graph_nll, rel=1e-12), spec.kind


@pytest.mark.parametrize("kind", ["bernoulli", "categorical", "gaussian", "mixed_flow"])
def test_head_nll_grad_check(kind):
    spec = {"bernoulli": BERN, "categorical": CAT3,
            "gaussian": HeadSpec("gaussian", y_mean=0.5, y_std=1.5),
            "mixed_flow": HeadSpec("mixed_flow", atoms=(0.0,), components=3,
                                   y_mean=0.2, y_std=1.1)}[kind]
    for trial in range(3):
        gen = stream("headgc", kind, trial)
        feats = gen.normal(size=(5, 3))
        if kind == "bernoulli":
            y = gen.integers(0, 2, size=5).astype(float)
        elif kind == "categorical":
            y = gen.integers(0, 3, size=5).astype(float)
        elif kind == "gaussian":
            y = gen.normal(size=5)
        else:
            y = np.where(gen.random(5) < 0.5, 0.0, gen.normal(size=5))
        arrays = [gen.normal(size=(3, spec.param_count)) * 0.5,
                  gen.normal(size=spec.param_count) * 0.2]

        def build(arrs):
            tape = dc.Tape()
            w = tape.leaf(arrs[0], param=True)
            b = tape.leaf(arrs[1], param=True)
            raw = heads.project_graph(spec, tape.leaf(feats), w, b)
            return heads.nll_graph(spec, raw, y), [w, b]

        assert dc.grad_check(build, arrays) < 1e-4


def test_mse_graph_matches_numpy():
    spec = HeadSpec("gaussian", y_mean=2.0, y_std=4.0)
    gen = stream("mse")
    feats = gen.normal(size=(8, 3))
    w = gen.normal(size=(3, 2))
    b = gen.normal(size=2)
    y = gen.normal(size=8) * 4 + 2
    tape = dc.Tape()
    raw = heads.project_graph(spec, tape.leaf(feats), tape.leaf(w), tape.leaf(b))
    got = float(heads.mse_graph(spec, raw, y).values)
    pred = (feats @ w + b)[:, 0]
    assert got == pytest.approx(np.mean((spec.standardize(y) - pred) ** 2))
