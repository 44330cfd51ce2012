import math

import numpy as np
import pytest
import torch
from scipy import stats
from scipy.spatial import distance

from metamers.analysis import (
    DistributionLabel,
    ModelSetRun,
    binomial_tail,
    cross_model_mean,
    difference_in_means,
    difference_table,
    divergence_heatmap,
    ensemble_targets,
    jensen_shannon,
    kde_density,
    recognizability,
    sample_model_sets,
    sample_pairs,
    scott_bandwidth,
)
from metamers.generation import MetamerRecord
from metamers.model_zoo import EARLY, MIDDLE, ClassMapping, ModelZoo
from metamers.model_zoo.architectures import linear_probe

# KDE


def test_kde_matches_scipy_gaussian_kde():
    d = np.random.default_rng(0).gamma(2.0, 1.0, size=50)
    dist = kde_density(d)
    oracle = stats.gaussian_kde(d, bw_method="scott")
    assert dist.bandwidth == pytest.approx(math.sqrt(oracle.covariance[0, 0]), rel=1e-12)
    np.testing.assert_allclose(dist.density, oracle(dist.grid), rtol=1e-10, atol=1e-14)
    assert len(dist.grid) == 1000
    assert dist.grid[0] == pytest.approx(d.min() - 3 * dist.bandwidth)
    assert dist.grid[-1] == pytest.approx(d.max() + 3 * dist.bandwidth)


def test_kde_integral_and_flags():
    d = np.random.default_rng(1).normal(5, 1, size=50)
    dist = kde_density(d)
    assert 0.98 <= dist.integral() <= 1.02
    assert (dist.density >= 0).all()
    assert dist.low_power
    assert not kde_density(np.random.default_rng(2).normal(size=81)).low_power


def test_kde_forced_bandwidth_peak():
    dist = kde_density([2.0, 2.0], bandwidth=1.0)
    assert dist.density.max() == pytest.approx(1 / math.sqrt(2 * math.pi), abs=1e-4)


def test_kde_mode_location():
    d = np.random.default_rng(3).normal(0, 1e-3, size=100)
    dist = kde_density(d)
    step = dist.grid[1] - dist.grid[0]
    assert abs(dist.grid[np.argmax(dist.density)]) <= step + abs(np.mean(d))


def test_kde_degenerate():
    with pytest.raises(ValueError, match="degenerate sample"):
        kde_density([1.0, 1.0, 1.0])


def test_scott_bandwidth_formula():
    x = np.arange(10.0)
    assert scott_bandwidth(x) == pytest.approx(np.std(x, ddof=1) * 10 ** -0.2)


# JSD


def test_jsd_identity_symmetry_and_disjoint():
    grid = np.linspace(0, 1, 200)
    p = stats.norm.pdf(grid, 0.3, 0.1)
    q = stats.norm.pdf(grid, 0.6, 0.15)
    assert jensen_shannon(p, p, grid) == pytest.approx(0.0, abs=1e-9)
    assert jensen_shannon(p, q, grid) == jensen_shannon(q, p, grid)
    a = np.where(grid < 0.5, 1.0, 0.0)
    b = 1.0 - a
    assert jensen_shannon(a, b, grid) == pytest.approx(1.0, abs=1e-6)


def test_jsd_matches_scipy():
    rng = np.random.default_rng(4)
    p, q = rng.uniform(0, 1, 64), rng.uniform(0, 1, 64)
    ref = distance.jensenshannon(p, q, base=2) ** 2
    assert jensen_shannon(p, q) == pytest.approx(ref, abs=1e-12)


# pair sampling


def test_sample_pairs_cases():
    rng = np.random.default_rng(0)
    A = np.array([[0.0, 0.0], [3.0, 4.0]])
    assert sample_pairs(A, A, "reference_reference", rng).tolist() == [5.0]
    assert sample_pairs(A, A, "reference_metamer", rng).tolist() == [0.0, 0.0]
    with pytest.raises(ValueError):
        sample_pairs(A, A, "foo", rng)


def test_sample_pairs_distinct_without_replacement():
    X = np.arange(6, dtype=float)[:, None] ** 2  # all pairwise distances differ
    d = sample_pairs(X, X, "metamer_metamer", np.random.default_rng(5))
    assert len(d) == 6 and len(set(d.tolist())) == 6 and (d > 0).all()
    X3 = np.arange(3, dtype=float)[:, None]
    assert sorted(sample_pairs(X3, X3, "reference_reference", np.random.default_rng(0)).tolist()) == [1.0, 1.0, 2.0]


# heatmap


def test_heatmap_symmetric_and_uninformative():
    rng = np.random.default_rng(6)
    labels = [DistributionLabel("s1", "a", "early", "reference_metamer", ("a", "b")),
              DistributionLabel("s1", "c", "early", "reference_metamer", ("a", "b")),
              DistributionLabel("s2", "b", "early", "reference_reference", ("c",))]
    dists = [kde_density(rng.normal(m, 1, 60)) for m in (0.0, 1.0, 3.0)]
    hm = divergence_heatmap(list(zip(labels, dists)))
    assert hm.jsd.shape == (3, 3)
    assert (hm.jsd == hm.jsd.T).all()
    assert (np.diag(hm.jsd) == 0).all()
    assert ((hm.jsd >= 0) & (hm.jsd <= 1)).all()
    assert hm.uninformative[0, 0] and hm.uninformative[0, 1] and not hm.uninformative[0, 2]
    assert hm.uninformative[1, 2] and not hm.uninformative[1, 0]
    assert hm.cells[0][2].jsd == hm.jsd[0, 2]


# recognizability


def probe_zoo(weights):
    zoo = ModelZoo()
    for name, w in weights.items():
        net = linear_probe(input_size=(1, 1, 4), num_classes=3)
        with torch.no_grad():
            net.blocks[0][1].weight.copy_(torch.tensor(w, dtype=torch.float32))
            net.blocks[0][1].bias.zero_()
        zoo.add_module(name, net, family="other", input_size=(1, 1, 4))
    return zoo


# picks class = argmax of the first three input coordinates
PICK = [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1, 0]]
# always class 0 unless coordinate 3 dominates, then class 2
BIASED = [[0, 0, 0, 0.1], [0, 0, 0, 0], [0, 0, 0, 1]]


def onehot(k):
    x = torch.zeros(1, 1, 4)
    x[0, 0, k] = 1.0
    return x


def records(metamers, ids, members):
    return [MetamerRecord(i, m, members, EARLY, [1.0, 0.1], 10) for i, m in zip(ids, metamers)]


def test_recognizability_counts_and_exclusion():
    zoo = probe_zoo({"gen": PICK, "ev": PICK})
    mapping = ClassMapping.identity(["a", "b", "c"])
    refs = {f"r{k}": onehot(k % 3) for k in range(4)}
    ids = list(refs)
    # three metamers keep their class, the last one is pushed to another class
    mets = [refs["r0"], refs["r1"], refs["r2"], onehot(1)]
    res = recognizability(records(mets, ids, ["gen"]), refs, mapping, list(zoo), zoo.order(["gen"]),
                          labels={i: k % 3 for k, i in enumerate(ids)})
    by_id = {r.evaluator_model_id: r for r in res}
    assert by_id["ev"].accuracy == 0.75 and not by_id["ev"].excluded
    assert by_id["gen"].excluded
    assert by_id["ev"].accuracy_ground_truth == 0.75
    mean, _, n = cross_model_mean(res)
    assert (mean, n) == (0.75, 1)


def test_recognizability_identity_metamers():
    zoo = probe_zoo({"gen": PICK})
    mapping = ClassMapping.identity(["a", "b", "c"])
    refs = {f"r{k}": onehot(k % 3) for k in range(5)}
    res = recognizability(records(list(refs.values()), list(refs), ["gen"]), refs, mapping, list(zoo), list(zoo))
    assert res[0].accuracy == 1.0


def test_recognizability_empty_evaluators():
    zoo = probe_zoo({"gen": PICK})
    refs = {"r": onehot(0)}
    with pytest.raises(ValueError, match="empty evaluator list"):
        recognizability(records([onehot(0)], ["r"], ["gen"]), refs, ClassMapping.identity(["a", "b", "c"]), [],
                        list(zoo))


def test_ensemble_targets_tie_goes_to_first_model():
    zoo = probe_zoo({"m1": PICK, "m2": BIASED})
    mapping = ClassMapping.identity(["a", "b", "c"])
    batch = torch.stack([onehot(1), onehot(0)])
    # m1 says (1, 0), m2 says (0, 0): image 0 ties and goes to m1's vote
    assert ensemble_targets(zoo.order(["m1", "m2"]), batch, mapping) == [1, 0]


def test_binomial_tail():
    assert binomial_tail(9, 16, 1 / 3) == pytest.approx(stats.binom.sf(8, 16, 1 / 3))
    assert binomial_tail(0, 16, 1 / 3) == pytest.approx(1.0)


# Monte-Carlo bookkeeping


def runs_from(table):
    return [ModelSetRun(f"r{k}", members, value, 100, MIDDLE) for k, (members, value) in enumerate(table)]


def test_difference_in_means_cases():
    runs = runs_from([(["a", "b"], 0.8), (["a", "c"], 0.6), (["b", "c"], 0.5), (["b", "d"], 0.5)])
    n, delta = difference_in_means(runs, "a")
    assert n == 2 and delta == pytest.approx(0.2, abs=1e-12)
    with pytest.raises(ValueError, match="no absent runs"):
        difference_in_means(runs_from([(["a"], 0.1), (["a", "b"], 0.2)]), "a")
    flat = runs_from([(["a"], 0.4), (["b"], 0.4)])
    assert difference_in_means(flat, "a") == (1, 0.0)


def test_difference_in_means_identity():
    rng = np.random.default_rng(7)
    ids = ["a", "b", "c", "d", "e"]
    table = [(sorted(rng.choice(ids, size=2, replace=False).tolist()), float(rng.uniform())) for _ in range(30)]
    runs = runs_from(table)
    for m in ids:
        present = [v for s, v in table if m in s]
        absent = [v for s, v in table if m not in s]
        if present and absent:
            assert difference_in_means(runs, m) == (len(present), sum(present) / len(present) - sum(absent) / len(absent))
    rows = difference_table(runs, ids)
    assert [r[2] for r in rows] == sorted((r[2] for r in rows), reverse=True)


def test_sample_model_sets_sizes_and_determinism():
    ids = [f"m{k}" for k in range(12)]
    sets = sample_model_sets(ids, 100, (2, 10), np.random.default_rng(0))
    assert len(sets) == 100 and all(2 <= len(s) <= 10 for s in sets)
    assert all(s == [m for m in ids if m in s] for s in sets)
    assert sets == sample_model_sets(ids, 100, (2, 10), np.random.default_rng(0))
    pairs = sample_model_sets(["a", "b", "c"], 50, (2, 2), np.random.default_rng(1))
    assert {tuple(p) for p in pairs} <= {("a", "b"), ("a", "c"), ("b", "c")}
    with pytest.raises(ValueError):
        sample_model_sets(["a", "b"], 1, (2, 2), np.random.default_rng(0))
