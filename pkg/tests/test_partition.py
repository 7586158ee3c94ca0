import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedagent.data import dataset_stats
from fedagent.errors import CoverageMismatch, EmptyDataset, InfeasibleScheme, PartitionError
from fedagent.partition import (
    FAMILIES,
    STEP_BAND,
    PartitionAssignment,
    PartitionScheme,
    client_counts,
    distribution_matrix,
    format_assignment,
    half_skew_pairs,
    heatmap_csv,
    partition,
    read_assignment,
    round_matrix,
    staircase_counts,
    verify_partition,
    write_assignment,
)

from conftest import make_episode


def _cv(x):
    x = np.asarray(x, dtype=float)
    return x.std() / x.mean()


def _check_coverage(data, a):
    assert sorted(a.client_of) == sorted(e.episode_id for e in data)
    counts = client_counts(data, a)
    assert counts[:, 0].sum() == len(data)
    assert counts[:, 1].sum() == dataset_stats(data).n_steps


# -- scheme parsing ---------------------------------------------------------


def test_scheme_parse_and_name():
    s = PartitionScheme.parse("App-Level/Half-Skew", 5, 3)
    assert (s.family, s.variant, s.n_clients, s.seed) == ("app-level", "half-skew", 5, 3)
    assert s.name == "app-level/half-skew"


@pytest.mark.parametrize("name,n", [("app-level/app-skew", 5), ("nope/iid", 5), ("basic-iid/iid", 0)])
def test_illegal_schemes(name, n):
    with pytest.raises(PartitionError):
        PartitionScheme.parse(name, n)


def test_empty_dataset():
    with pytest.raises(EmptyDataset):
        partition([], PartitionScheme("basic-iid", "iid", 2))


# -- reference-sized datasets --------------------------------------------------


def test_category_skew_200_each(category_level):
    a = partition(category_level, PartitionScheme("category-level", "skew", 5))
    labels, mat = distribution_matrix(category_level, a, "category")
    assert (mat > 0).sum(axis=1).tolist() == [1] * 5
    assert mat.sum(axis=1).tolist() == [200] * 5


def test_app_skew_diagonal(app_level):
    train, _ = app_level
    a = partition(train, PartitionScheme("app-level", "skew", 5))
    labels, mat = distribution_matrix(train, a, "app")
    assert np.array_equal(mat, 150 * np.eye(5, dtype=int))


def test_category_iid_every_cell_40(category_level):
    a = partition(category_level, PartitionScheme("category-level", "iid", 5))
    _, mat = distribution_matrix(category_level, a, "category")
    assert (mat == 40).all()


def test_single_client_passthrough(app_level):
    train, _ = app_level
    a = partition(train, PartitionScheme("basic-iid", "iid", 1))
    assert set(a.client_of.values()) == {0}
    counts = client_counts(train, a)
    stats = dataset_stats(train)
    assert counts.tolist() == [[stats.n_episodes, stats.n_steps]]


def test_client_counts_iid_small():
    data = [make_episode(f"e{i}", n=5) for i in range(10)]
    a = partition(data, PartitionScheme("basic-iid", "iid", 5))
    assert client_counts(data, a).tolist() == [[2, 10]] * 5


def test_category_skew_too_many_clients(category_level):
    with pytest.raises(InfeasibleScheme):
        partition(category_level, PartitionScheme("category-level", "skew", 7))


# -- every variant at preset sizes --------------------------------------------


@pytest.mark.parametrize("variant", FAMILIES["category-level"])
def test_category_level_variants(category_level, variant):
    a = partition(category_level, PartitionScheme("category-level", variant, 5, seed=1))
    _check_coverage(category_level, a)
    assert verify_partition(category_level, a).ok
    counts = client_counts(category_level, a)[:, 0]
    if variant in ("iid", "skew", "half-skew", "non-uniform"):
        assert counts.tolist() == [200] * 5
    _, cat = distribution_matrix(category_level, a, "category")
    _, app = distribution_matrix(category_level, a, "app")
    if variant == "half-skew":
        assert ((cat > 0).sum(axis=1) == 2).all()
    if variant in ("app-skew", "app-random"):
        assert ((app > 0).sum(axis=0) == 1).all()
    if variant == "app-skew":
        assert (cat > 0).all()
    if variant == "non-uniform":
        assert (cat > 0).all()
        shares = cat / cat.sum(axis=1, keepdims=True)
        assert (shares.max(axis=0) - shares.min(axis=0)).max() >= 0.05


@pytest.mark.parametrize("variant", FAMILIES["app-level"])
def test_app_level_variants(app_level, variant):
    train, _ = app_level
    a = partition(train, PartitionScheme("app-level", variant, 5, seed=2))
    _check_coverage(train, a)
    assert verify_partition(train, a).ok
    _, mat = distribution_matrix(train, a, "app")
    if variant == "iid":
        assert (mat.max(axis=0) - mat.min(axis=0) <= 1).all()
    if variant == "half-skew":
        assert ((mat > 0).sum(axis=1) == 2).all()
        assert [tuple(np.flatnonzero(r)) for r in mat] == [tuple(sorted(p)) for p in half_skew_pairs(5, 5)]


@pytest.mark.parametrize("variant", FAMILIES["step-episode"])
def test_step_episode_variants(step_episode, variant):
    a = partition(step_episode, PartitionScheme("step-episode", variant, 10, seed=0))
    _check_coverage(step_episode, a)
    assert verify_partition(step_episode, a).ok
    counts = client_counts(step_episode, a)
    eps, steps = counts[:, 0], counts[:, 1]
    if variant in ("iid", "step-skew"):
        assert eps.max() - eps.min() <= 1
    if variant in ("iid", "episode-skew"):
        assert (np.abs(steps - steps.mean()) <= STEP_BAND * steps.mean()).all()
    if variant in ("episode-skew", "both-skew"):
        assert _cv(eps) >= 0.3
    if variant in ("step-skew", "both-skew"):
        assert _cv(steps) >= 0.3
    if variant == "both-skew":
        assert steps[0] > 2 * steps.mean()


@pytest.mark.parametrize("variant", FAMILIES["scaleapp"])
def test_scaleapp_variants(scaleapp, variant):
    a = partition(scaleapp, PartitionScheme("scaleapp", variant, 30, seed=0))
    _check_coverage(scaleapp, a)
    assert verify_partition(scaleapp, a).ok
    counts = client_counts(scaleapp, a)[:, 0]
    assert counts[:3].tolist() == [300, 250, 200]
    _, mat = distribution_matrix(scaleapp, a, "app")
    if variant == "skew":
        assert ((mat > 0).sum(axis=1) == 1).all()


def test_step_skew_needs_three_clients(step_episode):
    with pytest.raises(InfeasibleScheme):
        partition(step_episode, PartitionScheme("step-episode", "step-skew", 2))


def test_deterministic_and_seeded(app_level):
    train, _ = app_level
    s = PartitionScheme("app-level", "non-uniform", 5, seed=4)
    assert format_assignment(partition(train, s)) == format_assignment(partition(train, s))
    other = partition(train, PartitionScheme("app-level", "non-uniform", 5, seed=5))
    assert other.client_of != partition(train, s).client_of


# -- verify_partition -------------------------------------------------------


def test_verify_flags_planted_skew_violation(category_level):
    a = partition(category_level, PartitionScheme("category-level", "skew", 5))
    moved = dict(a.client_of)
    victim = next(e for e in category_level if a.client_of[e.episode_id] == 1)
    moved[victim.episode_id] = 0
    rep = verify_partition(category_level, PartitionAssignment(moved, a.scheme))
    assert not rep.ok
    assert any(v.client == 0 and "cardinality" in v.rule for v in rep.violations)
    assert "client 0" in str(rep.violations[0])


def test_verify_coverage_mismatch():
    data = [make_episode(f"e{i}") for i in range(4)]
    a = PartitionAssignment({"e0": 0, "e1": 0, "e2": 1}, PartitionScheme("basic-iid", "iid", 2))
    with pytest.raises(CoverageMismatch):
        verify_partition(data, a)


def test_verify_client_range():
    data = [make_episode("e0")]
    rep = verify_partition(data, PartitionAssignment({"e0": 5}, PartitionScheme("basic-iid", "iid", 2)))
    assert not rep.ok and rep.violations[0].rule == "client-range"


# -- helpers ------------------------------------------------------------------


@given(st.integers(10, 5000), st.integers(3, 30))
def test_staircase_counts(total, n):
    c = staircase_counts(total, n)
    assert sum(c) == total and len(c) == n
    assert c == sorted(c, reverse=True)


@given(
    st.lists(st.integers(0, 40), min_size=2, max_size=6),
    st.lists(st.integers(1, 40), min_size=2, max_size=6),
    st.integers(0, 2**32 - 1),
)
@settings(max_examples=80)
def test_round_matrix_keeps_marginals(rows, weights, seed):
    total = sum(rows)
    if total == 0:
        return
    # column totals proportional to weights, then an independence table with
    # exactly those integer marginals, then a marginal-preserving perturbation
    w = np.array(weights, dtype=float)
    cols = np.floor(w / w.sum() * total).astype(int)
    cols[0] += total - cols.sum()
    x = np.outer(rows, cols) / total
    rng = np.random.default_rng(seed)
    for _ in range(5):
        i, i2 = rng.choice(len(rows), 2, replace=False)
        j, j2 = rng.choice(len(cols), 2, replace=False)
        eps = rng.uniform(0, min(x[i, j2], x[i2, j]))
        x[i, j] += eps
        x[i2, j2] += eps
        x[i, j2] -= eps
        x[i2, j] -= eps
    m = round_matrix(x, rows, cols)
    assert m.sum(axis=1).tolist() == list(rows)
    assert m.sum(axis=0).tolist() == cols.tolist()
    assert (np.abs(m - x) < 1 + 1e-9).all()


# -- files --------------------------------------------------------------------


def test_assignment_file_round_trip(tmp_path, app_level):
    train, _ = app_level
    a = partition(train, PartitionScheme("app-level", "half-skew", 5, seed=9))
    path = tmp_path / "a.tsv"
    write_assignment(a, path)
    b = read_assignment(path)
    assert b == a


def test_headerless_assignment_is_custom(tmp_path):
    path = tmp_path / "a.tsv"
    path.write_text("e0\t1\ne1\t0\n")
    a = read_assignment(path)
    assert a.scheme.family == "custom" and a.n_clients == 2
    assert verify_partition([make_episode("e0"), make_episode("e1")], a).ok


def test_heatmap_csv_layout():
    text = heatmap_csv(["A", "B"], np.array([[1, 0], [2, 3]]))
    assert text == "client,A,B\n0,1,0\n1,2,3\n"
