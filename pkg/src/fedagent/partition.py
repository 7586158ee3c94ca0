"""Heterogeneity partition schemes, their structural checks, and exports.

A scheme is ``family/variant`` (for example ``category-level/half-skew``)
plus a client count and a seed. :func:`partition` builds the assignment and
then runs :func:`verify_partition` on it, so every assignment it returns
satisfies its variant's rules; otherwise it raises ``InfeasibleScheme``.
"""

from __future__ import annotations

import bisect
import csv
import io
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .data import Episode, app_sort_key, category_sort_key
from .errors import CoverageMismatch, EmptyDataset, InfeasibleScheme, PartitionError
from .synth import apportion

FAMILIES: dict[str, tuple[str, ...]] = {
    "basic-iid": ("iid",),
    "step-episode": ("iid", "episode-skew", "step-skew", "both-skew"),
    "category-level": ("iid", "skew", "half-skew", "non-uniform", "app-skew", "app-random"),
    "app-level": ("iid", "skew", "half-skew", "non-uniform"),
    "scaleapp": ("iid", "skew", "random"),
    # assignment files written by other tools: only coverage is checked
    "custom": ("any",),
}

STEP_SKEW_RATIO = 1.5
EPISODE_SKEW_RATIO = 4.0
DIRICHLET_ALPHA = 0.5
SKEW_CV_MIN = 0.3
STEP_BAND = 0.10
NON_UNIFORM_SPREAD = 0.05


@dataclass(frozen=True)
class PartitionScheme:
    family: str
    variant: str
    n_clients: int
    seed: int = 0

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise PartitionError(f"unknown scheme family {self.family!r}")
        if self.variant not in FAMILIES[self.family]:
            raise PartitionError(
                f"variant {self.variant!r} not legal for {self.family!r}; "
                f"choose from {', '.join(FAMILIES[self.family])}"
            )
        if self.n_clients < 1:
            raise PartitionError(f"n_clients must be >= 1, got {self.n_clients}")

    @property
    def name(self) -> str:
        return f"{self.family}/{self.variant}"

    @classmethod
    def parse(cls, name: str, n_clients: int, seed: int = 0) -> "PartitionScheme":
        family, sep, variant = name.strip().lower().partition("/")
        if not sep:
            variant = FAMILIES.get(family, ("",))[0]
        return cls(family, variant, n_clients, seed)


@dataclass(frozen=True)
class PartitionAssignment:
    client_of: dict[str, int]
    scheme: PartitionScheme

    @property
    def n_clients(self) -> int:
        return self.scheme.n_clients

    def client_episodes(self, dataset: Sequence[Episode]) -> list[list[Episode]]:
        """Episodes per client, each list in dataset order."""
        out: list[list[Episode]] = [[] for _ in range(self.n_clients)]
        for ep in dataset:
            out[self.client_of[ep.episode_id]].append(ep)
        return out


@dataclass(frozen=True)
class Violation:
    client: int | None
    rule: str
    detail: str

    def __str__(self) -> str:
        who = "dataset" if self.client is None else f"client {self.client}"
        return f"{who}: {self.rule}: {self.detail}"


@dataclass
class VerifyReport:
    ok: bool
    violations: list[Violation] = field(default_factory=list)


# ---------------------------------------------------------------------------
# helpers


def _rng(scheme: PartitionScheme) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([scheme.seed, scheme.n_clients]))


def _groups(dataset: Sequence[Episode], axis: str) -> dict[str, list[int]]:
    groups: dict[str, list[int]] = defaultdict(list)
    for i, ep in enumerate(dataset):
        groups[_label(ep, axis)].append(i)
    return {k: groups[k] for k in sorted(groups, key=_sort_key(axis))}


def _label(ep: Episode, axis: str) -> str:
    return ep.app if axis == "app" else ep.category


def _sort_key(axis: str) -> Callable:
    return app_sort_key if axis == "app" else category_sort_key


def _shuffled(idx: list[int], rng: np.random.Generator) -> list[int]:
    return [idx[i] for i in rng.permutation(len(idx))]


def _cv(values: Sequence[float]) -> float:
    arr = np.asarray(values, dtype=float)
    mean = arr.mean() if arr.size else 0.0
    return float(arr.std() / mean) if mean > 0 else 0.0


def staircase_counts(total: int, n: int, ratio: float = EPISODE_SKEW_RATIO) -> list[int]:
    """Linearly decreasing per-client counts, largest/smallest weight = ratio."""
    if n == 1:
        return [total]
    weights = [ratio - (ratio - 1.0) * k / (n - 1) for k in range(n)]
    return apportion(total, weights)


# ---------------------------------------------------------------------------
# label-based constructions


def _stratified_iid(groups: dict[str, list[int]], n: int, rng, out: list[int]) -> None:
    # one cursor across all labels keeps per-client totals within 1
    cursor = 0
    for idx in groups.values():
        for i in _shuffled(idx, rng):
            out[i] = cursor % n
            cursor += 1


def _one_label_each(groups: dict[str, list[int]], n: int, what: str, out: list[int]) -> None:
    if len(groups) != n:
        raise InfeasibleScheme(
            f"{what}-skew: needs exactly one {what} per client "
            f"({what} labels: {len(groups)}, clients: {n})"
        )
    for k, idx in enumerate(groups.values()):
        for i in idx:
            out[i] = k


def half_skew_pairs(n_labels: int, n_clients: int) -> list[tuple[int, int]]:
    return [((2 * k) % n_labels, (2 * k + 1) % n_labels) for k in range(n_clients)]


def _half_skew(groups: dict[str, list[int]], n: int, what: str, rng, out: list[int]) -> None:
    C = len(groups)
    if C < 2 or 2 * n < C:
        raise InfeasibleScheme(
            f"{what}-half-skew: needs 2 <= labels <= 2*clients ({C} {what} labels, {n} clients)"
        )
    holders: dict[int, list[int]] = defaultdict(list)
    for k, pair in enumerate(half_skew_pairs(C, n)):
        for c in pair:
            holders[c].append(k)
    for c, idx in enumerate(groups.values()):
        hs = holders[c]
        for j, i in enumerate(_shuffled(idx, rng)):
            out[i] = hs[j % len(hs)]


def _sinkhorn(w: np.ndarray, rows: np.ndarray, cols: np.ndarray, iters: int = 500) -> np.ndarray:
    x = w.copy()
    for _ in range(iters):
        x *= (rows / x.sum(axis=1))[:, None]
        x *= (cols / x.sum(axis=0))[None, :]
    return x


def round_matrix(x: np.ndarray, rows: Sequence[int], cols: Sequence[int]) -> np.ndarray:
    """Round ``x`` cellwise up or down so rows/columns sum to the given totals.

    Requires ``x`` to already have those (integer) marginals. Each cell ends
    at floor or ceil of its value; the up-rounded cells are a unit-capacity
    bipartite flow, found greedily then completed with augmenting paths.
    """
    base = np.floor(x + 1e-9).astype(int)
    frac = x - base
    up = np.zeros_like(base, dtype=bool)
    allowed = frac > 1e-9
    row_need = np.asarray(rows) - base.sum(axis=1)
    col_need = np.asarray(cols) - base.sum(axis=0)
    for flat in np.argsort(-frac, axis=None, kind="stable"):
        i, j = np.unravel_index(int(flat), frac.shape)
        if allowed[i, j] and row_need[i] > 0 and col_need[j] > 0:
            up[i, j] = True
            row_need[i] -= 1
            col_need[j] -= 1
    n_rows, n_cols = x.shape
    while row_need.sum() > 0:
        start = int(np.flatnonzero(row_need > 0)[0])
        # BFS over rows; row -> col along unused edges, col -> row along used ones
        prev_col: dict[int, int] = {}
        prev_row: dict[int, int] = {}
        frontier, seen_rows, end = [start], {start}, None
        while frontier and end is None:
            nxt = []
            for i in frontier:
                for j in range(n_cols):
                    if not allowed[i, j] or up[i, j] or j in prev_col:
                        continue
                    prev_col[j] = i
                    if col_need[j] > 0:
                        end = j
                        break
                    for i2 in np.flatnonzero(up[:, j]):
                        i2 = int(i2)
                        if i2 not in seen_rows:
                            seen_rows.add(i2)
                            prev_row[i2] = j
                            nxt.append(i2)
                if end is not None:
                    break
            frontier = nxt
        if end is None:
            raise InfeasibleScheme("no integer table with the requested marginals")
        j = end
        while True:
            i = prev_col[j]
            up[i, j] = True
            if i == start:
                break
            j = prev_row[i]
            up[i, j] = False
        row_need[start] -= 1
        col_need[end] -= 1
    return base + up.astype(int)


def _fill_zeros(m: np.ndarray) -> None:
    # 2x2 exchanges keep both marginals; each removes one zero and creates none
    while (m == 0).any():
        i, j = (int(v) for v in np.argwhere(m == 0)[0])
        j2 = int(np.argmax(m[i]))
        i2 = int(np.argmax(m[:, j]))
        if m[i, j2] < 2 or m[i2, j] < 2:
            raise InfeasibleScheme("non-uniform: cannot give every client every label")
        m[i, j] += 1
        m[i, j2] -= 1
        m[i2, j] -= 1
        m[i2, j2] += 1


def _split_by_counts(idx: list[int], counts: Sequence[int], out: list[int]) -> None:
    pos = 0
    for k, c in enumerate(counts):
        for i in idx[pos : pos + c]:
            out[i] = k
        pos += c


def _non_uniform(groups: dict[str, list[int]], n: int, what: str, rng, out: list[int]) -> None:
    sizes = np.array([len(v) for v in groups.values()])
    C = len(sizes)
    rows = np.array(apportion(int(sizes.sum()), [1.0] * n))
    if sizes.min() < n or rows.min() < C:
        raise InfeasibleScheme(
            f"{what}-non-uniform: every {what} needs >= {n} episodes and every client >= {C}"
        )
    w = rng.dirichlet(np.full(C, DIRICHLET_ALPHA), size=n) + 1e-9
    m = round_matrix(_sinkhorn(w, rows.astype(float), sizes.astype(float)), rows, sizes)
    _fill_zeros(m)
    for c, idx in enumerate(groups.values()):
        _split_by_counts(_shuffled(idx, rng), m[:, c], out)


def _app_exclusive(
    app_groups: dict[str, list[int]],
    dataset: Sequence[Episode],
    n: int,
    rng,
    out: list[int],
    per_category: bool,
) -> None:
    total = [0] * n
    if per_category:
        by_cat: dict[str, list[str]] = defaultdict(list)
        for app, idx in app_groups.items():
            by_cat[dataset[idx[0]].category].append(app)
        buckets = [by_cat[c] for c in sorted(by_cat, key=category_sort_key)]
        for cat_apps in buckets:
            if len(cat_apps) < n:
                cat = dataset[app_groups[cat_apps[0]][0]].category
                raise InfeasibleScheme(
                    f"app-skew: category {cat} has {len(cat_apps)} apps for {n} clients"
                )
    else:
        buckets = [list(app_groups)]
    for apps in buckets:
        load = [0] * n
        order = _shuffled(apps, rng)
        order.sort(key=lambda a: -len(app_groups[a]))
        for app in order:
            k = min(range(n), key=lambda c: (load[c], total[c], c))
            size = len(app_groups[app])
            load[k] += size
            total[k] += size
            for i in app_groups[app]:
                out[i] = k


# ---------------------------------------------------------------------------
# step/episode constructions


class _Bins:
    """Per-client multiset of episodes keyed by length, for swap search."""

    def __init__(self, lengths: np.ndarray, clients: list[list[int]]):
        self.lengths = lengths
        self.by_len: list[dict[int, list[int]]] = []
        self.totals = np.zeros(len(clients), dtype=float)
        for k, idx in enumerate(clients):
            d: dict[int, list[int]] = defaultdict(list)
            for i in sorted(idx):
                d[int(lengths[i])].append(i)
            self.by_len.append(d)
            self.totals[k] = float(lengths[idx].sum()) if idx else 0.0

    def best_swap(self, a: int, b: int, gap: float) -> tuple[int, int] | None:
        la = np.array([l for l, v in self.by_len[a].items() if v])
        lb = np.array([l for l, v in self.by_len[b].items() if v])
        if la.size == 0 or lb.size == 0:
            return None
        d = la[:, None] - lb[None, :]
        gain = np.where((d > 0) & (d < gap), d * (gap - d), 0)
        if gain.max() <= 0:
            return None
        r, c = np.unravel_index(int(np.argmax(gain)), gain.shape)
        return int(la[r]), int(lb[c])

    def swap(self, a: int, b: int, la: int, lb: int) -> None:
        i = self.by_len[a][la].pop(0)
        j = self.by_len[b][lb].pop(0)
        bisect.insort(self.by_len[b][la], i)
        bisect.insort(self.by_len[a][lb], j)
        self.totals[a] += lb - la
        self.totals[b] += la - lb

    def assignment(self, out: list[int]) -> None:
        for k, d in enumerate(self.by_len):
            for idx in d.values():
                for i in idx:
                    out[i] = k


def _rebalance(bins: _Bins, targets: np.ndarray, max_iter: int = 20000) -> None:
    """Greedy count-preserving swaps that reduce sum((total - target)^2)."""
    n = len(targets)
    for _ in range(max_iter):
        dev = bins.totals - targets
        order = np.argsort(-dev, kind="stable")
        done = True
        # try most-over vs most-under first, then widen the search
        pairs = sorted(
            ((int(a), int(b)) for a in order for b in order if dev[a] > dev[b]),
            key=lambda p: -(dev[p[0]] - dev[p[1]]),
        )
        for a, b in pairs:
            found = bins.best_swap(a, b, float(dev[a] - dev[b]))
            if found is not None:
                bins.swap(a, b, *found)
                done = False
                break
        if done or n < 2:
            return


def _length_sorted(dataset: Sequence[Episode], rng) -> tuple[list[int], np.ndarray]:
    lengths = np.array([ep.n_steps for ep in dataset])
    order = _shuffled(list(range(len(dataset))), rng)
    order.sort(key=lambda i: -lengths[i])
    return order, lengths


def _step_episode(dataset: Sequence[Episode], scheme: PartitionScheme, rng, out: list[int]) -> None:
    n = scheme.n_clients
    variant = scheme.variant
    if variant != "iid" and n < 3:
        raise InfeasibleScheme(f"step-episode/{variant}: needs at least 3 clients")
    order, lengths = _length_sorted(dataset, rng)
    total = float(lengths.sum())

    if variant in ("iid", "step-skew"):
        clients: list[list[int]] = [[] for _ in range(n)]
        for j, i in enumerate(order):
            lap, pos = divmod(j, n)
            # serpentine dealing for iid, plain round-robin for step-skew
            k = pos if (variant == "step-skew" or lap % 2 == 0) else n - 1 - pos
            clients[k].append(i)
        if variant == "iid":
            targets = np.full(n, total / n)
        else:
            w = STEP_SKEW_RATIO ** -np.arange(n, dtype=float)
            targets = total * w / w.sum()
        bins = _Bins(lengths, clients)
        _rebalance(bins, targets)
        bins.assignment(out)
        return

    counts = staircase_counts(len(dataset), n)
    if variant == "both-skew":
        _split_by_counts(order, counts, out)
        return

    # episode-skew: long episodes go to clients with few slots left
    target = total / n
    need = np.full(n, target)
    slots = np.array(counts, dtype=float)
    clients = [[] for _ in range(n)]
    for i in order:
        open_ = slots > 0
        score = np.where(open_, need / np.maximum(slots, 1.0), -np.inf)
        k = int(np.argmax(score))
        clients[k].append(i)
        need[k] -= lengths[i]
        slots[k] -= 1
    bins = _Bins(lengths, clients)
    _rebalance(bins, np.full(n, target))
    bins.assignment(out)


def scaleapp_profile(dataset: Sequence[Episode]) -> list[tuple[str, int]]:
    """Apps with their sizes, largest first; client k mirrors entry k."""
    groups = _groups(dataset, "app")
    return sorted(((a, len(v)) for a, v in groups.items()), key=lambda t: (-t[1], app_sort_key(t[0])))


def _scaleapp(dataset: Sequence[Episode], scheme: PartitionScheme, rng, out: list[int]) -> None:
    n = scheme.n_clients
    groups = _groups(dataset, "app")
    profile = scaleapp_profile(dataset)
    if len(profile) != n:
        raise InfeasibleScheme(f"scaleapp: needs one app per client ({len(profile)} apps, {n} clients)")
    rows = [size for _, size in profile]
    if scheme.variant == "skew":
        for k, (app, _) in enumerate(profile):
            for i in groups[app]:
                out[i] = k
    elif scheme.variant == "random":
        _split_by_counts(_shuffled(list(range(len(dataset))), rng), rows, out)
    else:
        cols = [len(v) for v in groups.values()]
        x = np.outer(rows, cols) / float(sum(cols))
        m = round_matrix(x, rows, cols)
        for c, idx in enumerate(groups.values()):
            _split_by_counts(_shuffled(idx, rng), m[:, c], out)


# ---------------------------------------------------------------------------
# public API


def partition(dataset: Sequence[Episode], scheme: PartitionScheme) -> PartitionAssignment:
    """Assign every episode to a client under ``scheme``."""
    if not dataset:
        raise EmptyDataset("cannot partition an empty dataset")
    n = scheme.n_clients
    rng = _rng(scheme)
    out = [-1] * len(dataset)
    fam, var = scheme.family, scheme.variant

    if fam == "custom":
        raise PartitionError("the custom family only describes externally produced assignments")
    if fam == "basic-iid":
        for j, i in enumerate(rng.permutation(len(dataset))):
            out[int(i)] = j % n
    elif fam == "step-episode":
        _step_episode(dataset, scheme, rng, out)
    elif fam == "scaleapp":
        _scaleapp(dataset, scheme, rng, out)
    else:
        apps = _groups(dataset, "app")
        axis = "category" if fam == "category-level" else "app"
        what = "category" if axis == "category" else "app"
        labels = _groups(dataset, axis)
        if var == "iid":
            _stratified_iid(apps, n, rng, out)
        elif var == "skew":
            _one_label_each(labels, n, what, out)
        elif var == "half-skew":
            _half_skew(labels, n, what, rng, out)
        elif var == "non-uniform":
            _non_uniform(labels, n, what, rng, out)
        elif var == "app-skew":
            _app_exclusive(apps, dataset, n, rng, out, per_category=True)
        elif var == "app-random":
            _app_exclusive(apps, dataset, n, rng, out, per_category=False)

    assignment = PartitionAssignment({ep.episode_id: k for ep, k in zip(dataset, out)}, scheme)
    report = verify_partition(dataset, assignment)
    if not report.ok:
        raise InfeasibleScheme("; ".join(str(v) for v in report.violations))
    return assignment


def client_counts(dataset: Sequence[Episode], assignment: PartitionAssignment) -> np.ndarray:
    """Array of shape (n_clients, 2): episode count and step count per client."""
    counts = np.zeros((assignment.n_clients, 2), dtype=np.int64)
    for ep in dataset:
        k = assignment.client_of[ep.episode_id]
        counts[k, 0] += 1
        counts[k, 1] += ep.n_steps
    return counts


def distribution_matrix(
    dataset: Sequence[Episode], assignment: PartitionAssignment, axis: str = "app"
) -> tuple[list[str], np.ndarray]:
    """Episode counts per (client, label); labels sorted (categories in canonical order)."""
    if axis not in ("app", "category"):
        raise ValueError(f"axis must be 'app' or 'category', got {axis!r}")
    labels = sorted({_label(ep, axis) for ep in dataset}, key=_sort_key(axis))
    col = {lab: j for j, lab in enumerate(labels)}
    mat = np.zeros((assignment.n_clients, len(labels)), dtype=np.int64)
    for ep in dataset:
        mat[assignment.client_of[ep.episode_id], col[_label(ep, axis)]] += 1
    return labels, mat


def _check_coverage(dataset: Sequence[Episode], assignment: PartitionAssignment) -> None:
    ids = [ep.episode_id for ep in dataset]
    known = set(ids)
    extra = [e for e in assignment.client_of if e not in known]
    if extra:
        raise CoverageMismatch(f"assignment references unknown episodes: {extra[:5]}")
    missing = [e for e in ids if e not in assignment.client_of]
    if missing:
        raise CoverageMismatch(f"assignment misses episodes: {missing[:5]}")


def verify_partition(dataset: Sequence[Episode], assignment: PartitionAssignment) -> VerifyReport:
    """Check coverage plus the structural rules of the assignment's variant."""
    _check_coverage(dataset, assignment)
    scheme = assignment.scheme
    n = scheme.n_clients
    bad: list[Violation] = []

    for eid, k in assignment.client_of.items():
        if not 0 <= k < n:
            bad.append(Violation(k, "client-range", f"episode {eid} on client {k} (n={n})"))
    if bad:
        return VerifyReport(False, bad)

    counts = client_counts(dataset, assignment)
    eps, steps = counts[:, 0], counts[:, 1].astype(float)
    fam, var = scheme.family, scheme.variant

    def balanced(values, rule):
        if values.max() - values.min() > 1:
            k = int(np.argmax(values))
            bad.append(Violation(k, rule, f"counts range {values.min()}..{values.max()}"))

    def cv_at_least(values, rule):
        cv = _cv(values)
        if n > 1 and cv < SKEW_CV_MIN:
            bad.append(Violation(None, rule, f"coefficient of variation {cv:.3f} < {SKEW_CV_MIN}"))

    def step_band():
        mean = steps.mean()
        for k, s in enumerate(steps):
            if abs(s - mean) > STEP_BAND * mean:
                bad.append(Violation(k, "step-band", f"{int(s)} steps vs mean {mean:.1f}"))

    def label_sets(axis):
        labels, mat = distribution_matrix(dataset, assignment, axis)
        return labels, mat

    def cardinality(axis, want):
        labels, mat = label_sets(axis)
        for k in range(n):
            seen = int((mat[k] > 0).sum())
            if seen != want:
                bad.append(Violation(k, f"{axis}-cardinality", f"holds {seen} {axis}s, expected {want}"))

    def sees_all(axis):
        labels, mat = label_sets(axis)
        for k in range(n):
            missing = [labels[j] for j in np.flatnonzero(mat[k] == 0)]
            if missing:
                bad.append(Violation(k, f"sees-all-{axis}s", f"missing {missing[:3]}"))

    def per_label_even(axis):
        labels, mat = label_sets(axis)
        for j, lab in enumerate(labels):
            col = mat[:, j]
            if col.max() - col.min() > 1:
                bad.append(Violation(int(np.argmax(col)), f"{axis}-even", f"{lab}: {col.tolist()}"))

    def app_exclusive():
        labels, mat = label_sets("app")
        for j, lab in enumerate(labels):
            holders = np.flatnonzero(mat[:, j])
            if len(holders) > 1:
                bad.append(Violation(int(holders[1]), "app-exclusive", f"{lab} on clients {holders.tolist()}"))

    def varies(axis):
        labels, mat = label_sets(axis)
        shares = mat / np.maximum(mat.sum(axis=1, keepdims=True), 1)
        if n > 1 and (shares.max(axis=0) - shares.min(axis=0)).max() < NON_UNIFORM_SPREAD:
            bad.append(Violation(None, f"{axis}-non-uniform", "client label mixtures are nearly identical"))

    if fam == "basic-iid":
        balanced(eps, "balanced-episodes")
    elif fam == "step-episode":
        if var == "iid":
            balanced(eps, "balanced-episodes")
            step_band()
        elif var == "step-skew":
            balanced(eps, "balanced-episodes")
            cv_at_least(steps, "step-skew-cv")
        elif var == "episode-skew":
            step_band()
            cv_at_least(eps, "episode-skew-cv")
        else:
            cv_at_least(eps, "episode-skew-cv")
            cv_at_least(steps, "step-skew-cv")
    elif fam in ("category-level", "app-level"):
        axis = "category" if fam == "category-level" else "app"
        if var == "iid":
            balanced(eps, "balanced-episodes")
            per_label_even("app")
        elif var == "skew":
            cardinality(axis, 1)
            if axis == "app":
                app_exclusive()
        elif var == "half-skew":
            cardinality(axis, 2)
        elif var == "non-uniform":
            balanced(eps, "balanced-episodes")
            sees_all(axis)
            varies(axis)
        elif var == "app-skew":
            app_exclusive()
            sees_all("category")
        elif var == "app-random":
            app_exclusive()
    elif fam == "scaleapp":
        profile = [size for _, size in scaleapp_profile(dataset)]
        if len(profile) != n or list(eps) != profile:
            bad.append(Violation(None, "scaleapp-profile", f"client counts {eps.tolist()} != app sizes {profile}"))
        elif var == "skew":
            cardinality("app", 1)
        elif var == "iid":
            labels, mat = label_sets("app")
            expect = np.outer(eps, mat.sum(axis=0)) / max(len(dataset), 1)
            worst = np.abs(mat - expect)
            if worst.max() >= 1.0:
                k = int(np.unravel_index(int(np.argmax(worst)), worst.shape)[0])
                bad.append(Violation(k, "scaleapp-proportional", f"cell off by {worst.max():.2f}"))
    return VerifyReport(not bad, bad)


# ---------------------------------------------------------------------------
# files


def format_assignment(assignment: PartitionAssignment) -> str:
    s = assignment.scheme
    lines = [f"# scheme={s.name} clients={s.n_clients} seed={s.seed}"]
    lines += [f"{eid}\t{k}" for eid, k in assignment.client_of.items()]
    return "\n".join(lines) + "\n"


def write_assignment(assignment: PartitionAssignment, path: str | Path) -> None:
    Path(path).write_text(format_assignment(assignment), encoding="utf-8", newline="\n")


def read_assignment(path: str | Path) -> PartitionAssignment:
    header: dict[str, str] = {}
    client_of: dict[str, int] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            for tok in line[1:].split():
                key, _, val = tok.partition("=")
                header[key] = val
            continue
        eid, sep, k = raw.rpartition("\t")
        if not sep:
            raise PartitionError(f"{path}:{lineno}: expected 'episode_id<TAB>client_index'")
        try:
            client_of[eid] = int(k)
        except ValueError as exc:
            raise PartitionError(f"{path}:{lineno}: bad client index {k!r}") from exc
    n = int(header.get("clients", max(client_of.values(), default=-1) + 1))
    name = header.get("scheme", "custom/any")
    scheme = PartitionScheme.parse(name, max(n, 1), int(header.get("seed", 0)))
    return PartitionAssignment(client_of, scheme)


def heatmap_csv(labels: Sequence[str], matrix: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["client", *labels])
    for k, row in enumerate(matrix):
        w.writerow([k, *(int(v) for v in row)])
    return buf.getvalue()
