"""Deterministic synthetic episode generator and dataset presets.

Every app gets a fixed behavioural profile (preferred actions, UI elements,
search terms) derived from a stable hash of its name, so the same app
behaves identically across datasets, seeds and processes. Episodes are
rendered from that profile with a seeded generator.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .data import (
    CATEGORIES,
    UNKNOWN,
    AppCatalog,
    Episode,
    Step,
    catalog_apps,
    categorize_app,
    normalize_app,
)
from .errors import InvalidSpec

MAX_STEPS = 30

_ELEMENTS = (
    "search bar", "menu button", "cart icon", "settings tab", "home tab",
    "profile icon", "filter button", "first result", "save button",
    "share button", "back arrow", "notification bell", "add button",
    "date picker", "confirm button", "play button", "next page",
    "download icon", "compose button", "list item",
)
_QUERIES = (
    "running shoes", "cheap flights", "meeting notes", "pasta recipe",
    "jazz playlist", "weather today", "birthday gift", "hotel deals",
    "morning alarm", "yoga routine", "news headlines", "train times",
    "grocery list", "travel bag", "photo album", "team update",
)
_TASKS = {
    "Shopping": ("add an item to the cart", "search for a product", "check my orders",
                 "apply a discount filter", "open the wishlist"),
    "Traveling": ("find a route home", "book a hotel room", "search for train tickets",
                  "check my booking", "compare flight prices"),
    "Office": ("set an alarm", "draft a new email", "create a reminder",
               "share a document", "add a calendar event"),
    "Lives": ("find a dinner recipe", "start a workout", "identify a plant",
              "begin a meditation", "log a habit"),
    "Entertainment": ("play a video", "follow an artist", "read the top story",
                      "save a pin", "send a message"),
    UNKNOWN: ("change a setting", "search for something", "open recent items",
              "update my profile", "check notifications"),
}
_INSTRUCTION_TEMPLATES = (
    "Open the {app} app and {task}",
    "Using {app}, {task}",
    "In the {app} app, {task}",
    "Go to {app} and {task}",
)
_MIDDLE_ACTIONS = ("click", "scroll", "type", "long_press", "wait", "navigate_back")


def stable_hash(text: str) -> int:
    return int.from_bytes(hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest(), "little")


@dataclass(frozen=True)
class AppProfile:
    script: tuple[str, ...]
    action_weights: tuple[float, ...]
    elements: tuple[str, ...]
    queries: tuple[str, ...]


@lru_cache(maxsize=4096)
def app_profile(app: str) -> AppProfile:
    rng = np.random.default_rng(stable_hash("profile:" + app.casefold()))
    order = rng.permutation(len(_MIDDLE_ACTIONS))
    favoured = [_MIDDLE_ACTIONS[i] for i in order[:3]]
    script = tuple(favoured[i] for i in rng.integers(0, 3, size=4))
    weights = np.array([0.6, 0.25, 0.15])
    full = np.full(len(_MIDDLE_ACTIONS), 0.0)
    for name, w in zip(favoured, weights):
        full[_MIDDLE_ACTIONS.index(name)] = w
    elements = tuple(_ELEMENTS[i] for i in rng.choice(len(_ELEMENTS), size=4, replace=False))
    queries = tuple(_QUERIES[i] for i in rng.choice(len(_QUERIES), size=2, replace=False))
    return AppProfile(script, tuple(float(x) for x in full), elements, queries)


def truncated_geometric_pmf(mean: float, max_steps: int = MAX_STEPS) -> np.ndarray:
    """pmf over 1..max_steps of a geometric law truncated to that range with the given mean."""
    ks = np.arange(1, max_steps + 1, dtype=float)
    upper = (max_steps + 1) / 2.0
    if not 1.0 <= mean < upper:
        raise InvalidSpec(f"mean_steps must lie in [1, {upper}) for max {max_steps}, got {mean}")
    if mean == 1.0:
        pmf = np.zeros(max_steps)
        pmf[0] = 1.0
        return pmf

    def pmf_for(p: float) -> np.ndarray:
        w = (1.0 - p) ** (ks - 1.0)
        return w / w.sum()

    lo, hi = 1e-12, 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if float(pmf_for(mid) @ ks) > mean:
            lo = mid
        else:
            hi = mid
    return pmf_for(0.5 * (lo + hi))


def apportion(total: int, weights: list[float]) -> list[int]:
    """Largest-remainder split of ``total`` proportional to ``weights``.

    Ties in the remainder go to the lowest index.
    """
    w = np.asarray(weights, dtype=float)
    s = w.sum()
    if total < 0 or s <= 0:
        raise ValueError("apportion needs total >= 0 and positive weight sum")
    exact = w * total / s
    base = np.floor(exact).astype(int)
    short = total - int(base.sum())
    rema = exact - base
    order = sorted(range(len(w)), key=lambda i: (-rema[i], i))
    for i in order[:short]:
        base[i] += 1
    return [int(x) for x in base]


@dataclass
class SyntheticSpec:
    n_episodes: int
    app_profile: dict[str, float]
    mean_steps: float = 6.7
    seed: int = 0
    total_steps: int | None = None
    id_prefix: str = "ep"
    catalog: AppCatalog | None = field(default=None, repr=False)

    def validate(self) -> None:
        if not isinstance(self.n_episodes, int) or self.n_episodes < 1:
            raise InvalidSpec(f"n_episodes must be >= 1, got {self.n_episodes!r}")
        if not self.app_profile:
            raise InvalidSpec("app_profile is empty")
        weights = list(self.app_profile.values())
        if any(not np.isfinite(w) or w < 0 for w in weights) or sum(weights) <= 0:
            raise InvalidSpec("app weights must be finite, nonnegative and not all zero")
        if self.mean_steps < 1:
            raise InvalidSpec(f"mean_steps must be >= 1, got {self.mean_steps}")
        truncated_geometric_pmf(self.mean_steps)
        if self.total_steps is not None and not (
            self.n_episodes <= self.total_steps <= MAX_STEPS * self.n_episodes
        ):
            raise InvalidSpec(
                f"total_steps {self.total_steps} unreachable for {self.n_episodes} episodes"
            )


def _fit_total(lengths: np.ndarray, target: int, rng: np.random.Generator) -> None:
    diff = target - int(lengths.sum())
    while diff != 0:
        step = 1 if diff > 0 else -1
        ok = np.flatnonzero((lengths < MAX_STEPS) if step > 0 else (lengths > 1))
        picks = rng.choice(ok, size=min(abs(diff), len(ok)), replace=False)
        lengths[picks] += step
        diff -= step * len(picks)


def _render_steps(app: str, n: int, rng: np.random.Generator) -> tuple[Step, ...]:
    prof = app_profile(app)
    steps = []
    for i in range(n):
        if n > 1 and i == 0:
            action, args, subgoal = "open_app", app, f"open the {app} app"
        elif i == n - 1:
            action, args, subgoal = "complete", "", "finish the task"
        else:
            if rng.random() < 0.8:
                action = prof.script[(i - 1) % len(prof.script)]
            else:
                action = _MIDDLE_ACTIONS[rng.choice(len(_MIDDLE_ACTIONS), p=prof.action_weights)]
            slot = (i - 1) % len(prof.elements)
            if action in ("click", "long_press"):
                args = prof.elements[slot]
                verb = "tap" if action == "click" else "press and hold"
                subgoal = f"{verb} the {args}"
            elif action == "type":
                args = prof.queries[slot % len(prof.queries)]
                subgoal = f"type {args}"
            elif action == "scroll":
                args = "down" if slot % 2 == 0 else "up"
                subgoal = f"scroll {args}"
            elif action == "wait":
                args, subgoal = "", "wait for the page to load"
            else:
                args, subgoal = "", "go back"
        steps.append(Step(index=i, action_type=action, action_args=args, subgoal=subgoal))
    return tuple(steps)


def generate_synthetic_dataset(spec: SyntheticSpec, stream: int = 0) -> list[Episode]:
    """Render ``spec.n_episodes`` episodes.

    App counts follow the weights exactly (largest remainder), episode order
    is shuffled, and step counts come from the truncated geometric law. If
    ``total_steps`` is set, lengths are nudged by +-1 until the sum matches.
    ``stream`` selects an independent random stream (train vs. test split).
    """
    spec.validate()
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, stream]))
    apps = [normalize_app(a) for a in spec.app_profile]
    counts = apportion(spec.n_episodes, list(spec.app_profile.values()))
    app_seq = np.repeat(np.arange(len(apps)), counts)
    rng.shuffle(app_seq)

    pmf = truncated_geometric_pmf(spec.mean_steps)
    lengths = rng.choice(np.arange(1, MAX_STEPS + 1), size=spec.n_episodes, p=pmf)
    if spec.total_steps is not None:
        _fit_total(lengths, spec.total_steps, rng)

    episodes = []
    for i, (a, n) in enumerate(zip(app_seq, lengths)):
        app = apps[a]
        category = categorize_app(app, spec.catalog)
        tasks = _TASKS[category]
        task = tasks[int(rng.integers(len(tasks)))]
        template = _INSTRUCTION_TEMPLATES[int(rng.integers(len(_INSTRUCTION_TEMPLATES)))]
        episodes.append(
            Episode(
                episode_id=f"{spec.id_prefix}-{i:05d}",
                instruction=template.format(app=app, task=task),
                app=app,
                category=category,
                steps=_render_steps(app, int(n), rng),
            )
        )
    return episodes


# ---------------------------------------------------------------------------
# Presets


@dataclass(frozen=True)
class Preset:
    name: str
    app_weights: dict[str, float]
    n_train: int
    n_test: int
    mean_steps: float
    train_steps: int | None
    test_steps: int | None
    n_clients: int
    schemes: tuple[str, ...]

    def train_spec(self, seed: int) -> SyntheticSpec:
        return SyntheticSpec(self.n_train, dict(self.app_weights), self.mean_steps, seed,
                             self.train_steps, "ep")

    def test_spec(self, seed: int) -> SyntheticSpec:
        return SyntheticSpec(self.n_test, dict(self.app_weights), self.mean_steps, seed,
                             self.test_steps, "test")


def tail_apps(n: int) -> list[str]:
    """Long-tail app names absent from the catalog (category Unknown)."""
    return [f"Tail App {k:03d}" for k in range(n)]


APP_LEVEL_APPS = ("Amazon", "Clock", "eBay", "Flipkart", "Gmail")
_SCALEAPP_HEAD = (300, 250, 200, 170, 150, 130, 115, 100, 90, 80, 70, 65, 60, 55, 50)


def _category_level_weights() -> dict[str, float]:
    half = {"Snapchat", "SmartNews", "The Hindu", "CNN"}
    return {a: (10.0 if a in half else 20.0) for a in catalog_apps()}


def _scaleapp_weights() -> dict[str, float]:
    apps = list(APP_LEVEL_APPS[:1]) + ["Flipkart", "eBay", "Gmail", "Clock"]
    for a in catalog_apps():
        if len(apps) == 30:
            break
        if a not in apps:
            apps.append(a)
    tail = (2500 - sum(_SCALEAPP_HEAD)) / 15.0
    return {a: float(_SCALEAPP_HEAD[i]) if i < 15 else tail for i, a in enumerate(apps)}


def _mixed_weights(n_tail: int, catalog_weight: float) -> dict[str, float]:
    w = {a: catalog_weight for a in catalog_apps()}
    w.update({a: 1.0 for a in tail_apps(n_tail)})
    return w


_STEP_EPISODE_SCHEMES = tuple(
    f"step-episode/{v}" for v in ("iid", "episode-skew", "step-skew", "both-skew")
)
_CATEGORY_SCHEMES = tuple(
    f"category-level/{v}"
    for v in ("iid", "skew", "half-skew", "non-uniform", "app-skew", "app-random")
)
_APP_SCHEMES = tuple(f"app-level/{v}" for v in ("iid", "skew", "half-skew", "non-uniform"))
_SCALE_SCHEMES = tuple(f"scaleapp/{v}" for v in ("iid", "skew", "random"))

BASIC_AC_MEAN = 47055 / 7000


def _build_presets() -> dict[str, Preset]:
    presets = {}
    for n in (200, 500, 1000, 3000, 5000, 7000):
        presets[f"basic-ac-{n}"] = Preset(
            f"basic-ac-{n}", _mixed_weights(825, 10.0), n, n // 10, BASIC_AC_MEAN,
            47055 if n == 7000 else None, 4648 if n == 7000 else None, 10, ("basic-iid/iid",),
        )
    for cat in CATEGORIES:
        presets[f"basic-ac-{cat.lower()}"] = Preset(
            f"basic-ac-{cat.lower()}", {a: 1.0 for a in catalog_apps(cat)}, 1000, 100,
            BASIC_AC_MEAN, None, None, 10, ("basic-iid/iid",),
        )
    presets["step-episode"] = Preset(
        "step-episode", _mixed_weights(241, 5.0), 1000, 100, 6.685, 6685, 635, 10,
        _STEP_EPISODE_SCHEMES,
    )
    presets["category-level"] = Preset(
        "category-level", _category_level_weights(), 1000, 100, 7.127, 7127, 703, 5,
        _CATEGORY_SCHEMES,
    )
    presets["app-level"] = Preset(
        "app-level", {a: 1.0 for a in APP_LEVEL_APPS}, 750, 100, 4456 / 750, 4456, 574, 5,
        _APP_SCHEMES,
    )
    presets["scaleapp"] = Preset(
        "scaleapp", _scaleapp_weights(), 2500, 250, 15700 / 2500, 15700, 1691, 30,
        _SCALE_SCHEMES,
    )
    return presets


PRESETS: dict[str, Preset] = _build_presets()
