"""Episode/step data model, ingestion, app-name extraction and dataset stats."""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping, Sequence

from .errors import CatalogError, DataError, EmptySteps, MissingField, UnknownActionType

# Sorted so that index order and lexicographic order coincide (argmax ties
# resolve to the alphabetically first action).
ACTION_TYPES: tuple[str, ...] = (
    "click",
    "complete",
    "long_press",
    "navigate_back",
    "navigate_home",
    "open_app",
    "scroll",
    "type",
    "wait",
)
ACTION_INDEX = {name: i for i, name in enumerate(ACTION_TYPES)}

# Spellings used by the public Android Control / AitW dumps.
ACTION_ALIASES = {
    "input_text": "type",
    "status_task_complete": "complete",
    "task_complete": "complete",
    "press_back": "navigate_back",
    "press_home": "navigate_home",
}

CATEGORIES: tuple[str, ...] = (
    "Shopping",
    "Traveling",
    "Office",
    "Lives",
    "Entertainment",
)
UNKNOWN = "Unknown"
ALL_CATEGORIES: tuple[str, ...] = CATEGORIES + (UNKNOWN,)

APP_PATTERN = re.compile(r"\bthe\s+(\w+(?:\s+\w+)?)\s+app\b", re.IGNORECASE)
_WS = re.compile(r"\s+")


@dataclass(frozen=True)
class Step:
    index: int
    action_type: str
    action_args: str = ""
    subgoal: str = ""


@dataclass(frozen=True)
class Episode:
    episode_id: str
    instruction: str
    app: str
    category: str
    steps: tuple[Step, ...]

    @property
    def n_steps(self) -> int:
        return len(self.steps)


def normalize_app(name: str) -> str:
    """Display form: trimmed, internal whitespace collapsed, casing kept."""
    return _WS.sub(" ", name.replace("\ufeff", "")).strip()


def app_key(name: str) -> str:
    """Lookup key for catalog matching."""
    return normalize_app(name).casefold()


# ---------------------------------------------------------------------------
# Catalog


@dataclass
class AppCatalog:
    entries: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for app, cat in self.entries.items():
            if cat not in CATEGORIES:
                raise CatalogError(f"app {app!r}: unknown category {cat!r}")

    def lookup(self, app: str) -> str:
        return self.entries.get(app_key(app), UNKNOWN)

    def __contains__(self, app: str) -> bool:
        return app_key(app) in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def merged(self, overlay: "AppCatalog") -> "AppCatalog":
        return AppCatalog({**self.entries, **overlay.entries})

    @classmethod
    def parse(cls, text: str, source: str = "<catalog>") -> "AppCatalog":
        entries: dict[str, str] = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = raw.rstrip("\r\n").split("\t")
            if len(parts) != 2:
                raise CatalogError(f"{source}:{lineno}: expected 'app<TAB>category'")
            app, cat = normalize_app(parts[0]), parts[1].strip()
            if cat not in CATEGORIES:
                raise CatalogError(f"{source}:{lineno}: unknown category {cat!r}")
            entries[app.casefold()] = cat
        return cls(entries)

    @classmethod
    def from_file(cls, path: str | Path) -> "AppCatalog":
        path = Path(path)
        return cls.parse(path.read_text(encoding="utf-8"), str(path))

    @classmethod
    def default(cls) -> "AppCatalog":
        text = resources.files("fedagent").joinpath("catalog.tsv").read_text(encoding="utf-8")
        return cls.parse(text, "catalog.tsv")


_DEFAULT_CATALOG: AppCatalog | None = None


def default_catalog() -> AppCatalog:
    global _DEFAULT_CATALOG
    if _DEFAULT_CATALOG is None:
        _DEFAULT_CATALOG = AppCatalog.default()
    return _DEFAULT_CATALOG


def categorize_app(app: str, catalog: AppCatalog | None = None) -> str:
    return (catalog or default_catalog()).lookup(app)


def catalog_apps(category: str | None = None) -> list[str]:
    """Display names of the shipped catalog apps, in file order."""
    text = resources.files("fedagent").joinpath("catalog.tsv").read_text(encoding="utf-8")
    out = []
    for line in text.splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        app, cat = line.split("\t")
        if category is None or cat == category:
            out.append(app)
    return out


# ---------------------------------------------------------------------------
# App-name extraction


def _record_actions(record: Mapping[str, Any]) -> list[Any]:
    for key in ("actions", "steps"):
        if key in record and isinstance(record[key], list):
            return record[key]
    at = record.get("action_type")
    if isinstance(at, list):
        return [{"action_type": a} for a in at]
    return []


def _action_name(action: Any) -> str:
    if isinstance(action, Mapping):
        return str(action.get("action_type", ""))
    return str(action)


def extract_app_name(record: Mapping[str, Any]) -> str | None:
    """Return the app an episode record talks about, or None.

    An ``open_app`` action wins: its ``app_name`` (on the action, else on the
    record) is used with byte-order marks removed. Otherwise the goal text is
    searched for "the <name> app".
    """
    for action in _record_actions(record):
        if _action_name(action) != "open_app":
            continue
        name = action.get("app_name") if isinstance(action, Mapping) else None
        if name is None:
            name = record.get("app_name")
        if name is not None:
            return str(name).replace("\ufeff", "")
    goal = record.get("goal", record.get("instruction"))
    if not goal:
        return None
    match = APP_PATTERN.search(str(goal))
    return match.group(1) if match else None


# ---------------------------------------------------------------------------
# Parsing / serialization


def _action_args_text(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    return json.dumps(value, sort_keys=True, ensure_ascii=False)


def parse_step(raw: Mapping[str, Any], position: int) -> Step:
    if not isinstance(raw, Mapping):
        raise MissingField(f"steps[{position}]: not an object")
    if "action_type" not in raw:
        raise MissingField(f"steps[{position}].action_type")
    action = str(raw["action_type"])
    action = ACTION_ALIASES.get(action, action)
    if action not in ACTION_INDEX:
        raise UnknownActionType(f"steps[{position}].action_type: {raw['action_type']!r}")
    index = raw.get("index", position)
    if not isinstance(index, int) or index != position:
        raise DataError(f"steps[{position}].index: expected {position}, got {index!r}")
    return Step(
        index=position,
        action_type=action,
        action_args=_action_args_text(raw.get("action_args")),
        subgoal=str(raw.get("subgoal") or ""),
    )


def parse_episode(record: Mapping[str, Any], catalog: AppCatalog | None = None) -> Episode:
    """Validate one episode record and build an :class:`Episode`.

    ``goal`` is accepted as an alias of ``instruction``. When ``app`` is
    absent it is recovered with :func:`extract_app_name`. The category is
    always recomputed from the catalog. Unknown keys are ignored.
    """
    if "episode_id" not in record:
        raise MissingField("episode_id")
    if "instruction" in record:
        instruction = record["instruction"]
    elif "goal" in record:
        instruction = record["goal"]
    else:
        raise MissingField("instruction")
    if "steps" not in record:
        raise MissingField("steps")
    raw_steps = record["steps"]
    if not isinstance(raw_steps, list):
        raise MissingField("steps: expected a list")
    if not raw_steps:
        raise EmptySteps(f"episode {record['episode_id']!r}: steps is empty")
    steps = tuple(parse_step(s, i) for i, s in enumerate(raw_steps))

    app = record.get("app")
    if app is None:
        app = extract_app_name(record) or ""
    app = normalize_app(str(app))
    return Episode(
        episode_id=str(record["episode_id"]),
        instruction=str(instruction),
        app=app,
        category=categorize_app(app, catalog) if app else UNKNOWN,
        steps=steps,
    )


def episode_to_record(ep: Episode) -> dict[str, Any]:
    return {
        "episode_id": ep.episode_id,
        "instruction": ep.instruction,
        "app": ep.app,
        "category": ep.category,
        "steps": [
            {
                "index": s.index,
                "subgoal": s.subgoal,
                "action_type": s.action_type,
                "action_args": s.action_args,
            }
            for s in ep.steps
        ],
    }


def dumps_episode(ep: Episode) -> str:
    return json.dumps(episode_to_record(ep), ensure_ascii=False, separators=(",", ":"))


def write_dataset(episodes: Iterable[Episode], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for ep in episodes:
            fh.write(dumps_episode(ep))
            fh.write("\n")


def iter_dataset(path: str | Path, catalog: AppCatalog | None = None) -> Iterator[Episode]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MissingField(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            yield parse_episode(record, catalog)


def read_dataset(path: str | Path, catalog: AppCatalog | None = None) -> list[Episode]:
    return list(iter_dataset(path, catalog))


# ---------------------------------------------------------------------------
# Statistics


@dataclass(frozen=True)
class DatasetStats:
    n_episodes: int
    n_steps: int
    n_apps: int
    n_categories: int
    per_app: dict[str, tuple[int, int]]
    per_category: dict[str, tuple[int, int]]

    def to_dict(self) -> dict[str, Any]:
        return {
            "n_episodes": self.n_episodes,
            "n_steps": self.n_steps,
            "n_apps": self.n_apps,
            "n_categories": self.n_categories,
            "per_app": {k: list(v) for k, v in self.per_app.items()},
            "per_category": {k: list(v) for k, v in self.per_category.items()},
        }


def dataset_stats(dataset: Sequence[Episode]) -> DatasetStats:
    app_eps: Counter[str] = Counter()
    app_steps: Counter[str] = Counter()
    cat_eps: Counter[str] = Counter()
    cat_steps: Counter[str] = Counter()
    for ep in dataset:
        app_eps[ep.app] += 1
        app_steps[ep.app] += ep.n_steps
        cat_eps[ep.category] += 1
        cat_steps[ep.category] += ep.n_steps
    per_app = {a: (app_eps[a], app_steps[a]) for a in sorted(app_eps, key=app_sort_key)}
    per_cat = {c: (cat_eps[c], cat_steps[c]) for c in sorted(cat_eps, key=category_sort_key)}
    return DatasetStats(
        n_episodes=len(dataset),
        n_steps=sum(app_steps.values()),
        n_apps=len(per_app),
        n_categories=len(per_cat),
        per_app=per_app,
        per_category=per_cat,
    )


def app_sort_key(app: str) -> tuple[str, str]:
    return (app.casefold(), app)


def category_sort_key(cat: str) -> tuple[int, str]:
    try:
        return (ALL_CATEGORIES.index(cat), cat)
    except ValueError:
        return (len(ALL_CATEGORIES), cat)
