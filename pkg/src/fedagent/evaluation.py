"""Two-tier evaluation: TF-IDF gated step accuracy and all-steps episode accuracy."""

from __future__ import annotations

import csv
import io
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from .data import Episode, app_sort_key, category_sort_key
from .errors import EmptyCorpus, EmptyTestSet
from .localmodel import DEFAULT_DIM, episode_batch, format_response, gold_response, predict_slots, tokenize

DEFAULT_THRESHOLD = 0.5


@dataclass(frozen=True)
class IdfTable:
    weights: dict[str, float]
    n_docs: int

    def __getitem__(self, token: str) -> float:
        # unseen tokens get the df = 0 value of the same smoothed formula
        w = self.weights.get(token)
        return w if w is not None else math.log(1.0 + self.n_docs) + 1.0

    def get(self, token: str, default: float | None = None) -> float:
        return self[token]


def build_idf(corpus: Sequence[str]) -> IdfTable:
    """idf(t) = ln((1 + N) / (1 + df(t))) + 1 over the corpus documents."""
    if not corpus:
        raise EmptyCorpus("cannot build idf from an empty corpus")
    df: Counter[str] = Counter()
    for doc in corpus:
        df.update(set(tokenize(doc)))
    n = len(corpus)
    return IdfTable({t: math.log((1.0 + n) / (1.0 + c)) + 1.0 for t, c in sorted(df.items())}, n)


def tfidf_vector(text: str, idf: IdfTable | Mapping[str, float]) -> dict[str, float]:
    tf = Counter(tokenize(text))
    return {t: c * idf[t] for t, c in tf.items()}


def tfidf_similarity(a: str, b: str, idf: IdfTable | Mapping[str, float]) -> float:
    va, vb = tfidf_vector(a, idf), tfidf_vector(b, idf)
    na = math.sqrt(sum(x * x for x in va.values()))
    nb = math.sqrt(sum(x * x for x in vb.values()))
    if na == 0.0 or nb == 0.0:
        return 0.0
    dot = sum(x * vb[t] for t, x in va.items() if t in vb)
    return min(1.0, max(0.0, dot / (na * nb)))


@dataclass(frozen=True)
class StepResult:
    episode_id: str
    index: int
    predicted: str
    gold: str
    similarity: float
    correct: bool


@dataclass
class EvalReport:
    step_accuracy: float
    episode_accuracy: float
    by_app: dict[str, float]
    by_category: dict[str, float]
    n_steps: int
    n_episodes: int
    steps_by_app: dict[str, int] = field(default_factory=dict)
    steps_by_category: dict[str, int] = field(default_factory=dict)
    step_results: list[StepResult] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict[str, Any]:
        return {
            "step_accuracy": self.step_accuracy,
            "episode_accuracy": self.episode_accuracy,
            "n_steps": self.n_steps,
            "n_episodes": self.n_episodes,
            "by_app": self.by_app,
            "by_category": self.by_category,
            "steps_by_app": self.steps_by_app,
            "steps_by_category": self.steps_by_category,
        }

    def steps_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["episode_id", "index", "predicted", "gold", "similarity", "correct"])
        for r in self.step_results:
            w.writerow([r.episode_id, r.index, r.predicted, r.gold, repr(r.similarity), int(r.correct)])
        return buf.getvalue()


def _head(text: str) -> str:
    parts = text.split()
    return parts[0] if parts else ""


def score_step(predicted: str, gold: str, idf: IdfTable | Mapping[str, float], threshold: float) -> tuple[float, bool]:
    sim = tfidf_similarity(predicted, gold, idf)
    return sim, _head(predicted) == _head(gold) and sim >= threshold


def evaluate_predictions(
    episodes: Sequence[Episode],
    predictions: Mapping[tuple[str, int], str],
    threshold: float = DEFAULT_THRESHOLD,
    idf: IdfTable | None = None,
) -> EvalReport:
    """Score given responses (keyed by (episode_id, step index)) against gold."""
    if not episodes:
        raise EmptyTestSet("test set is empty")
    golds = {(ep.episode_id, st.index): gold_response(st) for ep in episodes for st in ep.steps}
    if idf is None:
        idf = build_idf(list(golds.values()))
    results: list[StepResult] = []
    ok_eps = 0
    app_hits: Counter[str] = Counter()
    app_n: Counter[str] = Counter()
    cat_hits: Counter[str] = Counter()
    cat_n: Counter[str] = Counter()
    for ep in episodes:
        all_ok = True
        for st in ep.steps:
            key = (ep.episode_id, st.index)
            pred = predictions.get(key, "")
            sim, ok = score_step(pred, golds[key], idf, threshold)
            results.append(StepResult(ep.episode_id, st.index, pred, golds[key], sim, ok))
            all_ok &= ok
            app_n[ep.app] += 1
            cat_n[ep.category] += 1
            app_hits[ep.app] += ok
            cat_hits[ep.category] += ok
        ok_eps += all_ok
    n_steps = len(results)
    n_correct = sum(r.correct for r in results)
    apps = sorted(app_n, key=app_sort_key)
    cats = sorted(cat_n, key=category_sort_key)
    return EvalReport(
        step_accuracy=n_correct / n_steps,
        episode_accuracy=ok_eps / len(episodes),
        by_app={a: app_hits[a] / app_n[a] for a in apps},
        by_category={c: cat_hits[c] / cat_n[c] for c in cats},
        n_steps=n_steps,
        n_episodes=len(episodes),
        steps_by_app={a: app_n[a] for a in apps},
        steps_by_category={c: cat_n[c] for c in cats},
        step_results=results,
    )


def predict_all(params: np.ndarray, episodes: Sequence[Episode], low_level: bool, dim: int) -> dict[tuple[str, int], str]:
    batch = episode_batch(episodes, dim, low_level)
    if len(batch) == 0:
        return {}
    acts, slots = predict_slots(params, batch.x)
    keys = [(ep.episode_id, st.index) for ep in episodes for st in ep.steps]
    return {k: format_response(int(a), int(v)) for k, a, v in zip(keys, acts, slots)}


def evaluate(
    params: np.ndarray,
    test_episodes: Sequence[Episode],
    low_level: bool = False,
    threshold: float = DEFAULT_THRESHOLD,
    dim: int = DEFAULT_DIM,
) -> EvalReport:
    if not test_episodes:
        raise EmptyTestSet("test set is empty")
    return evaluate_predictions(test_episodes, predict_all(params, test_episodes, low_level, dim), threshold)
