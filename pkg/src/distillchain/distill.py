"""Pseudo-label generation over an unlabelled pool, plus the two filters that
shape what the next student trains on: per-sample truncation to the highest
class probabilities, and per-class retention of the most confident samples.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import ClassCatalog, DataTable
from .learner import ModelParams, forward


@dataclass(frozen=True)
class PseudoLabel:
    """Soft class-probability target for one pool sample."""

    sample_id: int
    soft: np.ndarray
    top_class: int
    confidence: float

    @staticmethod
    def from_probs(sample_id: int, probs: np.ndarray) -> "PseudoLabel":
        soft = np.asarray(probs, dtype=np.float64)
        soft.setflags(write=False)
        top = int(soft.argmax())
        return PseudoLabel(
            sample_id=int(sample_id), soft=soft, top_class=top, confidence=float(soft[top])
        )


@dataclass(frozen=True)
class DistillConfig:
    """Pseudo-label filter settings.

    ``per_class_cap`` keeps at most that many samples per predicted class
    (None = no cap); ``top_probs`` keeps only that many probabilities non-zero
    per sample (None = all classes).
    """

    per_class_cap: int | None = 4000
    top_probs: int | None = None

    def __post_init__(self) -> None:
        if self.per_class_cap is not None and self.per_class_cap < 1:
            raise ValueError("per_class_cap must be positive or None")
        if self.top_probs is not None and self.top_probs < 1:
            raise ValueError("top_probs must be positive or None")


def pseudo_label_pool(model: ModelParams, pool: DataTable) -> list[PseudoLabel]:
    """One PseudoLabel per pool sample, ordered by ascending sample id.

    Only the pool's features are read; withheld labels stay untouched.
    """
    if len(pool) == 0:
        return []
    if pool.dim != model.arch.input_dim:
        raise ValueError(
            f"pool dim {pool.dim} does not match model input {model.arch.input_dim}"
        )
    order = np.argsort(pool.ids)
    probs = forward(model, pool.features[order])
    ids = pool.ids[order]
    return [PseudoLabel.from_probs(ids[i], probs[i]) for i in range(ids.shape[0])]


def keep_top_probabilities(label: PseudoLabel, keep: int) -> PseudoLabel:
    """Zero all but the ``keep`` largest probabilities and renormalize.

    Ties on the cut boundary keep the lower class index. The relative order
    of surviving probabilities, and hence the top class, is unchanged.
    """
    c = label.soft.shape[0]
    if not 1 <= keep <= c:
        raise ValueError(f"keep must be in [1, {c}]")
    if keep == c:
        return label
    # Stable sort on the negated vector ranks equal values by ascending index.
    survivors = np.argsort(-label.soft, kind="stable")[:keep]
    truncated = np.zeros(c, dtype=np.float64)
    truncated[survivors] = label.soft[survivors]
    truncated /= truncated.sum()
    return PseudoLabel.from_probs(label.sample_id, truncated)


def keep_most_confident_per_class(
    labels: list[PseudoLabel], cap: int | None, catalog: ClassCatalog
) -> list[PseudoLabel]:
    """Retain at most ``cap`` samples per predicted class, most confident
    first; ties break by ascending sample id. Output is grouped in catalog
    class order."""
    if cap is not None and cap < 1:
        raise ValueError("cap must be positive or None")
    by_class: list[list[PseudoLabel]] = [[] for _ in range(catalog.size)]
    for label in labels:
        by_class[label.top_class].append(label)
    kept: list[PseudoLabel] = []
    for members in by_class:
        members.sort(key=lambda p: (-p.confidence, p.sample_id))
        kept.extend(members if cap is None else members[:cap])
    return kept


def filter_pseudo_labels(
    labels: list[PseudoLabel], config: DistillConfig, catalog: ClassCatalog
) -> list[PseudoLabel]:
    """Per-sample probability truncation first, then the per-class cap on the
    recomputed confidences."""
    if config.top_probs is not None:
        labels = [keep_top_probabilities(p, config.top_probs) for p in labels]
    return keep_most_confident_per_class(labels, config.per_class_cap, catalog)


def pseudo_label_quality(
    labels: list[PseudoLabel], pool: DataTable
) -> tuple[float, np.ndarray]:
    """Agreement of predicted top classes with the pool's withheld truth.

    Diagnostics only: this is the single permitted reader of hidden pool
    labels, and nothing here feeds back into training. Returns the overall
    agreement and the per-true-class agreement vector (0 for classes absent
    from the scored labels).
    """
    truth = pool.reveal_hidden_labels()
    id_to_row = {int(sid): i for i, sid in enumerate(pool.ids)}
    c = pool.catalog.size
    hits = np.zeros(c, dtype=np.int64)
    totals = np.zeros(c, dtype=np.int64)
    for label in labels:
        row = id_to_row.get(label.sample_id)
        if row is None:
            raise ValueError(f"sample id {label.sample_id} not present in pool")
        true_class = int(truth[row])
        totals[true_class] += 1
        if label.top_class == true_class:
            hits[true_class] += 1
    if totals.sum() == 0:
        raise ValueError("no labels to score")
    per_class = np.where(totals > 0, hits / np.maximum(totals, 1), 0.0)
    return float(hits.sum() / totals.sum()), per_class
