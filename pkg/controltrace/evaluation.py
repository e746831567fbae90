# Licensed under a 3-clause BSD style license - see LICENSE.rst
"""
==========
evaluation
==========

Scoring of technique and control mappings: grouped train/test splits,
ranked-retrieval metrics (MRR, Hits@K, Hit-Rate@K, Recall@K), multi-label
classification metrics with a threshold sweep, and inter-model score
correlation.
"""
import enum
from collections import namedtuple
from dataclasses import dataclass, field

import numpy as np
from astropy import log
from scipy import stats
from sklearn.metrics import hamming_loss, multilabel_confusion_matrix
from sklearn.model_selection import GroupShuffleSplit

from . import conf
from .retrieval import RankedList

__all__ = ['EvalQuery', 'RetrievalReport', 'MultiLabelReport', 'SplitSpec',
           'GroupKey', 'Correlation', 'grouped_split', 'mrr', 'hits_at_k',
           'hit_rate_recall_at_k', 'retrieval_report', 'multilabel_metrics',
           'threshold_sweep', 'pearson_correlation', 'align_score_sets',
           'correlation_matrix', 'truth_from_pairs', 'crosswalk_truth',
           'split_crosswalk', 'queries_from_predictions',
           'scores_to_matrix', 'metrics_record', 'SWEEP_THRESHOLDS',
           'DegenerateSplit', 'EmptyQuerySet', 'ShapeMismatch',
           'LengthMismatch', 'TooShort']

HITS_KS = (1, 3, 5, 10)
SWEEP_THRESHOLDS = np.round(np.arange(0.10, 0.951, 0.05), 2)


class DegenerateSplit(ValueError):
    pass


class EmptyQuerySet(ValueError):
    pass


class ShapeMismatch(ValueError):
    pass


class LengthMismatch(ValueError):
    pass


class TooShort(ValueError):
    pass


@dataclass(frozen=True)
class EvalQuery:
    query_id: str
    truth: frozenset
    ranked: RankedList

    def __post_init__(self):
        object.__setattr__(self, 'truth', frozenset(self.truth))
        if not self.truth:
            raise ValueError("query {0} has no relevant candidates".format(self.query_id))

    def first_relevant_rank(self):
        """Rank of the best-ranked relevant candidate; None if none is scored."""
        for entry in self.ranked:
            if not entry.missing and entry.candidate_id in self.truth:
                return entry.rank
        return None

    def top_k(self, k):
        return {e.candidate_id for e in self.ranked.entries[:k] if not e.missing}


def _check_queries(queries):
    queries = list(queries)
    if not queries:
        raise EmptyQuerySet("no queries to evaluate")
    return queries


def _check_k(k):
    if k < 1:
        raise ValueError("k must be at least 1")


def mrr(queries):
    """Mean reciprocal rank of the first relevant candidate (0 when none is ranked)."""
    queries = _check_queries(queries)
    reciprocal = []
    for query in queries:
        rank = query.first_relevant_rank()
        reciprocal.append(0.0 if rank is None else 1.0 / rank)
    return float(np.mean(reciprocal))


def hits_at_k(queries, k):
    """Fraction of queries with a relevant candidate in the top ``k``."""
    queries = _check_queries(queries)
    _check_k(k)
    return float(np.mean([bool(q.top_k(k) & q.truth) for q in queries]))


def hit_rate_recall_at_k(queries, k):
    """
    ``(hit_rate, recall)`` at ``k``; recall pools recovered truths over all
    queries before dividing.
    """
    queries = _check_queries(queries)
    _check_k(k)
    hit_rate = hits_at_k(queries, k)
    found = sum(len(q.top_k(k) & q.truth) for q in queries)
    total = sum(len(q.truth) for q in queries)
    return hit_rate, found / total


@dataclass(frozen=True)
class RetrievalReport:
    mrr: float
    hits_at: dict
    n_queries: int


def retrieval_report(queries, ks=HITS_KS):
    queries = _check_queries(queries)
    return RetrievalReport(mrr(queries), {k: hits_at_k(queries, k) for k in ks}, len(queries))


@dataclass(frozen=True)
class MultiLabelReport:
    threshold: float
    micro_p: float
    micro_r: float
    micro_f1: float
    macro_f1: float
    hamming_loss: float
    per_class_f1: dict = field(default_factory=dict)


def _ratio(numerator, denominator):
    return float(numerator) / denominator if denominator else 0.0


def multilabel_metrics(scores, labels, threshold, classes=None):
    """
    Multi-label metrics of ``scores >= threshold`` against binary ``labels``.

    Micro figures pool TP/FP/FN over every cell.  Macro F1 averages the
    classes that have positives; a supported class with no correct
    prediction scores 0.  ``per_class_f1`` covers the supported classes,
    keyed by ``classes`` (column index by default).

    Raises
    ------
    ShapeMismatch
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(int)
    if scores.shape != labels.shape or scores.ndim != 2:
        raise ShapeMismatch("scores {0} and labels {1} differ in shape".format(
            scores.shape, labels.shape))
    if labels.size == 0:
        raise ShapeMismatch("empty score matrix")
    predicted = (scores >= threshold).astype(int)
    n_classes = labels.shape[1]
    if classes is None:
        classes = list(range(n_classes))

    # a single column would be read as binary targets; pad with an empty class
    pad = np.zeros((labels.shape[0], 1), dtype=int) if n_classes == 1 else None
    if pad is None:
        confusion = multilabel_confusion_matrix(labels, predicted)
    else:
        confusion = multilabel_confusion_matrix(np.hstack([labels, pad]),
                                                np.hstack([predicted, pad]))[:1]
    tp, fp, fn = confusion[:, 1, 1], confusion[:, 0, 1], confusion[:, 1, 0]

    micro_p = _ratio(tp.sum(), tp.sum() + fp.sum())
    micro_r = _ratio(tp.sum(), tp.sum() + fn.sum())
    micro_f1 = _ratio(2 * micro_p * micro_r, micro_p + micro_r)

    per_class = {}
    for column, name in enumerate(classes):
        if tp[column] + fn[column] > 0:
            per_class[name] = _ratio(2 * tp[column], 2 * tp[column] + fp[column] + fn[column])
    macro_f1 = float(np.mean(list(per_class.values()))) if per_class else 0.0

    return MultiLabelReport(float(threshold), micro_p, micro_r, micro_f1, macro_f1,
                            float(hamming_loss(labels, predicted)), per_class)


def threshold_sweep(scores, labels, thresholds=SWEEP_THRESHOLDS, classes=None):
    """
    Best micro-F1 threshold over 0.10, 0.15, ..., 0.95; ties keep the lower one.

    Returns
    -------
    threshold, report : float, `MultiLabelReport`
    """
    best = None
    for threshold in thresholds:
        report = multilabel_metrics(scores, labels, threshold, classes)
        if best is None or report.micro_f1 > best.micro_f1:
            best = report
    log.debug("Threshold sweep: best {0:.2f} (micro F1 {1:.4f})".format(
        best.threshold, best.micro_f1))
    return best.threshold, best


class GroupKey(str, enum.Enum):
    CVE_ID = 'cve_id'
    TECHNIQUE_ID = 'technique_id'


@dataclass(frozen=True)
class SplitSpec:
    test_fraction: float = 0.2
    seed: int = 42
    group_key: GroupKey = GroupKey.CVE_ID

    def __post_init__(self):
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError("test_fraction must lie in (0, 1)")
        object.__setattr__(self, 'group_key', GroupKey(self.group_key))


def grouped_split(pairs, spec=SplitSpec()):
    """
    Split labelled pairs so that no group (CVE or technique) straddles the
    train and test sides.

    Groups are shuffled with a seeded generator and ``ceil(test_fraction *
    n_groups)`` of them form the test side.

    Returns
    -------
    train, test : list, list

    Raises
    ------
    DegenerateSplit
        Fewer than two groups, or a fraction that leaves one side empty.
    """
    pairs = list(pairs)
    if not pairs:
        raise DegenerateSplit("nothing to split")
    groups = [getattr(pair, spec.group_key.value) for pair in pairs]
    if len(set(groups)) < 2:
        raise DegenerateSplit("a grouped split needs at least two groups")
    splitter = GroupShuffleSplit(n_splits=1, test_size=spec.test_fraction,
                                 random_state=spec.seed)
    try:
        train_index, test_index = next(splitter.split(np.zeros(len(pairs)), groups=groups))
    except ValueError as exc:
        raise DegenerateSplit(str(exc))
    return ([pairs[i] for i in sorted(train_index)],
            [pairs[i] for i in sorted(test_index)])


Correlation = namedtuple('Correlation', ['r', 'undefined'])


def pearson_correlation(a, b):
    """
    Pearson r of two aligned score vectors.

    Returns ``Correlation(nan, True)`` when either vector is constant.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise LengthMismatch("vectors of length {0} and {1}".format(a.size, b.size))
    if a.size < 2:
        raise TooShort("correlation needs at least two points")
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        return Correlation(float('nan'), True)
    r = stats.pearsonr(a, b)[0]
    return Correlation(float(np.clip(r, -1.0, 1.0)), False)


def align_score_sets(a, b):
    """
    Vectors over the sorted intersection of two score sets' (query, candidate) pairs.
    """
    keys = sorted(set(a.scores) & set(b.scores))
    return (keys, np.array([a.scores[key] for key in keys]),
            np.array([b.scores[key] for key in keys]))


def correlation_matrix(score_sets):
    """
    Pairwise Pearson r between models; undefined or unalignable pairs are NaN.

    Returns
    -------
    names : list of str
    matrix : `~numpy.ndarray`
    """
    score_sets = sorted(score_sets, key=lambda s: s.model_name)
    names = [s.model_name for s in score_sets]
    matrix = np.full((len(names), len(names)), np.nan)
    for i, first in enumerate(score_sets):
        for j in range(i, len(score_sets)):
            _, va, vb = align_score_sets(first, score_sets[j])
            try:
                r = pearson_correlation(va, vb).r
            except TooShort:
                r = np.nan
            matrix[i, j] = matrix[j, i] = r
    return names, matrix


def truth_from_pairs(pairs, key=GroupKey.CVE_ID):
    """``{query_id: set of relevant ids}`` from ground-truth pairs."""
    key = GroupKey(key)
    other = 'technique_id' if key is GroupKey.CVE_ID else 'cve_id'
    truth = {}
    for pair in pairs:
        truth.setdefault(getattr(pair, key.value), set()).add(getattr(pair, other))
    return truth


def crosswalk_truth(rows):
    """``{technique_id: set of control ids}`` from crosswalk rows."""
    truth = {}
    for technique_id, control_id in rows:
        truth.setdefault(technique_id, set()).add(control_id)
    return truth


def split_crosswalk(rows, spec=None):
    """
    Grouped split of crosswalk rows by technique id.

    The train rows are what a control ranker may know about; the test
    techniques become queries whose truth is their test rows.
    """
    if spec is None:
        spec = SplitSpec(conf.split_test_fraction, conf.split_seed, GroupKey.TECHNIQUE_ID)
    elif spec.group_key is not GroupKey.TECHNIQUE_ID:
        raise ValueError("crosswalk rows are split by technique id")
    return grouped_split(rows, spec)


def queries_from_predictions(predictions, truth):
    """
    One `EvalQuery` per query that has ground truth, in id order.

    ``predictions`` maps query ids to `RankedList` (or anything with a
    ``ranked`` attribute).  Queries with truth but no prediction get an
    empty ranking and so count as misses.
    """
    queries = []
    for query_id in sorted(truth):
        if not truth[query_id]:
            continue
        prediction = predictions.get(query_id)
        ranked = getattr(prediction, 'ranked', prediction)
        if ranked is None:
            ranked = RankedList(query_id)
        queries.append(EvalQuery(query_id, frozenset(truth[query_id]), ranked))
    return queries


def scores_to_matrix(score_set, query_ids, classes):
    """Query x class matrix of external scores; unscored cells are 0."""
    matrix = np.zeros((len(query_ids), len(classes)))
    for i, query_id in enumerate(query_ids):
        for j, candidate_id in enumerate(classes):
            matrix[i, j] = score_set.scores.get((query_id, candidate_id), 0.0)
    return matrix


def metrics_record(queries=None, multilabel=None):
    """
    Flatten evaluation results into the reporting field set.

    Fields that were not computed are None.
    """
    record = dict.fromkeys(['mrr', 'h1', 'h3', 'h5', 'h10', 'hr1', 'hr5', 'r5',
                            'micro_p', 'micro_r', 'micro_f1', 'macro_f1',
                            'hamming', 'threshold', 'n_queries'])
    if queries is not None:
        report = retrieval_report(queries)
        record.update(mrr=report.mrr, n_queries=report.n_queries,
                      **{'h{0}'.format(k): v for k, v in report.hits_at.items()})
        hr1, _ = hit_rate_recall_at_k(queries, 1)
        hr5, r5 = hit_rate_recall_at_k(queries, 5)
        record.update(hr1=hr1, hr5=hr5, r5=r5)
    if multilabel is not None:
        record.update(micro_p=multilabel.micro_p, micro_r=multilabel.micro_r,
                      micro_f1=multilabel.micro_f1, macro_f1=multilabel.macro_f1,
                      hamming=multilabel.hamming_loss, threshold=multilabel.threshold)
    return record
