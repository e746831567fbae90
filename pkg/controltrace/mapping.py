# Licensed under a 3-clause BSD style license - see LICENSE.rst
"""
=======
mapping
=======

Stage 3 ranks ATT&CK techniques for each CVE; Stage 4 scores every NIST
control against a technique.  A control's hybrid score blends the binary
crosswalk indicator with TF-IDF similarity between the technique and control
texts::

    hybrid   = 0.72 * crosswalk_score + 0.28 * tfidf_score
    priority = hybrid * max_cvss

Both vectorizers are fitted per stage on a corpus that includes the
system-of-interest profile, so the vocabulary reflects the architecture
being analysed.
"""
import json
import re
from collections import namedtuple
from dataclasses import dataclass, field, replace

import numpy as np
from astropy import log

from . import conf
from .knowledge import UnknownTechnique, clean_text, control_sort_key
from .retrieval import RankedList, fit_tfidf, rank_from_external, score_query
from .sysml import soi_profile

__all__ = ['TechniquePrediction', 'ScoredControl', 'CvssAggregate',
           'hybrid_score', 'build_stage3_index', 'build_stage4_index',
           'map_cve_to_techniques', 'map_cves', 'predict_from_external',
           'recommend_controls', 'recommend_all', 'rank_controls', 'compute_priority',
           'aggregate_max_cvss', 'predictions_to_json', 'predictions_from_json',
           'recommendations_to_json', 'recommendations_from_json',
           'EmptyDescription', 'CvssOutOfRange', 'CROSSWALK_WEIGHT', 'TFIDF_WEIGHT',
           'CONTROL_RANKINGS']

CROSSWALK_WEIGHT = 0.72
TFIDF_WEIGHT = 0.28
CONTROL_RANKINGS = ('tfidf', 'hybrid')

SOI_DOC_ID = 'soi'
_PARENT_TECHNIQUE = re.compile(r'^T\d{4}$')


class EmptyDescription(ValueError):
    pass


class CvssOutOfRange(ValueError):
    pass


def hybrid_score(crosswalk_score, tfidf_score):
    return CROSSWALK_WEIGHT * crosswalk_score + TFIDF_WEIGHT * tfidf_score


@dataclass(frozen=True)
class TechniquePrediction:
    cve_id: str
    ranked: RankedList
    method: str

    def __post_init__(self):
        bad = [c for c in self.ranked.candidates if not _PARENT_TECHNIQUE.match(c)]
        if bad:
            raise ValueError("{0}: predictions must be parent techniques, got {1}"
                             .format(self.cve_id, ', '.join(bad)))

    @property
    def technique_ids(self):
        return self.ranked.candidates

    def to_dict(self):
        return {'cve_id': self.cve_id, 'method': self.method, 'ranked': self.ranked.to_dict()}

    @classmethod
    def from_dict(cls, data):
        return cls(data['cve_id'], RankedList.from_dict(data['ranked']), data['method'])


@dataclass(frozen=True)
class ScoredControl:
    """
    One (technique, control) recommendation.

    ``hybrid_score`` is always derived from the two component scores;
    ``priority`` and ``max_cvss`` stay None until `compute_priority`.
    """
    technique_id: str
    control_id: str
    crosswalk_score: float
    tfidf_score: float
    priority: float = None
    max_cvss: float = None
    hybrid_score: float = field(init=False)

    def __post_init__(self):
        if self.crosswalk_score not in (0.0, 1.0):
            raise ValueError("crosswalk score must be 0 or 1")
        object.__setattr__(self, 'hybrid_score',
                           hybrid_score(self.crosswalk_score, self.tfidf_score))


CvssAggregate = namedtuple('CvssAggregate', ['max_cvss', 'missing'])


def aggregate_max_cvss(cves):
    """
    Highest CVSS base score among ``cves``.

    Returns ``(0.0, True)`` when no record has a score.
    """
    scores = [cve.cvss_base for cve in cves if cve.cvss_base is not None]
    if not scores:
        return CvssAggregate(0.0, True)
    return CvssAggregate(float(max(scores)), False)


def compute_priority(control, max_cvss):
    """Attach ``priority = hybrid_score * max_cvss`` to a scored control."""
    if not (np.isfinite(max_cvss) and 0.0 <= max_cvss <= 10.0):
        raise CvssOutOfRange("CVSS {0} outside [0, 10]".format(max_cvss))
    return replace(control, priority=control.hybrid_score * max_cvss, max_cvss=float(max_cvss))


def build_stage3_index(kb, registry, store, sample_size=None):
    """
    TF-IDF over parent technique texts, the SOI profile and a sample of
    NVD descriptions (``conf.nvd_sample_size`` by default).
    """
    if sample_size is None:
        sample_size = conf.nvd_sample_size
    corpus = [(t.id, clean_text(t.text)) for t in kb.parent_techniques()]
    corpus.append((SOI_DOC_ID, clean_text(soi_profile(registry))))
    corpus += [(r.id, clean_text(r.description)) for r in store.description_sample(sample_size)]
    return fit_tfidf(corpus)


def build_stage4_index(kb, registry=None):
    """
    TF-IDF over technique texts, control texts and the SOI profile.

    Without a registry the corpus holds the catalog texts only.
    """
    corpus = [(t.id, clean_text(t.text)) for t in
              sorted(kb.techniques.values(), key=lambda t: t.id)]
    corpus += [(c.id, clean_text(c.text)) for c in kb.sorted_controls()]
    if registry is not None:
        corpus.append((SOI_DOC_ID, clean_text(soi_profile(registry))))
    return fit_tfidf(corpus)


def _technique_candidates(index):
    return [doc_id for doc_id in index.doc_ids if _PARENT_TECHNIQUE.match(doc_id)]


def map_cve_to_techniques(cve, index, k=None):
    """
    Top-``k`` techniques for a CVE by TF-IDF cosine.

    Raises
    ------
    EmptyDescription
        If the cleaned description is empty.
    """
    if k is None:
        k = conf.technique_top_k
    text = clean_text(cve.description)
    if not text:
        raise EmptyDescription("{0} has no usable description".format(cve.id))
    ranked = score_query(index, text, _technique_candidates(index), query_id=cve.id)
    return TechniquePrediction(cve.id, ranked.top(k), 'tfidf')


def map_cves(cves, index, k=None):
    """Stage 3 over many CVEs; records without text are skipped with a warning."""
    predictions = {}
    for cve in cves:
        try:
            predictions[cve.id] = map_cve_to_techniques(cve, index, k)
        except EmptyDescription as exc:
            log.warning("Not mapping {0}".format(exc))
    return predictions


def predict_from_external(cve_id, score_set, kb, k=None):
    """
    Prediction from an external (dense encoder or LLM) score set.

    Only scored parent techniques become predictions.
    """
    if k is None:
        k = conf.technique_top_k
    candidates = [t.id for t in kb.parent_techniques()]
    ranked = rank_from_external(score_set, cve_id, candidates)
    n_scored = sum(1 for entry in ranked if not entry.missing)
    return TechniquePrediction(cve_id, ranked.top(min(k, n_scored)), score_set.model_name)


def recommend_controls(technique_id, stage4_index, kb, top_m=None, crosswalk=None):
    """
    Score every control against a technique.

    ``crosswalk`` replaces the catalog crosswalk as the source of the
    indicator; it is any container of ``(technique_id, control_id)`` rows.

    Returns
    -------
    controls : list of `ScoredControl`
        Sorted by hybrid score, ties to the lower control id; truncated to
        ``top_m`` when given.

    Raises
    ------
    UnknownTechnique
        If the technique is not in the catalog or the index.
    """
    if technique_id not in kb.techniques or technique_id not in stage4_index:
        raise UnknownTechnique("technique {0} is not loaded".format(technique_id))
    if crosswalk is None:
        linked = kb.in_crosswalk
    else:
        rows = {tuple(row) for row in crosswalk}

        def linked(technique, control):
            return (technique, control) in rows
    scored = []
    for control in kb.sorted_controls():
        similarity = float(np.clip(stage4_index.similarity(technique_id, control.id), 0.0, 1.0))
        scored.append(ScoredControl(
            technique_id, control.id,
            1.0 if linked(technique_id, control.id) else 0.0,
            similarity))
    scored.sort(key=lambda c: (-c.hybrid_score, control_sort_key(c.control_id)))
    return scored if top_m is None else scored[:top_m]


def rank_controls(technique_id, stage4_index, kb, method='tfidf', crosswalk=None):
    """
    Every control as a `RankedList` for retrieval scoring.

    ``method`` is ``'tfidf'`` (clipped technique-control cosine) or
    ``'hybrid'`` (the hybrid score, with the indicator taken from
    ``crosswalk`` when given).  Ties go to the lexicographically lower id.
    """
    if method not in CONTROL_RANKINGS:
        raise ValueError("unknown control ranking {0!r}".format(method))
    scored = recommend_controls(technique_id, stage4_index, kb, crosswalk=crosswalk)
    if method == 'tfidf':
        scores = {c.control_id: c.tfidf_score for c in scored}
    else:
        scores = {c.control_id: c.hybrid_score for c in scored}
    return RankedList.from_scores(technique_id, scores)


def recommend_all(technique_ids, stage4_index, kb, top_m=None):
    """Stage 4 for a set of techniques, as ``{technique_id: [ScoredControl]}``."""
    return {technique_id: recommend_controls(technique_id, stage4_index, kb, top_m)
            for technique_id in sorted(set(technique_ids))}


def predictions_to_json(predictions):
    return json.dumps([predictions[key].to_dict() for key in sorted(predictions)],
                      indent=2, sort_keys=True) + '\n'


def predictions_from_json(text):
    return {p.cve_id: p for p in map(TechniquePrediction.from_dict, json.loads(text))}


def recommendations_to_json(recommendations):
    data = {technique_id: [{'control_id': c.control_id, 'crosswalk_score': c.crosswalk_score,
                            'tfidf_score': c.tfidf_score} for c in controls]
            for technique_id, controls in recommendations.items()}
    return json.dumps(data, indent=2, sort_keys=True) + '\n'


def recommendations_from_json(text):
    """Inverse of `recommendations_to_json`; ranked order is kept."""
    return {technique_id: [ScoredControl(technique_id, c['control_id'], c['crosswalk_score'],
                                         c['tfidf_score']) for c in controls]
            for technique_id, controls in json.loads(text).items()}
