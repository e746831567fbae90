# Licensed under a 3-clause BSD style license - see LICENSE.rst
"""
=========
retrieval
=========

TF-IDF ranked retrieval and the `RankedList` every scoring method produces,
including scores computed outside this package (dense encoders, LLMs) that
arrive as score files::

    model,query_id,candidate_id,score
    minilm,CVE-2021-44228,T1190,0.83

The vectorizer is scikit-learn's with raw term counts, smoothed idf
``ln((N + 1) / (df + 1)) + 1`` and L2-normalized rows, so cosine similarity
is a plain dot product.
"""
import re
import warnings
from collections import namedtuple
from dataclasses import dataclass, field

import numpy as np
from astropy import log
from astropy.io import ascii
from astropy.utils.exceptions import AstropyUserWarning
from sklearn.feature_extraction.text import TfidfVectorizer
from sklearn.metrics.pairwise import linear_kernel

__all__ = ['tokenize', 'fit_tfidf', 'score_query', 'TfidfIndex', 'RankedList',
           'RankEntry', 'ExternalScoreSet', 'load_external_scores',
           'load_external_score_sets', 'rank_from_external', 'EmptyCorpus',
           'UnknownCandidate', 'ScoreSchema', 'NonFiniteScore',
           'DuplicateScoreWarning']

SCORE_COLUMNS = ('model', 'query_id', 'candidate_id', 'score')
MISSING_SCORE = -np.inf

_TERM = re.compile(r'[^\W_]+')


class EmptyCorpus(ValueError):
    pass


class UnknownCandidate(LookupError):
    pass


class ScoreSchema(ValueError):
    pass


class NonFiniteScore(ValueError):
    def __init__(self, line, value):
        super().__init__("line {0}: non-finite score {1!r}".format(line, value))
        self.line = line


class DuplicateScoreWarning(AstropyUserWarning):
    pass


def tokenize(text):
    """Lowercase alphanumeric runs of two or more characters."""
    return [term for term in _TERM.findall((text or '').lower()) if len(term) >= 2]


RankEntry = namedtuple('RankEntry', ['candidate_id', 'score', 'rank', 'missing'], defaults=(False,))


@dataclass(frozen=True)
class RankedList:
    """
    Candidates of one query in rank order.

    Scores never increase with rank, ranks run 1..n and candidate ids are
    unique.  Entries flagged ``missing`` carry the -inf sentinel and sort last.
    """
    query_id: str
    entries: tuple = ()

    def __post_init__(self):
        entries = tuple(RankEntry(*entry) for entry in self.entries)
        object.__setattr__(self, 'entries', entries)
        ids = [e.candidate_id for e in entries]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate candidates in ranking of {0}".format(self.query_id))
        if [e.rank for e in entries] != list(range(1, len(entries) + 1)):
            raise ValueError("ranks of {0} are not 1..n".format(self.query_id))
        scores = [e.score for e in entries]
        if any(a < b for a, b in zip(scores, scores[1:])):
            raise ValueError("scores of {0} increase with rank".format(self.query_id))

    @classmethod
    def from_scores(cls, query_id, scores, missing=()):
        """
        Rank a ``{candidate_id: score}`` mapping; ties go to the lower id.
        ``missing`` candidates get the sentinel score and are flagged.
        """
        items = [(c, float(s), False) for c, s in scores.items()]
        items += [(c, MISSING_SCORE, True) for c in missing if c not in scores]
        items.sort(key=lambda item: (-item[1], item[0]))
        return cls(query_id, tuple(RankEntry(c, s, rank, flag)
                                   for rank, (c, s, flag) in enumerate(items, 1)))

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def candidates(self):
        return [e.candidate_id for e in self.entries]

    def top(self, k):
        return RankedList(self.query_id, self.entries[:k])

    def rank_of(self, candidate_id):
        for entry in self.entries:
            if entry.candidate_id == candidate_id:
                return entry.rank
        return None

    def to_dict(self):
        return {'query_id': self.query_id,
                'entries': [{'candidate_id': e.candidate_id,
                             'score': None if e.missing else e.score,
                             'rank': e.rank, 'missing': e.missing}
                            for e in self.entries]}

    @classmethod
    def from_dict(cls, data):
        return cls(data['query_id'], tuple(
            RankEntry(e['candidate_id'], MISSING_SCORE if e['missing'] else e['score'],
                      e['rank'], e['missing'])
            for e in data['entries']))


class TfidfIndex:
    """
    A fitted TF-IDF model over a fixed corpus.

    The vocabulary is frozen at fit time; query terms outside it are dropped.
    """

    def __init__(self, vectorizer, doc_ids, matrix):
        self._vectorizer = vectorizer
        self.doc_ids = list(doc_ids)
        self.doc_vectors = matrix
        self._rows = {doc_id: row for row, doc_id in enumerate(self.doc_ids)}

    @property
    def vocabulary(self):
        return self._vectorizer.vocabulary_

    @property
    def idf(self):
        return self._vectorizer.idf_

    def idf_of(self, term):
        return float(self.idf[self.vocabulary[term]])

    def __contains__(self, doc_id):
        return doc_id in self._rows

    def __len__(self):
        return len(self.doc_ids)

    def rows(self, doc_ids):
        try:
            return [self._rows[doc_id] for doc_id in doc_ids]
        except KeyError as exc:
            raise UnknownCandidate("{0} is not an indexed document".format(exc.args[0]))

    def transform(self, text):
        return self._vectorizer.transform([text or ''])

    def similarity(self, doc_a, doc_b):
        """Cosine between two indexed documents."""
        row_a, row_b = self.rows([doc_a, doc_b])
        return float(linear_kernel(self.doc_vectors[row_a], self.doc_vectors[row_b])[0, 0])


def fit_tfidf(corpus):
    """
    Fit a `TfidfIndex`.

    Parameters
    ----------
    corpus : iterable of (doc_id, text)
        Document ids must be unique.

    Raises
    ------
    EmptyCorpus
        If there are no documents or no document yields a term.
    """
    corpus = list(corpus)
    if not corpus:
        raise EmptyCorpus("cannot fit TF-IDF on an empty corpus")
    doc_ids = [doc_id for doc_id, _ in corpus]
    if len(set(doc_ids)) != len(doc_ids):
        raise ValueError("document ids must be unique")
    vectorizer = TfidfVectorizer(tokenizer=tokenize, lowercase=False, token_pattern=None,
                                 norm='l2', use_idf=True, smooth_idf=True, sublinear_tf=False)
    try:
        matrix = vectorizer.fit_transform([text or '' for _, text in corpus])
    except ValueError as exc:
        # scikit-learn refuses a corpus with an empty vocabulary
        raise EmptyCorpus(str(exc))
    log.debug("Fitted TF-IDF on {0} documents, {1} terms".format(
        len(doc_ids), len(vectorizer.vocabulary_)))
    return TfidfIndex(vectorizer, doc_ids, matrix.tocsr())


def score_query(index, query_text, candidates, query_id=''):
    """
    Rank indexed candidates by cosine similarity to a query text.

    Raises
    ------
    UnknownCandidate
        If a candidate is not an indexed document.
    """
    candidates = list(dict.fromkeys(candidates))
    rows = index.rows(candidates)
    if not rows:
        return RankedList(query_id)
    scores = linear_kernel(index.transform(query_text), index.doc_vectors[rows])[0]
    return RankedList.from_scores(query_id, dict(zip(candidates, scores.tolist())))


@dataclass
class ExternalScoreSet:
    model_name: str
    scores: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.model_name:
            raise ScoreSchema("score set needs a model name")
        for key, value in self.scores.items():
            if not np.isfinite(value):
                raise NonFiniteScore(None, value)

    @property
    def query_ids(self):
        return sorted({query_id for query_id, _ in self.scores})

    def candidates_for(self, query_id):
        return sorted(c for q, c in self.scores if q == query_id)


def _read_score_rows(source):
    if hasattr(source, 'read'):
        source = source.read()
    if isinstance(source, bytes):
        source = source.decode('utf-8')
    lines = source.splitlines()
    if not lines:
        raise ScoreSchema("empty score file")
    try:
        table = ascii.read(lines, format='csv', guess=False, fast_reader=False)
    except Exception as exc:
        raise ScoreSchema("unreadable score file: {0}".format(exc))
    missing = [name for name in SCORE_COLUMNS if name not in table.colnames]
    if missing:
        raise ScoreSchema("score file lacks column(s): {0}".format(', '.join(missing)))

    rows = []
    for index, row in enumerate(table):
        line = index + 2
        if any(np.ma.is_masked(row[name]) for name in SCORE_COLUMNS):
            raise ScoreSchema("line {0}: empty field".format(line))
        raw = row['score']
        try:
            score = float(raw)
        except (TypeError, ValueError):
            raise ScoreSchema("line {0}: score {1!r} is not a number".format(line, raw))
        if not np.isfinite(score):
            raise NonFiniteScore(line, raw)
        rows.append((line, str(row['model']), str(row['query_id']),
                     str(row['candidate_id']), score))
    return rows


def load_external_score_sets(source):
    """
    Every model of a score file, as ``{model_name: ExternalScoreSet}``.

    Duplicate (model, query, candidate) rows keep the last value and emit
    a `DuplicateScoreWarning`.
    """
    sets = {}
    for line, model, query_id, candidate_id, score in _read_score_rows(source):
        scores = sets.setdefault(model, {})
        if (query_id, candidate_id) in scores:
            warnings.warn("line {0}: duplicate score for ({1}, {2}) in model {3}; "
                          "keeping the last one".format(line, query_id, candidate_id, model),
                          DuplicateScoreWarning)
        scores[(query_id, candidate_id)] = score
    return {model: ExternalScoreSet(model, scores) for model, scores in sets.items()}


def load_external_scores(source, model=None):
    """
    Read one model's scores from a score file.

    Parameters
    ----------
    source : bytes, str or file-like
    model : str, optional
        Required when the file holds more than one model.

    Raises
    ------
    ScoreSchema
        Bad header or cell, no rows, or an ambiguous or unknown model.
    NonFiniteScore
        A NaN or infinite score, reported with its line number.
    """
    sets = load_external_score_sets(source)
    if not sets:
        raise ScoreSchema("score file has no rows")
    if model is None:
        if len(sets) > 1:
            raise ScoreSchema("score file holds models {0}; choose one".format(
                ', '.join(sorted(sets))))
        return next(iter(sets.values()))
    try:
        return sets[model]
    except KeyError:
        raise ScoreSchema("model {0!r} not in score file".format(model))


def rank_from_external(score_set, query_id, candidates):
    """
    Rank candidates by externally computed scores.

    Candidates without a score rank after every scored one, flagged
    ``missing``; input order does not matter.
    """
    candidates = list(dict.fromkeys(candidates))
    scores = {c: score_set.scores[(query_id, c)] for c in candidates
              if (query_id, c) in score_set.scores}
    return RankedList.from_scores(query_id, scores,
                                  missing=[c for c in candidates if c not in scores])
