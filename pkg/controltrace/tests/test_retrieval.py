import math
import random
import string
import unittest
import warnings
from collections import Counter

import numpy as np
from astropy.utils.data import get_pkg_data_filename

from ..retrieval import (DuplicateScoreWarning, EmptyCorpus, ExternalScoreSet,
                         NonFiniteScore, RankedList, RankEntry, ScoreSchema,
                         UnknownCandidate, fit_tfidf, load_external_score_sets,
                         load_external_scores, rank_from_external, score_query,
                         tokenize)

SCORES = get_pkg_data_filename('data/medgateway_technique_scores.csv', package='controltrace')

HEADER = 'model,query_id,candidate_id,score\n'


def random_word(rng):
    return ''.join(rng.choice(string.ascii_lowercase) for _ in range(7))


def planted_corpus(seed):
    """Twenty documents and one query per document sharing three rare words with it."""
    rng = random.Random(seed)
    shared = [random_word(rng) for _ in range(150)]
    docs, queries = [], []
    for i in range(20):
        own = [random_word(rng) for _ in range(6)]
        words = rng.sample(shared, 25) + own
        rng.shuffle(words)
        docs.append(('doc{0}'.format(i), ' '.join(words)))
        query = rng.sample(own, 3) + rng.sample(words, 8) + rng.sample(shared, 4)
        rng.shuffle(query)
        queries.append(' '.join(query))
    return docs, queries


def exhaustive_cosine(docs, query):
    """Raw tf, idf = ln((N+1)/(df+1)) + 1, L2-normalised vectors, dot product."""
    terms = {doc_id: tokenize(text) for doc_id, text in docs}
    df = Counter(term for tokens in terms.values() for term in set(tokens))
    idf = {term: math.log((len(docs) + 1) / (count + 1)) + 1 for term, count in df.items()}

    def vector(tokens):
        weights = {t: n * idf[t] for t, n in Counter(tokens).items() if t in idf}
        norm = math.sqrt(sum(w * w for w in weights.values()))
        return {t: w / norm for t, w in weights.items()} if norm else {}

    query_vector = vector(tokenize(query))
    scores = {}
    for doc_id, tokens in terms.items():
        doc_vector = vector(tokens)
        scores[doc_id] = sum(w * doc_vector.get(t, 0.0) for t, w in query_vector.items())
    return scores


class TokenizeCase(unittest.TestCase):
    def test_tokens(self):
        self.assertEqual(tokenize("Log4j JNDI-lookup, a RCE_flaw in 2.14.1!"),
                         ['log4j', 'jndi', 'lookup', 'rce', 'flaw', 'in', '14'])

    def test_empty(self):
        self.assertEqual(tokenize(''), [])
        self.assertEqual(tokenize(None), [])


class TfidfCase(unittest.TestCase):
    def setUp(self):
        self.index = fit_tfidf([('d1', 'aa bb'), ('d2', 'aa cc'), ('d3', 'aa')])

    def test_idf(self):
        self.assertAlmostEqual(self.index.idf_of('aa'), 1.0)
        self.assertAlmostEqual(self.index.idf_of('bb'), math.log(2) + 1)
        self.assertEqual(sorted(self.index.vocabulary), ['aa', 'bb', 'cc'])

    def test_row_norms(self):
        norms = np.sqrt(np.asarray(self.index.doc_vectors.multiply(self.index.doc_vectors)
                                   .sum(axis=1))).ravel()
        np.testing.assert_allclose(norms, 1.0)

    def test_identical_query(self):
        ranked = score_query(self.index, 'aa bb', ['d1', 'd2', 'd3'], query_id='q')
        self.assertEqual(ranked.candidates[0], 'd1')
        self.assertAlmostEqual(ranked.entries[0].score, 1.0)
        self.assertEqual(ranked.query_id, 'q')

    def test_out_of_vocabulary(self):
        ranked = score_query(self.index, 'zz yy', ['d3', 'd1', 'd2'])
        self.assertEqual(ranked.candidates, ['d1', 'd2', 'd3'])
        self.assertTrue(all(e.score == 0.0 for e in ranked))

    def test_unknown_candidate(self):
        with self.assertRaises(UnknownCandidate):
            score_query(self.index, 'aa', ['d1', 'd9'])

    def test_no_candidates(self):
        self.assertEqual(len(score_query(self.index, 'aa', [])), 0)

    def test_symmetry(self):
        for a in self.index.doc_ids:
            for b in self.index.doc_ids:
                self.assertAlmostEqual(self.index.similarity(a, b),
                                       self.index.similarity(b, a))
                self.assertTrue(-1e-12 <= self.index.similarity(a, b) <= 1 + 1e-12)

    def test_empty_corpus(self):
        with self.assertRaises(EmptyCorpus):
            fit_tfidf([])
        with self.assertRaises(EmptyCorpus):
            fit_tfidf([('d1', 'a b c'), ('d2', '')])

    def test_duplicate_ids(self):
        with self.assertRaises(ValueError):
            fit_tfidf([('d1', 'aa'), ('d1', 'bb')])

    def test_planted_paraphrase(self):
        docs, queries = planted_corpus(11)
        index = fit_tfidf(docs)
        ids = [doc_id for doc_id, _ in docs]
        hits = sum(score_query(index, query, ids).candidates[0] == 'doc{0}'.format(i)
                   for i, query in enumerate(queries))
        self.assertGreaterEqual(hits, 19)

    def test_exhaustive_cosine_agreement(self):
        docs, queries = planted_corpus(23)
        queries += ['', 'unseen words only', docs[4][1]]
        index = fit_tfidf(docs)
        ids = [doc_id for doc_id, _ in docs]
        for query in queries:
            expected = exhaustive_cosine(docs, query)
            ranked = score_query(index, query, ids)
            self.assertEqual(ranked.candidates,
                             sorted(expected, key=lambda doc_id: (-expected[doc_id], doc_id)))
            for entry in ranked:
                self.assertAlmostEqual(entry.score, expected[entry.candidate_id], delta=1e-9)


class RankedListCase(unittest.TestCase):
    def test_from_scores(self):
        ranked = RankedList.from_scores('q', {'b': 0.5, 'a': 0.5, 'c': 0.9})
        self.assertEqual(ranked.candidates, ['c', 'a', 'b'])
        self.assertEqual([e.rank for e in ranked], [1, 2, 3])
        self.assertEqual(ranked.rank_of('b'), 3)
        self.assertIsNone(ranked.rank_of('z'))
        self.assertEqual(ranked.top(2).candidates, ['c', 'a'])

    def test_invariants(self):
        with self.assertRaises(ValueError):
            RankedList('q', (RankEntry('a', 0.1, 1), RankEntry('b', 0.5, 2)))
        with self.assertRaises(ValueError):
            RankedList('q', (RankEntry('a', 0.5, 1), RankEntry('a', 0.1, 2)))
        with self.assertRaises(ValueError):
            RankedList('q', (RankEntry('a', 0.5, 2),))

    def test_dict_round_trip(self):
        ranked = RankedList.from_scores('q', {'a': 0.3}, missing=['b'])
        again = RankedList.from_dict(ranked.to_dict())
        self.assertEqual(again, ranked)
        self.assertTrue(again.entries[1].missing)


class ExternalScoresCase(unittest.TestCase):
    def test_bundled_file(self):
        with open(SCORES, 'rb') as handle:
            score_set = load_external_scores(handle)
        self.assertEqual(score_set.model_name, 'dense-minilm')
        self.assertEqual(len(score_set.scores), 6)
        self.assertEqual(score_set.candidates_for('CVE-2021-44228'), ['T1059', 'T1190'])
        self.assertEqual(score_set.query_ids[0], 'CVE-2021-44228')

    def test_three_rows(self):
        text = HEADER + ('m,CVE-2021-0001,T1190,0.9\n'
                         'm,CVE-2021-0001,T1059,0.4\n'
                         'm,CVE-2021-0002,T1190,0.1\n')
        score_set = load_external_scores(text)
        self.assertEqual(len(score_set.scores), 3)
        self.assertEqual(score_set.scores[('CVE-2021-0001', 'T1059')], 0.4)

    def test_nan_line(self):
        text = HEADER + 'm,CVE-2021-0001,T1190,0.9\nm,CVE-2021-0001,T1059,nan\n'
        with self.assertRaises(NonFiniteScore) as context:
            load_external_scores(text)
        self.assertEqual(context.exception.line, 3)

    def test_bad_score(self):
        text = HEADER + 'm,CVE-2021-0001,T1190,0.9\nm,CVE-2021-0001,T1059,high\n'
        with self.assertRaises(ScoreSchema):
            load_external_scores(text)

    def test_missing_column(self):
        with self.assertRaises(ScoreSchema):
            load_external_scores('model,query_id,score\nm,CVE-2021-0001,0.9\n')

    def test_duplicate(self):
        text = HEADER + 'm,CVE-2021-0001,T1190,0.9\nm,CVE-2021-0001,T1190,0.2\n'
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter('always')
            score_set = load_external_scores(text)
        self.assertTrue(any(issubclass(w.category, DuplicateScoreWarning) for w in caught))
        self.assertEqual(score_set.scores[('CVE-2021-0001', 'T1190')], 0.2)

    def test_several_models(self):
        text = HEADER + 'a,CVE-2021-0001,T1190,0.9\nb,CVE-2021-0001,T1190,0.2\n'
        self.assertEqual(sorted(load_external_score_sets(text)), ['a', 'b'])
        with self.assertRaises(ScoreSchema):
            load_external_scores(text)
        self.assertEqual(load_external_scores(text, model='b').scores[
            ('CVE-2021-0001', 'T1190')], 0.2)
        with self.assertRaises(ScoreSchema):
            load_external_scores(text, model='c')


class RankFromExternalCase(unittest.TestCase):
    def setUp(self):
        self.score_set = ExternalScoreSet('m', {('q', 'T1190'): 0.9, ('q', 'T1059'): 0.4,
                                                ('q', 'T1499'): 0.6})

    def test_missing_last(self):
        ranked = rank_from_external(self.score_set, 'q', ['T1068', 'T1059', 'T1190', 'T1499'])
        self.assertEqual(ranked.candidates, ['T1190', 'T1499', 'T1059', 'T1068'])
        self.assertTrue(ranked.entries[-1].missing)
        self.assertEqual(ranked.entries[-1].score, -np.inf)

    def test_permutation_invariance(self):
        candidates = ['T1068', 'T1059', 'T1190', 'T1499', 'T1005']
        expected = rank_from_external(self.score_set, 'q', candidates)
        rng = random.Random(3)
        for _ in range(20):
            rng.shuffle(candidates)
            self.assertEqual(rank_from_external(self.score_set, 'q', candidates), expected)

    def test_scale_invariance(self):
        scaled = ExternalScoreSet('m', {key: 3.0 * value + 1.0
                                        for key, value in self.score_set.scores.items()})
        candidates = ['T1059', 'T1190', 'T1499']
        self.assertEqual(rank_from_external(scaled, 'q', candidates).candidates,
                         rank_from_external(self.score_set, 'q', candidates).candidates)

    def test_non_finite(self):
        with self.assertRaises(NonFiniteScore):
            ExternalScoreSet('m', {('q', 'T1190'): float('inf')})
