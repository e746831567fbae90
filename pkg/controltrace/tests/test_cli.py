import json
import os
import shutil
import tempfile
import unittest

from astropy.utils.data import get_pkg_data_filename

from ..cli import main, parse_years
from ..report import parse_json_report
from ..vulnstore import VulnStore

FEED = get_pkg_data_filename('data/nvd/nvdcve-fixture.json', package='controltrace')
MODEL = get_pkg_data_filename('data/medgateway.sysml.xml', package='controltrace')
SCORES = get_pkg_data_filename('data/medgateway_technique_scores.csv', package='controltrace')
CROSSWALK = get_pkg_data_filename('data/crosswalk.json', package='controltrace')
RESPONSE = get_pkg_data_filename('data/llm/responses/CVE-2021-44228.txt',
                                 package='controltrace')


class ParseYearsCase(unittest.TestCase):
    def test_forms(self):
        self.assertEqual(parse_years('2020..2022'), {2020, 2021, 2022})
        self.assertEqual(parse_years('2021,2023'), {2021, 2023})
        self.assertIsNone(parse_years(None))


class PipelineCase(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.mkdtemp()
        self.store = self.path('store.json')
        self.scan = self.path('scan.json')
        self.assertEqual(main(['ingest', '--feeds', os.path.dirname(FEED),
                               '--store', self.store]), 0)
        self.assertEqual(main(['scan', '--model', MODEL, '--store', self.store,
                               '-o', self.scan]), 0)

    def tearDown(self):
        shutil.rmtree(self.tmp)

    def path(self, name):
        return os.path.join(self.tmp, name)

    def read_json(self, name):
        with open(self.path(name), encoding='utf-8') as handle:
            return json.load(handle)

    def map(self, method, output, *extra):
        return main(['map', '--model', MODEL, '--store', self.store, '--scan', self.scan,
                     '--method', method, '-o', self.path(output)] + list(extra))

    def test_ingest_and_scan(self):
        self.assertEqual(len(VulnStore.load(self.store)), 6)
        scan = self.read_json('scan.json')
        self.assertEqual(scan['unique_cve_count'], 6)
        self.assertEqual(len(scan['components']['AuditLog_Service']), 5)

    def test_years(self):
        store = self.path('recent.json')
        self.assertEqual(main(['ingest', '--feeds', os.path.dirname(FEED), '--years', '2023',
                               '--store', store]), 0)
        self.assertEqual([r.id for r in VulnStore.load(store).records], ['CVE-2023-28366'])

    def test_tfidf_pipeline(self):
        self.assertEqual(self.map('tfidf', 'predictions.json', '--top-k', '3'), 0)
        predictions = self.read_json('predictions.json')
        self.assertEqual(len(predictions), 5)
        self.assertTrue(all(len(p['ranked']['entries']) == 3 for p in predictions))

        self.assertEqual(main(['recommend', '--model', MODEL,
                               '--predictions', self.path('predictions.json'),
                               '--top-m', '4', '-o', self.path('controls.json')]), 0)
        controls = self.read_json('controls.json')
        self.assertTrue(all(len(rows) == 4 for rows in controls.values()))

        self.assertEqual(main(['report', '--model', MODEL, '--store', self.store,
                               '--scan', self.scan,
                               '--predictions', self.path('predictions.json'),
                               '--controls', self.path('controls.json'),
                               '--top-m', '4', '-o', self.path('report.json')]), 0)
        with open(self.path('report.json'), 'rb') as handle:
            traces = parse_json_report(handle.read())
        self.assertEqual(len(traces), 5 * 3 * 4)

        self.assertEqual(main(['hist', '--report', self.path('report.json'), '--bins', '6',
                               '-o', self.path('hist.csv')]), 0)
        with open(self.path('hist.csv'), encoding='utf-8') as handle:
            lines = handle.read().splitlines()
        self.assertEqual(lines[0], 'lower,upper,count')
        self.assertEqual(len(lines), 7)

    def test_external_report(self):
        self.assertEqual(self.map('external:' + SCORES, 'predictions.json'), 0)
        self.assertEqual(len(self.read_json('predictions.json')), 5)
        self.assertEqual(main(['recommend', '--model', MODEL,
                               '--predictions', self.path('predictions.json'),
                               '-o', self.path('controls.json')]), 0)
        self.assertEqual(main(['report', '--model', MODEL, '--store', self.store,
                               '--scan', self.scan,
                               '--predictions', self.path('predictions.json'),
                               '--controls', self.path('controls.json'), '--format', 'md',
                               '-o', self.path('report.md')]), 0)
        with open(self.path('report.md'), encoding='utf-8') as handle:
            text = handle.read()
        self.assertIn('## AuditLog_Service', text)
        self.assertIn('60 traces over 1 components', text)

    def test_llm_directory(self):
        self.assertEqual(main(['prompts', '--model', MODEL, '--store', self.store,
                               '--scan', self.scan, '--llm-dir', self.path('llm'),
                               '--hints']), 0)
        self.assertEqual(len(os.listdir(self.path('llm/prompts'))), 5)
        os.makedirs(self.path('llm/responses'))
        shutil.copy(RESPONSE, self.path('llm/responses'))
        self.assertEqual(self.map('llm:gpt-4o', 'predictions.json',
                                  '--llm-dir', self.path('llm')), 0)
        predictions = self.read_json('predictions.json')
        self.assertEqual([p['cve_id'] for p in predictions], ['CVE-2021-44228'])
        self.assertEqual(predictions[0]['method'], 'llm:gpt-4o')

    def test_evaluate(self):
        self.assertEqual(main(['evaluate', '--scores', SCORES, '-o', self.path('metrics.json')]),
                         0)
        metrics = self.read_json('metrics.json')['metrics']['dense-minilm']
        # four of the thirteen KEV CVEs are scored, each with a hit at rank 1
        self.assertAlmostEqual(metrics['mrr'], 4 / 13)
        self.assertAlmostEqual(metrics['h1'], 4 / 13)
        self.assertEqual(metrics['n_queries'], 13)
        self.assertIsNotNone(metrics['threshold'])

        self.assertEqual(self.map('external:' + SCORES, 'predictions.json'), 0)
        self.assertEqual(main(['evaluate', '--predictions', self.path('predictions.json'),
                               '--split', '-o', self.path('split.json')]), 0)
        split = self.read_json('split.json')['metrics']['dense-minilm']
        self.assertIsNone(split['micro_f1'])

    def test_evaluate_controls(self):
        with open(CROSSWALK, encoding='utf-8') as handle:
            rows = json.load(handle)
        scores = self.path('control_scores.csv')
        with open(scores, 'w', encoding='utf-8') as handle:
            handle.write('model,query_id,candidate_id,score\n')
            for row in rows:
                handle.write('encoder,{technique_id},{control_id},0.9\n'.format(**row))

        self.assertEqual(main(['evaluate', '--target', 'controls', '--model', MODEL,
                               '--scores', scores, '-o', self.path('controls.json')]), 0)
        metrics = self.read_json('controls.json')['metrics']
        self.assertEqual(sorted(metrics), ['encoder', 'hybrid', 'tfidf'])
        self.assertEqual(metrics['tfidf']['n_queries'], 19)
        # every crosswalk row is known to the hybrid and scored by the encoder
        self.assertEqual(metrics['hybrid']['mrr'], 1.0)
        self.assertEqual(metrics['encoder']['h1'], 1.0)
        self.assertIsNone(metrics['tfidf']['micro_f1'])

        self.assertEqual(main(['evaluate', '--target', 'controls', '--split',
                               '-o', self.path('held_out.json')]), 0)
        held_out = self.read_json('held_out.json')['metrics']
        self.assertEqual(held_out['tfidf']['n_queries'], 4)
        self.assertEqual(held_out['hybrid'], held_out['tfidf'])

        self.assertEqual(main(['evaluate', '--target', 'controls', '--predictions',
                               self.path('controls.json')]), 1)

    def test_errors(self):
        self.assertEqual(main(['scan', '--model', self.path('absent.xml'),
                               '--store', self.store]), 1)
        self.assertEqual(self.map('bm25', 'predictions.json'), 1)
        self.assertEqual(self.map('llm:gpt-4o', 'predictions.json'), 1)
        with self.assertRaises(SystemExit):
            main(['scan', '--model', MODEL])
