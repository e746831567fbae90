# Licensed under a 3-clause BSD style license - see LICENSE.rst
"""
The ``controltrace`` command.  Each subcommand runs one pipeline stage and
passes its result on as a JSON file::

    controltrace ingest --feeds nvd/ --years 2020..2026 --store store.json
    controltrace scan --model medgateway.sysml.xml --store store.json --output scan.json
    controltrace map --model medgateway.sysml.xml --store store.json --scan scan.json \\
        --method tfidf --output predictions.json
    controltrace recommend --model medgateway.sysml.xml --predictions predictions.json \\
        --output controls.json
    controltrace report --model medgateway.sysml.xml --store store.json --scan scan.json \\
        --predictions predictions.json --controls controls.json --format md
    controltrace evaluate --target controls --scores control_scores.csv --split
"""
import argparse
import json
import sys

import numpy as np
from astropy import log

from . import conf
from .evaluation import (GroupKey, SplitSpec, correlation_matrix, crosswalk_truth,
                         grouped_split, metrics_record, queries_from_predictions,
                         scores_to_matrix, split_crosswalk, threshold_sweep,
                         truth_from_pairs)
from .knowledge import GroundTruthPair, KnowledgeBase, LabelSource
from .llm import ChatCompletionClient, LlmMapper, LlmTransportError, PromptDirectory
from .mapping import (CONTROL_RANKINGS, build_stage3_index, build_stage4_index,
                      map_cves, predict_from_external, predictions_from_json,
                      predictions_to_json, rank_controls, recommend_all,
                      recommendations_from_json, recommendations_to_json)
from .report import (HistogramSpec, REPORT_FORMATS, assemble_traces, emit_report,
                     parse_json_report, plot_priority_histogram, priority_histogram)
from .retrieval import load_external_score_sets, load_external_scores, rank_from_external
from .sysml import parse_sysml_file
from .version import version
from .vulnstore import ScanResult, VulnStore

__all__ = ['main']


def parse_years(text):
    """``"2020..2026"`` or ``"2021,2023"`` -> set of years; None passes through."""
    if not text:
        return None
    if '..' in text:
        first, last = text.split('..')
        return set(range(int(first), int(last) + 1))
    return {int(year) for year in text.split(',')}


def _read(path):
    with open(path, encoding='utf-8') as handle:
        return handle.read()


def _write(path, text):
    if path is None or path == '-':
        sys.stdout.write(text)
        return
    with open(path, 'w', encoding='utf-8') as handle:
        handle.write(text)
    log.info("Wrote {0}".format(path))


def _load_store(args):
    if getattr(args, 'store', None):
        return VulnStore.load(args.store)
    store = VulnStore()
    store.ingest_directory(args.feeds, years=parse_years(args.years))
    return store


def _scanned_cves(args, store, registry):
    scan = ScanResult.from_json(_read(args.scan), store, registry)
    return scan, [store.get(cve_id) for cve_id in sorted(scan.links)]


def cmd_ingest(args):
    store = VulnStore()
    _, inventory = store.ingest_directory(args.feeds, years=parse_years(args.years))
    for year in sorted(inventory.per_year):
        total, usable = inventory.per_year[year]
        log.info("{0}: {1} CVEs, {2} usable descriptions".format(year, total, usable))
    store.save(args.store)
    log.info("Stored {0} CVEs in {1}".format(len(store), args.store))


def cmd_scan(args):
    registry = parse_sysml_file(args.model)
    scan = _load_store(args).scan_registry(registry)
    for name, records in scan.by_component.items():
        log.info("{0}: {1} CVEs".format(name, len(records)))
    _write(args.output, scan.to_json())


def cmd_map(args):
    registry = parse_sysml_file(args.model)
    store = _load_store(args)
    kb = KnowledgeBase.from_directory(args.kb)
    _, cves = _scanned_cves(args, store, registry)
    k = args.top_k

    if args.method == 'tfidf':
        predictions = map_cves(cves, build_stage3_index(kb, registry, store), k)
    elif args.method.startswith('external:'):
        score_set = load_external_scores(_read(args.method[len('external:'):]),
                                         model=args.score_model)
        predictions = {}
        for cve in cves:
            prediction = predict_from_external(cve.id, score_set, kb, k)
            if len(prediction.ranked):
                predictions[cve.id] = prediction
    elif args.method.startswith('llm:'):
        if args.llm_dir is None and not args.llm_http:
            raise ValueError("llm mapping needs --llm-dir or --llm-http")
        model = args.method[len('llm:'):]
        mapper = LlmMapper(kb, model,
                           directory=PromptDirectory(args.llm_dir) if args.llm_dir else None,
                           client=ChatCompletionClient(model) if args.llm_http else None,
                           hints=args.hints)
        predictions = mapper.predict_all(cves)
    else:
        raise ValueError("unknown method {0!r}".format(args.method))
    log.info("Mapped {0} of {1} CVEs with {2}".format(len(predictions), len(cves), args.method))
    _write(args.output, predictions_to_json(predictions))


def cmd_recommend(args):
    registry = parse_sysml_file(args.model)
    kb = KnowledgeBase.from_directory(args.kb)
    predictions = predictions_from_json(_read(args.predictions))
    techniques = {t for p in predictions.values() for t in p.technique_ids[:args.top_k]}
    recommendations = recommend_all(techniques, build_stage4_index(kb, registry), kb,
                                    top_m=args.top_m)
    _write(args.output, recommendations_to_json(recommendations))


def cmd_report(args):
    registry = parse_sysml_file(args.model)
    store = _load_store(args)
    scan, _ = _scanned_cves(args, store, registry)
    traces = assemble_traces(registry, scan, predictions_from_json(_read(args.predictions)),
                             recommendations_from_json(_read(args.controls)),
                             top_k=args.top_k, top_m=args.top_m)
    _write(args.output, emit_report(traces, args.format).decode('utf-8'))


def _truth_pairs(args, kb):
    if args.truth is None:
        return kb.kev_pairs()
    return [GroundTruthPair(row['cve_id'], row['technique_id'], LabelSource.KEV)
            for row in json.loads(_read(args.truth))]


def _finite(value):
    if isinstance(value, float) and not np.isfinite(value):
        return None
    return value


def _evaluate_controls(args, kb):
    rows = known = list(kb.crosswalk)
    if args.split:
        known, rows = split_crosswalk(rows)
        log.info("Evaluating on {0} held-out crosswalk rows".format(len(rows)))
    truth = crosswalk_truth(rows)
    technique_ids = sorted(truth)
    candidates = [c.id for c in kb.sorted_controls()]
    registry = parse_sysml_file(args.model) if args.model else None
    index = build_stage4_index(kb, registry)

    results = {}
    for method in CONTROL_RANKINGS:
        ranked = {t: rank_controls(t, index, kb, method, crosswalk=known)
                  for t in technique_ids}
        results[method] = metrics_record(queries_from_predictions(ranked, truth))
    score_sets = []
    for path in args.scores or ():
        for name, score_set in sorted(load_external_score_sets(_read(path)).items()):
            score_sets.append(score_set)
            ranked = {t: rank_from_external(score_set, t, candidates) for t in technique_ids}
            results[name] = metrics_record(queries_from_predictions(ranked, truth))
    return results, score_sets


def _evaluate_techniques(args, kb):
    pairs = _truth_pairs(args, kb)
    if args.split:
        spec = SplitSpec(conf.split_test_fraction, conf.split_seed, GroupKey.CVE_ID)
        _, pairs = grouped_split(pairs, spec)
        log.info("Evaluating on {0} held-out pairs".format(len(pairs)))
    truth = truth_from_pairs(pairs)
    candidates = [t.id for t in kb.parent_techniques()]
    classes = sorted({t for ids in truth.values() for t in ids})
    query_ids = sorted(truth)
    labels = np.array([[int(c in truth[q]) for c in classes] for q in query_ids])

    results = {}
    score_sets = []
    for path in args.scores or ():
        for name, score_set in sorted(load_external_score_sets(_read(path)).items()):
            score_sets.append(score_set)
            ranked = {q: rank_from_external(score_set, q, candidates) for q in query_ids}
            _, multilabel = threshold_sweep(scores_to_matrix(score_set, query_ids, classes),
                                            labels, classes=classes)
            results[name] = metrics_record(queries_from_predictions(ranked, truth), multilabel)
    for path in args.predictions or ():
        predictions = predictions_from_json(_read(path))
        methods = sorted({p.method for p in predictions.values()}) or [path]
        results[','.join(methods)] = metrics_record(queries_from_predictions(predictions, truth))
    return results, score_sets


def cmd_evaluate(args):
    kb = KnowledgeBase.from_directory(args.kb)
    if args.target == 'controls':
        if args.predictions or args.truth:
            raise ValueError("--predictions and --truth apply to technique evaluation only")
        results, score_sets = _evaluate_controls(args, kb)
    else:
        results, score_sets = _evaluate_techniques(args, kb)

    document = {'metrics': {name: {key: _finite(value) for key, value in record.items()}
                            for name, record in results.items()}}
    if len(score_sets) > 1:
        names, matrix = correlation_matrix(score_sets)
        document['correlation'] = {'models': names,
                                   'pearson_r': [[_finite(float(v)) for v in row]
                                                 for row in matrix]}
    _write(args.output, json.dumps(document, indent=2, sort_keys=True) + '\n')


def cmd_hist(args):
    traces = parse_json_report(_read(args.report).encode('utf-8'))
    spec = HistogramSpec(args.clip, args.bins)
    priorities = [t.priority for t in traces]
    bins = priority_histogram(priorities, spec)
    lines = ['lower,upper,count'] + ['{0:.6f},{1:.6f},{2}'.format(*b) for b in bins]
    _write(args.output, '\n'.join(lines) + '\n')
    if args.plot:
        plot_priority_histogram(priorities, spec, args.plot)


def cmd_prompts(args):
    registry = parse_sysml_file(args.model)
    store = _load_store(args)
    kb = KnowledgeBase.from_directory(args.kb)
    _, cves = _scanned_cves(args, store, registry)
    mapper = LlmMapper(kb, 'file', directory=PromptDirectory(args.llm_dir), hints=args.hints)
    paths = mapper.write_prompts(cves)
    log.info("Wrote {0} prompts to {1}".format(len(paths), mapper.directory.prompts))


def _add_store(parser):
    group = parser.add_mutually_exclusive_group(required=True)
    group.add_argument('--store', help='vulnerability store snapshot written by ingest')
    group.add_argument('--feeds', help='directory of NVD JSON feeds')
    parser.add_argument('--years', help='published years to keep, e.g. 2020..2026')


def build_parser():
    parser = argparse.ArgumentParser(
        prog='controltrace',
        description='Trace a SysML architecture to prioritized NIST 800-53 controls.')
    parser.add_argument('--version', action='version', version=version)
    parser.add_argument('--verbose', '-v', action='store_true', help='debug logging')
    sub = parser.add_subparsers(dest='command', metavar='command')
    sub.required = True

    p = sub.add_parser('ingest', help='build the vulnerability store from NVD feeds')
    p.add_argument('--feeds', required=True, help='directory of NVD JSON feeds')
    p.add_argument('--years', help='published years to keep, e.g. 2020..2026')
    p.add_argument('--store', required=True, help='snapshot file to write')
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser('scan', help='match the components of a SysML model to CVEs')
    p.add_argument('--model', required=True, help='SysML XML model')
    _add_store(p)
    p.add_argument('--output', '-o', help='scan JSON (default stdout)')
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser('map', help='rank ATT&CK techniques for the scanned CVEs')
    p.add_argument('--model', required=True, help='SysML XML model')
    _add_store(p)
    p.add_argument('--scan', required=True, help='scan JSON')
    p.add_argument('--kb', help='catalog directory (default: bundled fixtures)')
    p.add_argument('--method', default='tfidf',
                   help='tfidf, external:<score file> or llm:<model name>')
    p.add_argument('--score-model', help='model to read from a multi-model score file')
    p.add_argument('--llm-dir', help='directory holding prompts/ and responses/')
    p.add_argument('--llm-http', action='store_true',
                   help='query the chat-completion endpoint in ${0}'.format(conf.llm_url_env))
    p.add_argument('--hints', action='store_true', help='add CWE-derived technique hints')
    p.add_argument('--top-k', type=int, default=None, help='techniques kept per CVE')
    p.add_argument('--output', '-o', help='predictions JSON (default stdout)')
    p.set_defaults(func=cmd_map)

    p = sub.add_parser('recommend', help='score NIST controls for the predicted techniques')
    p.add_argument('--model', required=True, help='SysML XML model')
    p.add_argument('--predictions', required=True, help='predictions JSON')
    p.add_argument('--kb', help='catalog directory (default: bundled fixtures)')
    p.add_argument('--top-k', type=int, default=None, help='techniques kept per CVE')
    p.add_argument('--top-m', type=int, default=None, help='controls kept per technique')
    p.add_argument('--output', '-o', help='recommendations JSON (default stdout)')
    p.set_defaults(func=cmd_recommend)

    p = sub.add_parser('report', help='emit the prioritized trace report')
    p.add_argument('--model', required=True, help='SysML XML model')
    _add_store(p)
    p.add_argument('--scan', required=True, help='scan JSON')
    p.add_argument('--predictions', required=True, help='predictions JSON')
    p.add_argument('--controls', required=True, help='recommendations JSON')
    p.add_argument('--format', choices=REPORT_FORMATS, default='json')
    p.add_argument('--top-k', type=int, default=None, help='techniques kept per CVE')
    p.add_argument('--top-m', type=int, default=None, help='controls kept per technique')
    p.add_argument('--output', '-o', help='report file (default stdout)')
    p.set_defaults(func=cmd_report)

    p = sub.add_parser('evaluate', help='score technique or control mappings against ground truth')
    p.add_argument('--target', choices=('techniques', 'controls'), default='techniques',
                   help='CVE -> technique (KEV truth) or technique -> control '
                        '(crosswalk truth) retrieval')
    p.add_argument('--kb', help='catalog directory (default: bundled fixtures)')
    p.add_argument('--model', help='SysML model that conditions the control TF-IDF corpus')
    p.add_argument('--truth', help='ground-truth JSON [{cve_id, technique_id}] '
                                   '(default: KEV pairs of the catalogs)')
    p.add_argument('--scores', action='append', help='external score file (repeatable)')
    p.add_argument('--predictions', action='append', help='predictions JSON (repeatable)')
    p.add_argument('--split', action='store_true',
                   help='evaluate on the held-out side of a grouped split only '
                        '(by CVE, or by technique for controls)')
    p.add_argument('--output', '-o', help='metrics JSON (default stdout)')
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser('hist', help='priority histogram of a JSON report')
    p.add_argument('--report', required=True, help='JSON report')
    p.add_argument('--clip', type=float, default=None, help='clip percentile (default 99)')
    p.add_argument('--bins', type=int, default=None, help='number of bins (default 50)')
    p.add_argument('--plot', help='also draw the histogram to this image file')
    p.add_argument('--output', '-o', help='CSV of bins (default stdout)')
    p.set_defaults(func=cmd_hist)

    p = sub.add_parser('prompts', help='write LLM prompts for the scanned CVEs')
    p.add_argument('--model', required=True, help='SysML XML model')
    _add_store(p)
    p.add_argument('--scan', required=True, help='scan JSON')
    p.add_argument('--kb', help='catalog directory (default: bundled fixtures)')
    p.add_argument('--llm-dir', required=True, help='directory to write prompts/ into')
    p.add_argument('--hints', action='store_true', help='add CWE-derived technique hints')
    p.set_defaults(func=cmd_prompts)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.verbose:
        log.setLevel('DEBUG')
    try:
        args.func(args)
    except (ValueError, LookupError, OSError, LlmTransportError) as exc:
        log.error("{0}: {1}".format(type(exc).__name__, exc))
        return 1
    return 0


if __name__ == '__main__':
    sys.exit(main())
