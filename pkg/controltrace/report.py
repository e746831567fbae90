# Licensed under a 3-clause BSD style license - see LICENSE.rst
"""
======
report
======

Stage 5: expand the per-stage results into end-to-end traces
(component -> CPE -> CVE -> technique -> control), emit them as JSON or
Markdown, and summarise the priority distribution.
"""
import json
import warnings
from collections import namedtuple
from dataclasses import asdict, dataclass, fields

import numpy as np
from astropy import log
from astropy.utils.exceptions import AstropyUserWarning

from . import conf
from .knowledge import control_sort_key
from .mapping import aggregate_max_cvss, compute_priority

__all__ = ['TraceRecord', 'HistogramSpec', 'HistogramBin', 'assemble_traces',
           'emit_report', 'parse_json_report', 'check_traceability',
           'priority_histogram', 'plot_priority_histogram',
           'DanglingReference', 'EmptyValues', 'MissingCvssWarning', 'REPORT_FORMATS']

REPORT_FORMATS = ('json', 'md')


class DanglingReference(LookupError):
    pass


class EmptyValues(ValueError):
    pass


class MissingCvssWarning(AstropyUserWarning):
    pass


@dataclass(frozen=True)
class TraceRecord:
    component: str
    cpe: str
    cve_id: str
    cvss: float
    technique_id: str
    technique_score: float
    control_id: str
    crosswalk_score: float
    tfidf_score: float
    hybrid_score: float
    priority: float
    method: str
    max_cvss: float = 0.0
    cvss_missing: bool = False

    def sort_key(self):
        return (-self.priority, self.component, self.cve_id, self.technique_id,
                control_sort_key(self.control_id))

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        names = {f.name for f in fields(cls)}
        return cls(**{key: value for key, value in data.items() if key in names})


def assemble_traces(registry, scan, predictions, controls, top_k=None, top_m=None):
    """
    Expand the pipeline results into trace records.

    Parameters
    ----------
    registry : `~controltrace.sysml.ComponentRegistry`
    scan : `~controltrace.vulnstore.ScanResult`
    predictions : dict
        CVE id -> `~controltrace.mapping.TechniquePrediction`.  CVEs without a
        prediction produce no traces.
    controls : dict
        Technique id -> ranked list of `~controltrace.mapping.ScoredControl`.
    top_k, top_m : int, optional
        Techniques per CVE and controls per technique
        (``conf.technique_top_k`` and ``conf.control_top_m``).

    Only links that exist are followed: a CVE contributes to the components
    it was matched to and nothing else.  Priority is the control's hybrid
    score times the highest CVSS among that component's CVEs that predicted
    the technique.

    Raises
    ------
    DanglingReference
        If a scanned component is not in the registry or a predicted
        technique has no scored controls.
    """
    top_k = conf.technique_top_k if top_k is None else top_k
    top_m = conf.control_top_m if top_m is None else top_m

    traces = []
    for name, records in scan.by_component.items():
        if name not in registry:
            raise DanglingReference("scanned component {0} is not in the registry".format(name))
        component = registry.get(name)

        linked = []
        by_technique = {}
        warned = set()
        for record in records:
            prediction = predictions.get(record.id)
            if prediction is None:
                continue
            entries = [e for e in prediction.ranked.entries[:top_k] if not e.missing]
            linked.append((record, prediction, entries))
            for entry in entries:
                by_technique.setdefault(entry.candidate_id, []).append(record)

        for record, prediction, entries in linked:
            for entry in entries:
                if entry.candidate_id not in controls:
                    raise DanglingReference("technique {0} predicted for {1} has no scored "
                                            "controls".format(entry.candidate_id, record.id))
                cvss = aggregate_max_cvss(by_technique[entry.candidate_id])
                if cvss.missing and entry.candidate_id not in warned:
                    warned.add(entry.candidate_id)
                    warnings.warn("{0}: no CVSS score behind {1}; its controls get priority 0"
                                  .format(name, entry.candidate_id), MissingCvssWarning)
                for scored in controls[entry.candidate_id][:top_m]:
                    scored = compute_priority(scored, cvss.max_cvss)
                    traces.append(TraceRecord(
                        component=name, cpe=component.cpe.short(), cve_id=record.id,
                        cvss=record.cvss_base, technique_id=entry.candidate_id,
                        technique_score=float(entry.score), control_id=scored.control_id,
                        crosswalk_score=scored.crosswalk_score, tfidf_score=scored.tfidf_score,
                        hybrid_score=scored.hybrid_score, priority=scored.priority,
                        method=prediction.method, max_cvss=cvss.max_cvss,
                        cvss_missing=cvss.missing))
    traces.sort(key=TraceRecord.sort_key)
    log.info("Assembled {0} traces".format(len(traces)))
    return traces


def _json_report(traces):
    document = {'n_traces': len(traces), 'traces': [t.to_dict() for t in traces]}
    return json.dumps(document, indent=2, sort_keys=True) + '\n'


_MD_COLUMNS = ('Priority', 'Control', 'Technique', 'Technique score', 'CVE', 'CVSS',
               'Crosswalk', 'TF-IDF', 'Hybrid', 'Method')


def _markdown_report(traces):
    lines = ['# Control recommendations', '']
    if not traces:
        lines += ['No traces.', '']
        return '\n'.join(lines)
    components = list(dict.fromkeys(t.component for t in traces))
    lines += ['{0} traces over {1} components, highest priority first.'.format(
        len(traces), len(components)), '']
    for name in components:
        rows = [t for t in traces if t.component == name]
        heading = '## {0}'.format(name)
        if any(t.cvss_missing for t in rows):
            heading += ' `missing CVSS`'
        lines += [heading, '', 'CPE: `{0}`'.format(rows[0].cpe), '',
                  '| ' + ' | '.join(_MD_COLUMNS) + ' |',
                  '|' + '---|' * len(_MD_COLUMNS)]
        for t in rows:
            cvss = 'n/a' if t.cvss is None else '{0:.1f}'.format(t.cvss)
            lines.append('| {0:.4f} | {1} | {2} | {3:.4f} | {4} | {5} | {6:.0f} | {7:.4f} | '
                         '{8:.4f} | {9} |'.format(t.priority, t.control_id, t.technique_id,
                                                  t.technique_score, t.cve_id, cvss,
                                                  t.crosswalk_score, t.tfidf_score,
                                                  t.hybrid_score, t.method))
        lines.append('')
    return '\n'.join(lines)


def emit_report(traces, format='json'):
    """
    Render traces as UTF-8 bytes.

    ``json`` is the canonical machine form (sorted keys); ``md`` has one
    section per component with a priority-ordered control table.  Output is
    byte-identical for identical traces.
    """
    if format == 'json':
        text = _json_report(traces)
    elif format in ('md', 'markdown'):
        text = _markdown_report(traces)
    else:
        raise ValueError("unknown report format {0!r}".format(format))
    return text.encode('utf-8')


def parse_json_report(data):
    """Rebuild the `TraceRecord` list from a JSON report."""
    if isinstance(data, bytes):
        data = data.decode('utf-8')
    return [TraceRecord.from_dict(t) for t in json.loads(data)['traces']]


def check_traceability(traces, registry, scan, predictions, kb):
    """
    Controls in ``traces`` that are not reachable from a component.

    A trace is reachable when its component is registered, its CVE was
    matched to that component, its technique was predicted for the CVE and
    its technique and control are in the catalogs.

    Returns
    -------
    unreachable : list of str
        Sorted control ids; empty for a fully traceable report.
    """
    unreachable = set()
    for trace in traces:
        cve_ids = {r.id for r in scan.by_component.get(trace.component, ())}
        prediction = predictions.get(trace.cve_id)
        reachable = (trace.component in registry and trace.cve_id in cve_ids and
                     prediction is not None and
                     trace.technique_id in prediction.technique_ids and
                     trace.technique_id in kb.techniques and
                     trace.control_id in kb.controls)
        if not reachable:
            unreachable.add(trace.control_id)
    return sorted(unreachable, key=control_sort_key)


@dataclass(frozen=True)
class HistogramSpec:
    clip_percentile: float = None
    bins: int = None

    def __post_init__(self):
        if self.clip_percentile is None:
            object.__setattr__(self, 'clip_percentile', conf.hist_clip_percentile)
        if self.bins is None:
            object.__setattr__(self, 'bins', conf.hist_bins)
        if not 0 < self.clip_percentile <= 100:
            raise ValueError("clip percentile must lie in (0, 100]")
        if self.bins < 1:
            raise ValueError("need at least one bin")


HistogramBin = namedtuple('HistogramBin', ['lower', 'upper', 'count'])


def priority_histogram(values, spec=None):
    """
    Equal-width histogram of priorities over ``[0, clip]``.

    ``clip`` is the ``spec.clip_percentile`` percentile (linear
    interpolation); values above it are left out, values equal to it kept.
    When every retained priority is 0 there is one degenerate bin
    ``(0, 0, n)``.

    Raises
    ------
    EmptyValues
    """
    spec = spec or HistogramSpec()
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise EmptyValues("no priorities to histogram")
    if np.any(values < 0):
        raise ValueError("priorities must not be negative")
    clip = np.percentile(values, spec.clip_percentile)
    retained = values[values <= clip]
    if clip == 0:
        return [HistogramBin(0.0, 0.0, int(retained.size))]
    counts, edges = np.histogram(retained, bins=spec.bins, range=(0.0, clip))
    return [HistogramBin(float(lower), float(upper), int(count))
            for lower, upper, count in zip(edges[:-1], edges[1:], counts)]


def plot_priority_histogram(values, spec=None, path=None):
    """
    Draw the priority histogram with matplotlib; saved to ``path`` if given.

    Returns
    -------
    fig : `matplotlib.figure.Figure`
    """
    from matplotlib.figure import Figure

    spec = spec or HistogramSpec()
    bins = priority_histogram(values, spec)
    fig = Figure(figsize=(6, 4))
    ax = fig.add_subplot(1, 1, 1)
    ax.bar([b.lower for b in bins], [b.count for b in bins],
           width=[b.upper - b.lower for b in bins], align='edge', edgecolor='black')
    ax.set_xlabel('priority (hybrid score x max CVSS)')
    ax.set_ylabel('traces')
    ax.set_title('Priority distribution, clipped at the {0:g}th percentile'.format(
        spec.clip_percentile))
    if path is not None:
        fig.savefig(path)
    return fig
