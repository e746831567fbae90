# Licensed under a 3-clause BSD style license - see LICENSE.rst
"""
=========
knowledge
=========

The symbolic catalogs every stage leans on: ATT&CK techniques, NIST 800-53
controls, the technique-to-control crosswalk, KEV ground truth and the
CWE -> CAPEC -> ATT&CK transitive map.  Also home of the weak-label and
label-set preparation used to score classifier outputs.

All catalogs are normalized JSON arrays::

    attack_techniques.json  [{id, name, description}]
    nist_controls.json      [{id, name, description, family}]
    crosswalk.json          [{technique_id, control_id}]
    kev_groundtruth.json    [{cve_id, technique_id}]
    cwe_capec.json          [{cwe_id, capec_id}]
    capec_attack.json       [{capec_id, technique_id}]
"""
import enum
import json
import os
import re
from collections import Counter, namedtuple
from dataclasses import dataclass

import numpy as np
from astropy import log
from astropy.utils.data import get_pkg_data_filename
from sklearn.preprocessing import MultiLabelBinarizer

__all__ = ['Technique', 'Control', 'CrosswalkEntry', 'GroundTruthPair',
           'LabelSource', 'WeakLabelConfig', 'KnowledgeBase', 'LabeledDataset',
           'collapse_to_parent', 'clean_text', 'control_sort_key',
           'BadTechniqueId', 'UnknownTechnique', 'CatalogSchema']

TECHNIQUE_PATTERN = re.compile(r'^T\d{4}(\.\d{3})?$')
CONTROL_PATTERN = re.compile(r'^([A-Z]{2})-(\d+)$')

CATALOG_FILES = {
    'techniques': 'attack_techniques.json',
    'controls': 'nist_controls.json',
    'crosswalk': 'crosswalk.json',
    'kev': 'kev_groundtruth.json',
    'cwe_capec': 'cwe_capec.json',
    'capec_attack': 'capec_attack.json',
}


class BadTechniqueId(ValueError):
    pass


class UnknownTechnique(LookupError):
    pass


class CatalogSchema(ValueError):
    pass


def collapse_to_parent(technique_id):
    """``"T1059.001"`` -> ``"T1059"``; parent ids pass through."""
    if not isinstance(technique_id, str) or not TECHNIQUE_PATTERN.match(technique_id):
        raise BadTechniqueId("not an ATT&CK technique id: {0!r}".format(technique_id))
    return technique_id.split('.')[0]


def control_sort_key(control_id):
    """Natural order for control ids: family first, then the number (AC-3 < AC-17)."""
    match = CONTROL_PATTERN.match(control_id)
    if match is None:
        return (control_id, -1)
    return (match.group(1), int(match.group(2)))


_URL = re.compile(r'(?:https?://|ftp://|www\.)\S*')
_CVE_TOKEN = re.compile(r'\bcve-\d{4}-\d{4,}\b')
_SPACES = re.compile(r'\s+')


def clean_text(raw):
    """
    Lowercase, drop URLs and CVE ids, collapse whitespace.

    Idempotent: ``clean_text(clean_text(s)) == clean_text(s)``.
    """
    text = (raw or '').lower()
    while True:
        cleaned = _SPACES.sub(' ', _CVE_TOKEN.sub(' ', _URL.sub(' ', text))).strip()
        if cleaned == text:
            return cleaned
        text = cleaned


@dataclass(frozen=True)
class Technique:
    id: str
    name: str
    description: str = ''
    parent_id: str = None

    def __post_init__(self):
        parent = collapse_to_parent(self.id)
        object.__setattr__(self, 'parent_id', parent if parent != self.id else None)

    @property
    def is_parent(self):
        return self.parent_id is None

    @property
    def text(self):
        return "{0}. {1}".format(self.name, self.description)


@dataclass(frozen=True)
class Control:
    id: str
    name: str
    description: str = ''
    family: str = ''

    def __post_init__(self):
        family = self.id.split('-')[0]
        if self.family and self.family.upper() != family:
            raise CatalogSchema("control {0} declares family {1}".format(self.id, self.family))
        object.__setattr__(self, 'family', family)

    @property
    def text(self):
        return "{0}. {1}".format(self.name, self.description)


CrosswalkEntry = namedtuple('CrosswalkEntry', ['technique_id', 'control_id'])


class LabelSource(str, enum.Enum):
    KEV = 'KEV'
    SMET = 'SMET'
    WEAK_CWE_CAPEC = 'WEAK_CWE_CAPEC'


GroundTruthPair = namedtuple('GroundTruthPair', ['cve_id', 'technique_id', 'source'])


@dataclass(frozen=True)
class WeakLabelConfig:
    min_support: int = 1
    collapse_to_parent: bool = True

    def __post_init__(self):
        if self.min_support < 1:
            raise ValueError("min_support must be at least 1")


@dataclass
class LabeledDataset:
    """CVE texts and their binary label matrix, one column per class."""
    cve_ids: list
    texts: list
    classes: list
    labels: np.ndarray


def _read_rows(path, required):
    with open(path, encoding='utf-8') as handle:
        try:
            rows = json.load(handle)
        except ValueError as exc:
            raise CatalogSchema("{0}: {1}".format(path, exc))
    if not isinstance(rows, list):
        raise CatalogSchema("{0}: expected a JSON array".format(path))
    for index, row in enumerate(rows):
        missing = [key for key in required if not isinstance(row, dict) or key not in row]
        if missing:
            raise CatalogSchema("{0}: row {1} lacks {2}".format(
                os.path.basename(path), index, ', '.join(missing)))
    return rows


def _catalog_path(directory, key):
    if directory is None:
        return get_pkg_data_filename(os.path.join('data', CATALOG_FILES[key]),
                                     package='controltrace')
    return os.path.join(directory, CATALOG_FILES[key])


class KnowledgeBase:
    """
    Loaded catalogs plus the lookups built on them.

    Parameters
    ----------
    techniques, controls : iterable of `Technique`, `Control`
    crosswalk : iterable of (technique_id, control_id)
        Rows naming an unloaded technique or control are dropped with a warning.
    kev : iterable of (cve_id, technique_id)
        Raw KEV mapping objects; stored collapsed to unique parent pairs.
    cwe_capec, capec_attack : iterable of pairs
    """

    def __init__(self, techniques, controls, crosswalk=(), kev=(), cwe_capec=(),
                 capec_attack=()):
        self.techniques = {t.id: t for t in techniques}
        self.controls = {c.id: c for c in controls}

        raw_crosswalk = [CrosswalkEntry(*row) for row in crosswalk]
        forms = {'.' in row.technique_id for row in raw_crosswalk}
        self.crosswalk_form = ('mixed' if len(forms) > 1 else
                               'sub-technique' if forms == {True} else 'parent')
        self.crosswalk = []
        for row in raw_crosswalk:
            if row.technique_id not in self.techniques or row.control_id not in self.controls:
                log.warning("Dropping crosswalk row {0} -> {1}: not in the loaded catalogs"
                            .format(row.technique_id, row.control_id))
                continue
            if row not in self.crosswalk:
                self.crosswalk.append(row)
        self._controls_by_technique = {}
        for row in self.crosswalk:
            self._controls_by_technique.setdefault(row.technique_id, set()).add(row.control_id)
        self.crosswalk_technique_count = len(self._controls_by_technique)

        kev = list(kev)
        self.kev_raw_objects = len(kev)
        self.kev_unique_cves = len({cve_id for cve_id, _ in kev})
        self.kev = []
        seen = set()
        for cve_id, technique_id in kev:
            pair = GroundTruthPair(cve_id, collapse_to_parent(technique_id), LabelSource.KEV)
            if pair not in seen:
                seen.add(pair)
                self.kev.append(pair)

        self.cwe_capec = {}
        for cwe_id, capec_id in cwe_capec:
            self.cwe_capec.setdefault(cwe_id, []).append(capec_id)
        self.capec_attack = {}
        for capec_id, technique_id in capec_attack:
            self.capec_attack.setdefault(capec_id, []).append(technique_id)

    @classmethod
    def from_directory(cls, path=None):
        """
        Load the six catalog files from ``path``, or the bundled MedGateway
        fixtures when ``path`` is None.
        """
        techniques = [Technique(r['id'], r['name'], r.get('description', ''))
                      for r in _read_rows(_catalog_path(path, 'techniques'), ('id', 'name'))]
        controls = [Control(r['id'], r['name'], r.get('description', ''), r.get('family', ''))
                    for r in _read_rows(_catalog_path(path, 'controls'), ('id', 'name'))]
        crosswalk = [(r['technique_id'], r['control_id']) for r in
                     _read_rows(_catalog_path(path, 'crosswalk'), ('technique_id', 'control_id'))]
        kev = [(r['cve_id'], r['technique_id']) for r in
               _read_rows(_catalog_path(path, 'kev'), ('cve_id', 'technique_id'))]
        cwe_capec = [(r['cwe_id'], r['capec_id']) for r in
                     _read_rows(_catalog_path(path, 'cwe_capec'), ('cwe_id', 'capec_id'))]
        capec_attack = [(r['capec_id'], r['technique_id']) for r in
                        _read_rows(_catalog_path(path, 'capec_attack'), ('capec_id', 'technique_id'))]
        kb = cls(techniques, controls, crosswalk, kev, cwe_capec, capec_attack)
        log.info("Loaded {0} techniques, {1} controls, {2} crosswalk rows ({3} form), "
                 "{4} KEV objects over {5} CVEs".format(
                     len(kb.techniques), len(kb.controls), len(kb.crosswalk),
                     kb.crosswalk_form, kb.kev_raw_objects, kb.kev_unique_cves))
        return kb

    def technique(self, technique_id):
        try:
            return self.techniques[technique_id]
        except KeyError:
            raise UnknownTechnique("technique {0} is not in the catalog".format(technique_id))

    def parent_techniques(self):
        return [self.techniques[key] for key in sorted(self.techniques)
                if self.techniques[key].is_parent]

    def sorted_controls(self):
        return sorted(self.controls.values(), key=lambda c: control_sort_key(c.id))

    def in_crosswalk(self, technique_id, control_id):
        return control_id in self._controls_by_technique.get(technique_id, ())

    def lookup_controls(self, technique_id):
        """Controls linked to a technique by the crosswalk, in natural id order."""
        ids = sorted(self._controls_by_technique.get(technique_id, ()), key=control_sort_key)
        return [self.controls[control_id] for control_id in ids]

    def _transitive_techniques(self, cwe_ids):
        found = set()
        for cwe_id in cwe_ids:
            for capec_id in self.cwe_capec.get(cwe_id, ()):
                found.update(self.capec_attack.get(capec_id, ()))
        return found

    def derive_hint_techniques(self, cwe_ids):
        """
        Parent techniques reachable from CWE ids through CAPEC, sorted.

        Ids whose parent is not in the loaded catalog are left out.
        """
        parents = {collapse_to_parent(t) for t in self._transitive_techniques(cwe_ids)}
        return sorted(t for t in parents if t in self.techniques)

    def generate_weak_labels(self, cves, config=WeakLabelConfig()):
        """
        Weak (CVE, technique) labels from each CVE's CWE ids.

        Classes with fewer than ``config.min_support`` pairs are dropped
        after the optional parent collapse.
        """
        pairs = []
        for cve in cves:
            techniques = self._transitive_techniques(cve.cwe_ids)
            if config.collapse_to_parent:
                techniques = {collapse_to_parent(t) for t in techniques}
            for technique_id in sorted(techniques):
                if technique_id in self.techniques:
                    pairs.append(GroundTruthPair(cve.id, technique_id, LabelSource.WEAK_CWE_CAPEC))
        return _min_support(_unique(pairs), config.min_support)

    def kev_pairs(self, cve_ids=None):
        if cve_ids is None:
            return list(self.kev)
        cve_ids = set(cve_ids)
        return [pair for pair in self.kev if pair.cve_id in cve_ids]

    def build_label_set(self, cves, config=WeakLabelConfig()):
        """KEV gold pairs for ``cves`` merged with their weak labels, then filtered."""
        cves = list(cves)
        weak = self.generate_weak_labels(cves, WeakLabelConfig(1, config.collapse_to_parent))
        pairs = self.kev_pairs(cve.id for cve in cves) + weak
        return _min_support(_unique(pairs), config.min_support)

    def prepare_dataset(self, cves, pairs):
        """
        Cleaned texts and label matrix for CVEs that have both text and labels.
        """
        truth = {}
        for pair in pairs:
            truth.setdefault(pair.cve_id, set()).add(pair.technique_id)
        kept = [cve for cve in sorted(cves, key=lambda c: c.id)
                if cve.id in truth and clean_text(cve.description)]
        classes = sorted({t for cve in kept for t in truth[cve.id]})
        binarizer = MultiLabelBinarizer(classes=classes)
        labels = binarizer.fit_transform([sorted(truth[cve.id]) for cve in kept])
        return LabeledDataset([cve.id for cve in kept],
                              [clean_text(cve.description) for cve in kept],
                              classes, np.asarray(labels, dtype=int).reshape(len(kept), len(classes)))


def _unique(pairs):
    seen = set()
    unique = []
    for pair in pairs:
        if pair not in seen:
            seen.add(pair)
            unique.append(pair)
    return unique


def _min_support(pairs, min_support):
    # support counts labelled CVEs, so a pair found by two sources counts once
    support = Counter(technique_id for _, technique_id in
                      {(pair.cve_id, pair.technique_id) for pair in pairs})
    return [pair for pair in pairs if support[pair.technique_id] >= min_support]
