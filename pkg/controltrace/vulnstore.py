# Licensed under a 3-clause BSD style license - see LICENSE.rst
"""
=========
vulnstore
=========

Stage 2: ingest NVD JSON feeds (NVD 2.0 API shape) into a local store and
match component CPEs against them with version-range matching, falling back
to product/version mentions in the description for records that carry no
usable CPE data for the product.
"""
import enum
import glob
import json
import os
import re
from collections import namedtuple
from dataclasses import dataclass, field

from astropy import log

from .cpe import ANY, MalformedCpe, parse_cpe

__all__ = ['CveRecord', 'MatchCriterion', 'VersionBound', 'FeedInventory',
           'VulnStore', 'ScanResult', 'MatchKind', 'Ordering',
           'version_compare', 'parse_feed', 'FeedSchema', 'EmptyStore']

CVE_PATTERN = re.compile(r'^CVE-\d{4}-\d{4,}$')
CWE_PATTERN = re.compile(r'^CWE-\d+$')

# highest CVSS version wins; within a version the maximum base score is kept
CVSS_METRIC_KEYS = ('cvssMetricV31', 'cvssMetricV30', 'cvssMetricV2')


class FeedSchema(ValueError):
    pass


class EmptyStore(LookupError):
    pass


class Ordering(enum.IntEnum):
    LT = -1
    EQ = 0
    GT = 1


class MatchKind(str, enum.Enum):
    CPE_RANGE = 'CPE_RANGE'
    DESCRIPTION = 'DESCRIPTION'


_SEGMENT_SPLIT = re.compile(r'[.\-]')
# segment kinds: a pre-release tag sorts before the end of the version,
# which sorts before any further numeric segment
_ALPHA, _END, _NUMERIC = 0, 1, 2


def _version_key(version):
    key = []
    for segment in _SEGMENT_SPLIT.split(version.strip().lower()):
        if not segment:
            continue
        if segment.isdecimal():
            key.append((_NUMERIC, int(segment), ''))
        else:
            key.append((_ALPHA, 0, segment))
    key.append((_END, 0, ''))
    return key


def version_compare(a, b):
    """
    Compare two release strings.

    Versions split on ``.`` and ``-``; numeric segments compare numerically
    and alphanumeric ones lexicographically.  A trailing pre-release segment
    orders before the same base without it, so ``2.0-beta9 < 2.0 < 2.0.1``.

    Returns
    -------
    ordering : `Ordering`
    """
    key_a, key_b = _version_key(a), _version_key(b)
    if key_a < key_b:
        return Ordering.LT
    if key_a > key_b:
        return Ordering.GT
    return Ordering.EQ


VersionBound = namedtuple('VersionBound', ['version', 'inclusive'])


@dataclass(frozen=True)
class MatchCriterion:
    cpe: object
    version_start: VersionBound = None
    version_end: VersionBound = None

    def __post_init__(self):
        if (self.version_start is not None and self.version_end is not None and
                version_compare(self.version_start.version,
                                self.version_end.version) is Ordering.GT):
            raise ValueError("version range start {0} is after end {1}".format(
                self.version_start.version, self.version_end.version))

    def names_product(self, cpe):
        return (self.cpe.part == cpe.part and
                self.cpe.vendor in (ANY, cpe.vendor) and
                self.cpe.product in (ANY, cpe.product))

    def satisfied_by(self, version):
        """
        Whether a component version lies in this criterion.

        An unknown component version (``"*"``) satisfies every criterion.
        """
        if version == ANY:
            return True
        if self.version_start is None and self.version_end is None:
            if self.cpe.version == ANY:
                return True
            return version_compare(version, self.cpe.version) is Ordering.EQ
        if self.version_start is not None:
            order = version_compare(version, self.version_start.version)
            if order is Ordering.LT or (order is Ordering.EQ and not self.version_start.inclusive):
                return False
        if self.version_end is not None:
            order = version_compare(version, self.version_end.version)
            if order is Ordering.GT or (order is Ordering.EQ and not self.version_end.inclusive):
                return False
        return True

    def to_dict(self):
        return {'cpe': self.cpe.serialize(),
                'version_start': list(self.version_start) if self.version_start else None,
                'version_end': list(self.version_end) if self.version_end else None}

    @classmethod
    def from_dict(cls, data):
        start = data.get('version_start')
        end = data.get('version_end')
        return cls(parse_cpe(data['cpe']),
                   VersionBound(*start) if start else None,
                   VersionBound(*end) if end else None)


@dataclass(frozen=True)
class CveRecord:
    id: str
    description: str = ''
    cvss_base: float = None
    cwe_ids: tuple = ()
    criteria: tuple = ()
    published_year: int = None

    def __post_init__(self):
        if not CVE_PATTERN.match(self.id or ''):
            raise ValueError("not a CVE id: {0!r}".format(self.id))
        if self.cvss_base is not None and not 0.0 <= self.cvss_base <= 10.0:
            raise ValueError("{0}: CVSS base score {1} outside [0, 10]"
                             .format(self.id, self.cvss_base))
        if self.published_year is None:
            object.__setattr__(self, 'published_year', int(self.id[4:8]))

    @property
    def usable(self):
        return bool(self.description.strip())

    def to_dict(self):
        return {'id': self.id, 'description': self.description,
                'cvss_base': self.cvss_base, 'cwe_ids': list(self.cwe_ids),
                'criteria': [c.to_dict() for c in self.criteria],
                'published_year': self.published_year}

    @classmethod
    def from_dict(cls, data):
        return cls(data['id'], data.get('description', ''), data.get('cvss_base'),
                   tuple(data.get('cwe_ids', ())),
                   tuple(MatchCriterion.from_dict(c) for c in data.get('criteria', ())),
                   data.get('published_year'))


@dataclass
class FeedInventory:
    """Per published year: ``(total records, records with a usable description)``."""
    per_year: dict = field(default_factory=dict)

    def add(self, year, usable):
        total, n_usable = self.per_year.get(year, (0, 0))
        self.per_year[year] = (total + 1, n_usable + int(bool(usable)))

    def merge(self, other):
        for year, (total, usable) in other.per_year.items():
            old_total, old_usable = self.per_year.get(year, (0, 0))
            self.per_year[year] = (old_total + total, old_usable + usable)
        return self

    @property
    def total(self):
        return sum(total for total, _ in self.per_year.values())

    @property
    def usable(self):
        return sum(usable for _, usable in self.per_year.values())


IngestResult = namedtuple('IngestResult', ['records_added', 'inventory_delta'])


def _english_description(cve):
    for entry in cve.get('descriptions') or ():
        if str(entry.get('lang', '')).lower().startswith('en'):
            return (entry.get('value') or '').strip()
    return ''


def _base_score(cve):
    metrics = cve.get('metrics') or {}
    for key in CVSS_METRIC_KEYS:
        scores = []
        for metric in metrics.get(key) or ():
            try:
                scores.append(float(metric['cvssData']['baseScore']))
            except (KeyError, TypeError, ValueError):
                continue
        if scores:
            return max(scores)
    return None


def _cwe_ids(cve):
    found = []
    for weakness in cve.get('weaknesses') or ():
        for entry in weakness.get('description') or ():
            value = (entry.get('value') or '').strip()
            if CWE_PATTERN.match(value) and value not in found:
                found.append(value)
    return tuple(found)


def _bound(match, kind):
    including = match.get('version{0}Including'.format(kind))
    if including:
        return VersionBound(including, True)
    excluding = match.get('version{0}Excluding'.format(kind))
    if excluding:
        return VersionBound(excluding, False)
    return None


def _criteria(cve_id, cve):
    configurations = cve.get('configurations') or ()
    if isinstance(configurations, dict):
        configurations = [configurations]
    criteria = []
    for configuration in configurations:
        for node in configuration.get('nodes') or ():
            for match in node.get('cpeMatch') or ():
                if not match.get('vulnerable', True):
                    continue
                try:
                    criteria.append(MatchCriterion(parse_cpe(match['criteria']),
                                                   _bound(match, 'Start'),
                                                   _bound(match, 'End')))
                except (KeyError, MalformedCpe, ValueError) as exc:
                    log.warning("{0}: dropping match criterion ({1})".format(cve_id, exc))
    return tuple(criteria)


def _published_year(cve, cve_id):
    published = str(cve.get('published') or '')
    if re.match(r'^\d{4}', published):
        return int(published[:4])
    return int(cve_id[4:8])


def parse_feed(source):
    """
    Parse one NVD JSON feed document.

    Returns
    -------
    records : list of `CveRecord`
    skipped : list of (int, str)
        Index and reason for each entry that could not become a record.

    Raises
    ------
    FeedSchema
        If the document is not JSON or has no ``vulnerabilities`` array.
    """
    if hasattr(source, 'read'):
        source = source.read()
    try:
        document = json.loads(source)
    except (TypeError, ValueError) as exc:
        raise FeedSchema("unparseable feed: {0}".format(exc))
    if not isinstance(document, dict) or not isinstance(document.get('vulnerabilities'), list):
        raise FeedSchema("feed has no 'vulnerabilities' array")

    records, skipped = [], []
    for index, item in enumerate(document['vulnerabilities']):
        cve = item.get('cve') if isinstance(item, dict) else None
        cve_id = (cve or {}).get('id')
        if not cve_id:
            skipped.append((index, 'entry has no cve.id'))
            continue
        try:
            records.append(CveRecord(
                id=cve_id,
                description=_english_description(cve),
                cvss_base=_base_score(cve),
                cwe_ids=_cwe_ids(cve),
                criteria=_criteria(cve_id, cve),
                published_year=_published_year(cve, cve_id)))
        except ValueError as exc:
            skipped.append((index, str(exc)))
    return records, skipped


_BOUNDARY_BEFORE = r'(?<![0-9a-z.])'
_BOUNDARY_AFTER = r'(?![0-9a-z]|\.[0-9a-z])'


def _mentions(description, product, version):
    text = description.lower()
    names = {product, product.replace('_', ' ')}
    if not any(name in text for name in names):
        return False
    pattern = _BOUNDARY_BEFORE + re.escape(version.lower()) + _BOUNDARY_AFTER
    return re.search(pattern, text) is not None


@dataclass
class ScanResult:
    """
    CVEs per component.

    ``by_component`` keeps registry order; ``links`` maps each CVE id to every
    component it was matched to, which is what keeps the traces per component.
    """
    by_component: dict = field(default_factory=dict)
    match_kinds: dict = field(default_factory=dict)

    @property
    def links(self):
        links = {}
        for name, records in self.by_component.items():
            for record in records:
                links.setdefault(record.id, []).append(name)
        return links

    @property
    def unique_cve_count(self):
        return len(self.links)

    def to_json(self):
        data = {name: [{'cve_id': r.id, 'match_kind': self.match_kinds[(name, r.id)].value}
                       for r in records]
                for name, records in self.by_component.items()}
        return json.dumps({'components': data, 'unique_cve_count': self.unique_cve_count},
                          indent=2, sort_keys=True) + '\n'

    @classmethod
    def from_json(cls, text, store, registry=None):
        """Rebuild a scan from its JSON form, resolving CVE ids against a store."""
        data = json.loads(text)['components']
        names = [c.block_name for c in registry] if registry is not None else sorted(data)
        result = cls()
        for name in names:
            entries = data.get(name, [])
            result.by_component[name] = [store.get(e['cve_id']) for e in entries]
            for entry in entries:
                result.match_kinds[(name, entry['cve_id'])] = MatchKind(entry['match_kind'])
        return result


class VulnStore:
    """
    Local CVE store built from NVD feeds.

    Ingestion overwrites records by id (last wins), so re-ingesting a feed
    leaves the store unchanged.  Queries should only run once loading is done.
    """

    def __init__(self, records=()):
        self._records = {}
        self.skipped = []
        for record in records:
            self._records[record.id] = record

    def __len__(self):
        return len(self._records)

    def __contains__(self, cve_id):
        return cve_id in self._records

    def __eq__(self, other):
        return isinstance(other, VulnStore) and self._records == other._records

    def get(self, cve_id):
        try:
            return self._records[cve_id]
        except KeyError:
            raise KeyError("CVE {0} is not in the store".format(cve_id))

    @property
    def records(self):
        return [self._records[key] for key in sorted(self._records)]

    def ingest_feed(self, source, years=None):
        """
        Add every vulnerability of a feed document.

        Parameters
        ----------
        source : bytes or file-like
            NVD 2.0 shaped JSON.
        years : container of int, optional
            Keep only records published in these years.

        Returns
        -------
        records_added, inventory_delta : int, `FeedInventory`
        """
        records, skipped = parse_feed(source)
        for index, reason in skipped:
            log.warning("Skipped feed entry {0}: {1}".format(index, reason))
        self.skipped.extend(skipped)

        delta = FeedInventory()
        added = 0
        for record in records:
            if years is not None and record.published_year not in years:
                continue
            self._records[record.id] = record
            delta.add(record.published_year, record.usable)
            added += 1
        log.debug("Ingested {0} records ({1} usable)".format(added, delta.usable))
        return IngestResult(added, delta)

    def ingest_directory(self, path, years=None):
        """Ingest every ``*.json`` feed in a directory, in file name order."""
        total = 0
        inventory = FeedInventory()
        for filename in sorted(glob.glob(os.path.join(path, '*.json'))):
            with open(filename, 'rb') as handle:
                added, delta = self.ingest_feed(handle, years=years)
            log.info("{0}: {1} records".format(os.path.basename(filename), added))
            total += added
            inventory.merge(delta)
        return IngestResult(total, inventory)

    def inventory(self):
        inventory = FeedInventory()
        for record in self._records.values():
            inventory.add(record.published_year, record.usable)
        return inventory

    def description_sample(self, n):
        """The first ``n`` usable records in id order."""
        return [r for r in self.records if r.usable][:n]

    def match_component(self, cpe):
        """
        CVEs affecting one CPE.

        A record matches by ``CPE_RANGE`` when one of its criteria has the
        same part and names the vendor and product (or ``*``) and the version
        lies in its range.
        Records with no criterion naming the product fall back to
        ``DESCRIPTION`` matching, which needs both the product name and the
        exact version string in the description.

        Returns
        -------
        matches : list of (`CveRecord`, `MatchKind`)
            Sorted by descending CVSS base score, then id.

        Raises
        ------
        EmptyStore
            If nothing has been ingested.
        """
        if not self._records:
            raise EmptyStore("the vulnerability store is empty")
        matches = []
        for record in self._records.values():
            naming = [c for c in record.criteria if c.names_product(cpe)]
            if naming:
                if any(c.satisfied_by(cpe.version) for c in naming):
                    matches.append((record, MatchKind.CPE_RANGE))
            elif cpe.version != ANY and _mentions(record.description, cpe.product, cpe.version):
                matches.append((record, MatchKind.DESCRIPTION))
        matches.sort(key=lambda m: (-(m[0].cvss_base if m[0].cvss_base is not None else -1.0),
                                    m[0].id))
        return matches

    def scan_registry(self, registry):
        """
        Match every component of a registry.

        Returns
        -------
        scan : `ScanResult`
        """
        result = ScanResult()
        for component in registry:
            matches = self.match_component(component.cpe)
            result.by_component[component.block_name] = [record for record, _ in matches]
            for record, kind in matches:
                result.match_kinds[(component.block_name, record.id)] = kind
        log.info("Scanned {0} components: {1} unique CVEs".format(
            len(result.by_component), result.unique_cve_count))
        return result

    def to_json(self):
        return json.dumps({'records': [r.to_dict() for r in self.records]},
                          indent=2, sort_keys=True) + '\n'

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        return cls(CveRecord.from_dict(r) for r in data['records'])

    def save(self, path):
        with open(path, 'w', encoding='utf-8') as handle:
            handle.write(self.to_json())

    @classmethod
    def load(cls, path):
        with open(path, encoding='utf-8') as handle:
            return cls.from_json(handle.read())
