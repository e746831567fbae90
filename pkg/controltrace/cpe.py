# Licensed under a 3-clause BSD style license - see LICENSE.rst
"""
===
cpe
===

CPE 2.3 formatted-string handling: parsing (including the truncated strings
that architecture models and reports commonly carry), serialization and the
heuristic normalizer used when a model block has no explicit CPE.
"""
import re
from dataclasses import dataclass, fields

__all__ = ['CpeIdentifier', 'parse_cpe', 'normalize_cpe', 'MalformedCpe',
           'EmptyProduct']

CPE23_PREFIX = 'cpe:2.3:'
PARTS = ('a', 'o', 'h')
ANY = '*'

# characters that must be quoted inside a formatted-string attribute
_QUOTED = ('\\', ':')


class MalformedCpe(ValueError):
    pass


class EmptyProduct(ValueError):
    pass


@dataclass(frozen=True)
class CpeIdentifier:
    """
    One CPE 2.3 name, stored unescaped and lowercased.

    Attributes that are not given default to the ANY value ``"*"``.
    """
    part: str
    vendor: str = ANY
    product: str = ANY
    version: str = ANY
    update: str = ANY
    edition: str = ANY
    language: str = ANY
    sw_edition: str = ANY
    target_sw: str = ANY
    target_hw: str = ANY
    other: str = ANY

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not isinstance(value, str):
                raise MalformedCpe("CPE attribute {0} must be a string, got "
                                   "{1!r}".format(f.name, value))
            value = value.lower() or ANY
            object.__setattr__(self, f.name, value)
        if self.part not in PARTS:
            raise MalformedCpe("CPE part must be one of {0}, got {1!r}"
                               .format(PARTS, self.part))

    def attributes(self):
        return tuple(getattr(self, f.name) for f in fields(self))

    def serialize(self):
        """Full 11-attribute formatted string."""
        return CPE23_PREFIX + ':'.join(_escape(v) for v in self.attributes())

    def short(self):
        """Formatted string with trailing ANY attributes after the version dropped."""
        values = [_escape(v) for v in self.attributes()]
        while len(values) > 4 and values[-1] == ANY:
            values.pop()
        return CPE23_PREFIX + ':'.join(values)

    def __str__(self):
        return self.short()


def _escape(value):
    if value == ANY:
        return value
    for char in _QUOTED:
        value = value.replace(char, '\\' + char)
    return value


def _split_attributes(body):
    """Split on unescaped colons, removing the quoting backslashes."""
    values = []
    current = []
    chars = iter(body)
    for char in chars:
        if char == '\\':
            current.append(next(chars, '\\'))
        elif char == ':':
            values.append(''.join(current))
            current = []
        else:
            current.append(char)
    values.append(''.join(current))
    return values


def parse_cpe(text):
    """
    Parse a CPE 2.3 formatted string.

    Truncated strings are legal: attributes missing after the part are
    filled with ``"*"``.

    Parameters
    ----------
    text : str
        A string starting with ``cpe:2.3:``.

    Returns
    -------
    cpe : `CpeIdentifier`

    Raises
    ------
    MalformedCpe
        If the prefix is missing, the part is not one of a/o/h, or there are
        more than 11 attributes.
    """
    if not isinstance(text, str) or not text.lower().startswith(CPE23_PREFIX):
        raise MalformedCpe("not a CPE 2.3 formatted string: {0!r}".format(text))
    values = _split_attributes(text.strip()[len(CPE23_PREFIX):])
    if len(values) > 11:
        raise MalformedCpe("too many attributes in {0!r}".format(text))
    return CpeIdentifier(*values)


_WHITESPACE = re.compile(r'\s+')


def _normalize_token(value):
    return _WHITESPACE.sub('_', (value or '').strip().lower())


def normalize_cpe(vendor, product, version):
    """
    Build an application CPE from free-text vendor, product and version.

    Inputs are lowercased and internal whitespace runs become underscores.
    An empty vendor takes the product name; an empty version becomes ``"*"``.
    """
    product = _normalize_token(product)
    if not product:
        raise EmptyProduct("cannot build a CPE without a product name")
    vendor = _normalize_token(vendor) or product
    version = _normalize_token(version) or ANY
    return CpeIdentifier('a', vendor, product, version)
