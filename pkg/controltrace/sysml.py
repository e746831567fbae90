# Licensed under a 3-clause BSD style license - see LICENSE.rst
"""
=====
sysml
=====

Stage 1: read a SysML architecture model serialized as XML and build the
component registry every trace starts from.

The model format is the one used by the bundled MedGateway fixture::

    <sysml:Model xmlns:sysml="...">
      <sysml:Block name="AuditLog_Service" vendor="Apache" product="Log4j"
                   version="2.14.1" cpeHint="cpe:2.3:a:apache:log4j:2.14.1"
                   layer="Middleware"/>
      <sysml:Boundary name="Edge Processing">
        <sysml:BlockRef ref="AuditLog_Service"/>
      </sysml:Boundary>
    </sysml:Model>

Blocks may also be nested directly inside a ``sysml:Boundary`` or a
``sysml:Layer``.  Elements are matched on their local name, so the namespace
URI used by the modelling tool does not matter.
"""
import json
from dataclasses import dataclass, field

from astropy import log
from lxml import etree

from .cpe import EmptyProduct, MalformedCpe, normalize_cpe, parse_cpe

__all__ = ['Component', 'ComponentRegistry', 'parse_sysml', 'parse_sysml_file',
           'soi_profile', 'XmlSyntax', 'MissingProduct', 'DuplicateBlock']


class XmlSyntax(ValueError):
    pass


class MissingProduct(ValueError):
    pass


class DuplicateBlock(ValueError):
    pass


@dataclass(frozen=True)
class Component:
    block_name: str
    vendor: str
    product: str
    version: str
    cpe: object
    layer: str = ''
    trust_boundary: str = ''

    def to_dict(self):
        return {'block_name': self.block_name, 'vendor': self.vendor,
                'product': self.product, 'version': self.version,
                'cpe': self.cpe.serialize(), 'layer': self.layer,
                'trust_boundary': self.trust_boundary}

    @classmethod
    def from_dict(cls, data):
        return cls(data['block_name'], data['vendor'], data['product'],
                   data['version'], parse_cpe(data['cpe']),
                   data.get('layer', ''), data.get('trust_boundary', ''))


@dataclass(frozen=True)
class ComponentRegistry:
    """
    The architecture side of every trace: components in model order plus the
    trust boundaries and layers they live in.

    ``errors`` holds ``(block name, exception)`` pairs for blocks that could
    not be registered.
    """
    components: tuple = ()
    boundaries: tuple = ()
    layers: tuple = ()
    errors: tuple = field(default=(), compare=False)

    def __post_init__(self):
        names = [c.block_name for c in self.components]
        if len(set(names)) != len(names):
            raise DuplicateBlock("block names must be unique in a registry")
        for component in self.components:
            if component.trust_boundary and component.trust_boundary not in self.boundaries:
                raise ValueError("component {0} refers to unknown trust boundary {1!r}"
                                 .format(component.block_name, component.trust_boundary))

    def __len__(self):
        return len(self.components)

    def __iter__(self):
        return iter(self.components)

    def __contains__(self, block_name):
        return any(c.block_name == block_name for c in self.components)

    def get(self, block_name):
        for component in self.components:
            if component.block_name == block_name:
                return component
        raise KeyError(block_name)

    def to_json(self):
        """Canonical JSON form (sorted keys, model order kept)."""
        data = {'components': [c.to_dict() for c in self.components],
                'boundaries': list(self.boundaries),
                'layers': list(self.layers)}
        return json.dumps(data, indent=2, sort_keys=True) + '\n'

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        return cls(tuple(Component.from_dict(c) for c in data['components']),
                   tuple(data['boundaries']), tuple(data['layers']))


def _localname(element):
    if not isinstance(element.tag, str):
        return None
    return etree.QName(element).localname


def _enclosing(element, localname):
    for ancestor in element.iterancestors():
        if _localname(ancestor) == localname:
            return ancestor.get('name', '')
    return ''


def _block_cpe(block):
    hint = (block.get('cpeHint') or '').strip()
    if hint:
        try:
            return parse_cpe(hint)
        except MalformedCpe as exc:
            if not block.get('product'):
                raise
            log.warning("Block {0}: ignoring malformed cpeHint ({1})"
                        .format(block.get('name'), exc))
    try:
        return normalize_cpe(block.get('vendor', ''), block.get('product', ''),
                             block.get('version', ''))
    except EmptyProduct:
        raise MissingProduct("block {0} has neither a cpeHint nor a product"
                             .format(block.get('name')))


def _read_bytes(source):
    if hasattr(source, 'read'):
        source = source.read()
    if isinstance(source, str):
        source = source.encode('utf-8')
    return source


def parse_sysml(source):
    """
    Parse a SysML XML model into a `ComponentRegistry`.

    Parameters
    ----------
    source : bytes or file-like
        The serialized model.

    Returns
    -------
    registry : `ComponentRegistry`
        One component per valid block, in document order.  Per-block problems
        (`MissingProduct`, `DuplicateBlock`, unknown references) are logged
        and recorded in ``registry.errors``; parsing continues.

    Raises
    ------
    XmlSyntax
        If the input is not well-formed XML.
    """
    parser = etree.XMLParser(resolve_entities=False, no_network=True,
                             remove_comments=True)
    try:
        root = etree.fromstring(_read_bytes(source), parser)
    except etree.XMLSyntaxError as exc:
        raise XmlSyntax(str(exc))

    boundaries = []
    layers = []
    for element in root.iter():
        name = _localname(element)
        if name == 'Boundary' and element.get('name') and element.get('name') not in boundaries:
            boundaries.append(element.get('name'))
        elif name == 'Layer' and element.get('name') and element.get('name') not in layers:
            layers.append(element.get('name'))

    # boundary membership declared by reference
    referenced = {}
    errors = []
    for element in root.iter():
        if _localname(element) != 'BlockRef':
            continue
        ref = element.get('ref', '')
        boundary = _enclosing(element, 'Boundary')
        if ref in referenced and referenced[ref] != boundary:
            errors.append((ref, ValueError("block referenced from boundaries {0!r} and {1!r}"
                                           .format(referenced[ref], boundary))))
            continue
        referenced[ref] = boundary

    components = []
    seen = set()
    for block in root.iter():
        if _localname(block) != 'Block':
            continue
        block_name = (block.get('name') or '').strip()
        try:
            if not block_name:
                raise MissingProduct("block without a name")
            if block_name in seen:
                raise DuplicateBlock("duplicate block name {0!r}".format(block_name))
            cpe = _block_cpe(block)
        except (MissingProduct, DuplicateBlock, MalformedCpe) as exc:
            log.warning("Skipping SysML block {0!r}: {1}".format(block_name, exc))
            errors.append((block_name, exc))
            continue
        seen.add(block_name)

        layer = block.get('layer') or _enclosing(block, 'Layer')
        if layer and layer not in layers:
            layers.append(layer)
        boundary = _enclosing(block, 'Boundary') or referenced.get(block_name, '')
        components.append(Component(
            block_name=block_name,
            vendor=block.get('vendor') or cpe.vendor,
            product=block.get('product') or cpe.product,
            version=block.get('version') or cpe.version,
            cpe=cpe, layer=layer, trust_boundary=boundary))

    for ref in referenced:
        if ref not in seen and ref not in dict(errors):
            errors.append((ref, KeyError("boundary refers to unknown block {0!r}".format(ref))))

    log.debug("Parsed {0} SysML blocks, {1} errors".format(len(components), len(errors)))
    return ComponentRegistry(tuple(components), tuple(boundaries), tuple(layers),
                             tuple(errors))


def parse_sysml_file(path):
    with open(path, 'rb') as handle:
        return parse_sysml(handle)


def soi_profile(registry):
    """
    Render the system-of-interest profile text for a registry.

    The profile conditions the TF-IDF vectorizers on the concrete
    architecture: one sentence per component plus the boundary layout.
    """
    lines = []
    for component in registry:
        sentence = "{0} runs {1} {2} version {3} in the {4} layer".format(
            component.block_name.replace('_', ' '), component.vendor,
            component.product, component.version, component.layer or 'unassigned')
        if component.trust_boundary:
            sentence += " inside the {0} trust boundary".format(component.trust_boundary)
        lines.append(sentence + '.')
    if registry.boundaries:
        lines.append("Trust boundaries: {0}.".format(', '.join(registry.boundaries)))
    return '\n'.join(lines)
