import unittest

import numpy as np

from ..cpe import (ANY, CpeIdentifier, EmptyProduct, MalformedCpe,
                   normalize_cpe, parse_cpe)


class ParseCpeCase(unittest.TestCase):
    def test_truncated_string(self):
        cpe = parse_cpe('cpe:2.3:a:apache:log4j:2.14.1')
        self.assertEqual((cpe.part, cpe.vendor, cpe.product, cpe.version),
                         ('a', 'apache', 'log4j', '2.14.1'))
        self.assertEqual(cpe.attributes()[4:], (ANY,) * 7)

    def test_full_string(self):
        text = 'cpe:2.3:a:v:p:1.0:*:*:*:*:*:*:*'
        cpe = parse_cpe(text)
        self.assertEqual(cpe.serialize(), text)
        self.assertEqual(parse_cpe(cpe.serialize()), cpe)

    def test_bad_part(self):
        with self.assertRaises(MalformedCpe):
            parse_cpe('cpe:2.3:x:bad')

    def test_bad_prefix(self):
        for text in ('cpe:/a:apache:log4j:2.14.1', 'apache log4j', '', None):
            with self.assertRaises(MalformedCpe):
                parse_cpe(text)

    def test_too_many_attributes(self):
        with self.assertRaises(MalformedCpe):
            parse_cpe('cpe:2.3:a:v:p:1:*:*:*:*:*:*:*:extra')

    def test_lowercased(self):
        self.assertEqual(parse_cpe('cpe:2.3:A:Apache:Log4J:2.14.1').vendor, 'apache')

    def test_escaped_colon(self):
        cpe = CpeIdentifier('a', 'vendor', 'host:port', '1.0')
        self.assertIn('host\\:port', cpe.serialize())
        self.assertEqual(parse_cpe(cpe.serialize()), cpe)

    def test_round_trip_random(self):
        rng = np.random.RandomState(7)
        alphabet = list('abcxyz019._-:\\')
        for _ in range(200):
            values = [''.join(rng.choice(alphabet, size=rng.randint(1, 8)))
                      for _ in range(10)]
            cpe = CpeIdentifier(rng.choice(['a', 'o', 'h']), *values)
            self.assertEqual(parse_cpe(cpe.serialize()), cpe)
            self.assertEqual(parse_cpe(cpe.short()), cpe)

    def test_short(self):
        cpe = parse_cpe('cpe:2.3:o:canonical:ubuntu_linux:22.04:*:*:*:lts:*:*:*')
        self.assertEqual(cpe.short(), 'cpe:2.3:o:canonical:ubuntu_linux:22.04:*:*:*:lts')
        self.assertEqual(str(parse_cpe('cpe:2.3:a:f5:nginx:1.21.6:*:*:*:*:*:*:*')),
                         'cpe:2.3:a:f5:nginx:1.21.6')


class NormalizeCpeCase(unittest.TestCase):
    def test_vendor_product_version(self):
        self.assertEqual(normalize_cpe('Apache', 'Log4j', '2.14.1'),
                         parse_cpe('cpe:2.3:a:apache:log4j:2.14.1'))

    def test_defaults(self):
        self.assertEqual(normalize_cpe('', 'nginx', ''),
                         parse_cpe('cpe:2.3:a:nginx:nginx:*'))

    def test_whitespace(self):
        cpe = normalize_cpe('Eclipse', 'Mosquitto Broker', '2.0.14')
        self.assertEqual(cpe.product, 'mosquitto_broker')
        self.assertEqual(normalize_cpe('Red  Hat', 'Keycloak', '18.0.0').vendor, 'red_hat')

    def test_empty_product(self):
        with self.assertRaises(EmptyProduct):
            normalize_cpe('Apache', '   ', '1.0')
