#!/usr/bin/env python
# Licensed under a 3-clause BSD style license - see LICENSE.rst

# NOTE: The configuration for the package, including the name, version, and
# other information are set in the setup.cfg file.

import sys

from setuptools import setup


TEST_HELP = """
Note: running tests is not done using 'python setup.py test'. Instead run:

    pip install -e .[test]
    pytest

or, for one module of the suite,

    pytest controltrace/tests/test_mapping.py
"""

if 'test' in sys.argv:
    print(TEST_HELP)
    sys.exit(1)

DOCS_HELP = """
Note: building the documentation is not done using
'python setup.py build_docs'. Instead run:

    pip install -e .[docs]
    cd docs
    make html
"""

if 'build_docs' in sys.argv or 'build_sphinx' in sys.argv:
    print(DOCS_HELP)
    sys.exit(1)

setup()
