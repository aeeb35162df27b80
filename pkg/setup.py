"""Build script for the optional Cython kernel extension.

The package works without the extension (a pure-numpy fallback is selected
at import time), so a failed extension build only costs speed.
"""

from setuptools import setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        ["src/pdcl/nncore/_kernels_cy.pyx"],
        language_level=3,
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
