"""Builds the optional compiled scoring kernels.

The package works without them: dissent._kernels falls back to the numpy
implementation when the extension is missing (set DISSENT_PURE_PYTHON=1 to
skip the build deliberately).
"""

import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("DISSENT_PURE_PYTHON") != "1":
    try:
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [Extension("dissent._kernels._scoring", ["src/dissent/_kernels/_scoring.pyx"])],
            language_level=3,
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
