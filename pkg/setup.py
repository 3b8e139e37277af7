"""Build script: compiles the optional BM25 scoring kernel.

The package works without the extension (a numpy fallback is selected at
import time); set ICLSEL_PURE_PYTHON=1 to skip compilation entirely.
"""

import os

from setuptools import setup

ext_modules = []
if os.environ.get("ICLSEL_PURE_PYTHON") != "1":
    try:
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "iclsel.retrieval._bm25_kernel",
                    ["src/iclsel/retrieval/_bm25_kernel.pyx"],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
