"""Build script for the optional compiled kernel extension.

The package works without the extension (a NumPy fallback is selected at
import time); set TEXLOOM_SKIP_NATIVE=1 to skip compiling it.
"""

import os

from setuptools import setup

ext_modules = []
if not os.environ.get("TEXLOOM_SKIP_NATIVE"):
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "texloom._kernels._native",
                    ["src/texloom/_kernels/_native.pyx"],
                    include_dirs=[numpy.get_include()],
                    # -ffp-contract=off: keep double arithmetic bit-identical
                    # to the NumPy fallback (no FMA contraction).
                    extra_compile_args=["-O3", "-ffp-contract=off"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
