"""Build script: compiles the optional fast kernels.

The package works without the extension (a numpy fallback is selected at
import time), so any failure here degrades to a pure-Python install
rather than aborting.

Note -ffp-contract=off: the compiled kernels are kept bit-compatible
with the numpy backend, which never fuses multiply-adds.
"""

import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

extensions = []
if cythonize is not None:
    extensions = cythonize(
        [
            Extension(
                "placelearn._kernels._core",
                ["src/placelearn/_kernels/_core.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3", "-ffp-contract=off"],
            )
        ],
        language_level=3,
    )

setup(ext_modules=extensions)
