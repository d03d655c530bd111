"""Build script for the compiled generation kernel.

The package works without the extension (a numpy fallback is selected at
import time), but the compiled loop is what makes sample-by-sample decoding
fast on CPU.  Build in place with:

    python3 setup.py build_ext --inplace
"""

from setuptools import Extension, setup

import numpy as np
from Cython.Build import cythonize

extensions = cythonize(
    [
        Extension(
            "singvc._stepgen",
            ["src/singvc/_stepgen.pyx"],
            include_dirs=[np.get_include()],
            extra_compile_args=["-O3", "-funroll-loops"],
        )
    ],
    compiler_directives={
        "boundscheck": False,
        "wraparound": False,
        "cdivision": True,
        "initializedcheck": False,
        "language_level": "3",
    },
)

setup(ext_modules=extensions)
