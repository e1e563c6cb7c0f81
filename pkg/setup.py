"""Build script for the optional compiled kernel core.

The package is fully functional without the extension (a NumPy fallback is
selected at import time); building it just makes conv/pool training steps
cheaper. Set TAGNETS_NO_EXT=1 to skip compilation entirely.
"""

import os

from setuptools import setup

extensions = []
if not os.environ.get("TAGNETS_NO_EXT"):
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        extensions = cythonize(
            [
                Extension(
                    "tagnets.kernels._fastcore",
                    ["src/tagnets/kernels/_fastcore.pyx"],
                    include_dirs=[np.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={
                "language_level": "3",
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
                "initializedcheck": False,
            },
        )
    except ImportError:
        extensions = []

setup(ext_modules=extensions)
