"""Build script for the compiled simulation core.

The package works without the extension (a numpy fallback is selected at
import time), so a failed compilation only costs speed. Set
SLOWFAST_NO_EXT=1 to skip building the extension entirely.
"""

import os

from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("SLOWFAST_NO_EXT"):
    import numpy as np
    from Cython.Build import cythonize

    extra = ["-O3"]
    if os.environ.get("SLOWFAST_NATIVE"):
        extra.append("-march=native")
    ext_modules = cythonize(
        [
            Extension(
                "slowfast._kernels",
                ["src/slowfast/_kernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=extra,
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
