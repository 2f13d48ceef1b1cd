"""Build script: compiles the optional rollout kernel.

`ADVPOL_NO_EXT=1 pip install ...` skips the extension entirely; the package
then runs on the pure-Python rollout backend.
"""
import os

from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("ADVPOL_NO_EXT"):
    import numpy as np
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "advpol._speedups",
                ["src/advpol/_speedups.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)
