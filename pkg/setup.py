"""Build script for the optional compiled Glauber kernel.

The package is pure Python except for rfim_lab.sampler._kernel, a Cython
extension holding the single-site update loop.  If Cython or a C compiler
is unavailable the build still succeeds and the sampler falls back to the
pure-Python engine at import time.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "rfim_lab.sampler._kernel",
                ["src/rfim_lab/sampler/_kernel.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                # No contracted multiply-adds: scalar updates here must
                # round exactly like the NumPy vector ops in the
                # pure-Python reference engine.
                extra_compile_args=["-ffp-contract=off"],
            )
        ],
        language_level="3",
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
