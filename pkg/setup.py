"""Builds the optional compiled kernel extension.

The package works without it: fedanchor._kernels falls back to the numpy
reference implementation when the extension is missing.
"""
import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "fedanchor._kernels._fastcore",
                ["src/fedanchor/_kernels/_fastcore.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                # -ffp-contract=off: keep IEEE add/mul (no FMA fusion) so the
                # compiled path rounds like the numpy reference.
                extra_compile_args=["-O3", "-march=native", "-ffp-contract=off"],
                optional=True,
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)
