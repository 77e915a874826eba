"""Build script: compiles the pairwise-kernel core when Cython is available.

The package works without the compiled extension (a NumPy fallback is
selected at import time), so a failed extension build is tolerated.
"""

from setuptools import Extension, setup

try:
    import numpy
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "mimogpr._core._kernels_cy",
                ["src/mimogpr/_core/_kernels_cy.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
