"""Build script: compiles the optional Cython convolution kernels.

If Cython or a C compiler is unavailable the build falls back to a pure
wheel; the package then selects the numpy kernel implementation at import.
"""

from setuptools import setup

try:
    import numpy
    from Cython.Build import cythonize
    from setuptools.extension import Extension

    extensions = cythonize(
        [
            Extension(
                "pulseid._kernels._convcy",
                ["src/pulseid/_kernels/_convcy.pyx"],
                include_dirs=[numpy.get_include()],
                # fast-math at compile (not link) time: lets gcc vectorize the
                # reduction loops without process-wide FTZ side effects
                extra_compile_args=["-O3", "-ffast-math"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
