"""Build script for the optional compiled interpolation kernels.

The package is fully functional without the extension; lagflow._kernels
falls back to a vectorized numpy implementation when the compiled module
is absent.
"""

from setuptools import Extension, setup

try:
    import numpy
    from Cython.Build import cythonize
except ImportError:
    numpy = None
    cythonize = None

extensions = []
if cythonize is not None:
    extensions = cythonize(
        [
            Extension(
                "lagflow._kernels._bicubic",
                ["src/lagflow/_kernels/_bicubic.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=extensions)
