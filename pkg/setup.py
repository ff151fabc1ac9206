import numpy
from setuptools import setup
from setuptools.extension import Extension

from Cython.Build import cythonize

ext_modules = cythonize(
    [
        Extension(
            "reenet._kernels._corr",
            ["src/reenet/_kernels/_corr.pyx"],
            include_dirs=[numpy.get_include()],
            extra_compile_args=["-O3"],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        )
    ],
    language_level="3",
)

setup(ext_modules=ext_modules)
