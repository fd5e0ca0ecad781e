import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
    ext_modules = cythonize(
        [Extension(
            "crossflow.qp._kernels_cy",
            ["src/crossflow/qp/_kernels_cy.pyx"],
            extra_compile_args=["-O3"],
            include_dirs=[numpy.get_include()],
        )],
        language_level=3,
    )
except ImportError:
    # pure-Python kernels are selected at import time when the
    # extension is missing, so building without Cython is fine
    ext_modules = []

setup(ext_modules=ext_modules)
