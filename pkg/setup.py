"""Build the optional compiled kernels.

The Cython extension is optional: when Cython or a C compiler is missing the
package installs without it and ``qdm`` runs on the numpy kernels instead.
"""
import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("QDM_NO_EXTENSION", "") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError:
        pass
    else:
        openmp = os.environ.get("QDM_NO_OPENMP", "") != "1"
        ext = Extension(
            "qdm._kernels",
            ["src/qdm/_kernels.pyx"],
            include_dirs=[np.get_include()],
            # no -ffast-math: results must be bit-reproducible
            extra_compile_args=["-O3"] + (["-fopenmp"] if openmp else []),
            extra_link_args=["-fopenmp"] if openmp else [],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            optional=True,
        )
        ext_modules = cythonize(
            [ext], compiler_directives={"language_level": "3"}, quiet=True
        )

setup(ext_modules=ext_modules)
