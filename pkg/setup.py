"""Build script for the optional compiled kernels.

The Cython extension is optional: if it cannot be built the package falls
back to the numpy implementation in ``ldl._kernels_py``.
"""
import os

from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("LDL_NO_EXT"):
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "ldl._kernels",
                    ["src/ldl/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
