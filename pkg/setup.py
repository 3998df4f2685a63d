"""Build script for the optional compiled kernel.

The extension is a pure speedup: if Cython or a C compiler is unavailable the
install still succeeds and the package falls back to the numpy kernels at
import time.  Build in place with  python setup.py build_ext --inplace
"""

from setuptools import Extension, setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext = Extension(
        "fwmarket._kernels",
        sources=["src/fwmarket/_kernels.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
    )
    ext.optional = True
    ext_modules = cythonize([ext], language_level="3")
except ImportError:
    pass

setup(ext_modules=ext_modules)
