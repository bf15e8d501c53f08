"""Build hook for the optional compiled kernel extension.

The package is fully functional without the extension (a pure-Python
twin of the kernels is selected at import time), so any failure here
degrades to a source-only install instead of aborting.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "flowmigrate._kernels._native",
                ["src/flowmigrate/_kernels/_native.pyx"],
                language="c++",
                extra_compile_args=["-O2", "-std=c++17"],
                optional=True,
            )
        ],
        language_level=3,
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
