import os

from setuptools import setup

# The compiled kernel core is optional: a pure-numpy fallback ships with the
# package and is selected at import time when the extension is missing.
ext_modules = []
if not os.environ.get("SQJ2_SKIP_EXT"):
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "sqj2.kernels._core",
                    ["src/sqj2/kernels/_core.pyx"],
                    include_dirs=[numpy.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
