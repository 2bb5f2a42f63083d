"""Build script for the optional compiled geometry kernel.

The package works without the extension (a pure NumPy backend is selected at
import time); building it just makes closest-point queries much faster.
"""
import sys

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    """Build the extension if possible, otherwise fall back to pure Python."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler or Cython missing
            print(f"warning: skipping compiled kernel ({exc}); "
                  "pure-Python backend will be used", file=sys.stderr)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"warning: could not build {ext.name} ({exc}); "
                  "pure-Python backend will be used", file=sys.stderr)


def make_extensions():
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError:
        return []
    ext = Extension(
        "cosma._geomcore",
        sources=["src/cosma/_geomcore.pyx"],
        include_dirs=[numpy.get_include()],
        extra_compile_args=["-O3"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], language_level=3)


setup(
    ext_modules=make_extensions(),
    cmdclass={"build_ext": OptionalBuildExt},
)
