"""Build script for the optional compiled numeric core.

The package works without the extension (a pure-Python backend is selected
at import time), so a failed compile downgrades to a warning instead of
aborting the install.
"""

import sys

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    """Build the extension if possible; fall back to pure Python otherwise."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler or Cython missing
            print(f"ntklab: compiled core skipped ({exc}); "
                  "using pure-Python backend", file=sys.stderr)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"ntklab: building {ext.name} failed ({exc}); "
                  "using pure-Python backend", file=sys.stderr)


def extensions():
    try:
        from Cython.Build import cythonize
    except ImportError:
        return []
    # -ffp-contract=off keeps results bitwise identical to the pure-Python
    # backend (no FMA contraction); do not add -ffast-math for the same reason.
    ext = Extension(
        "ntklab._core",
        sources=["src/ntklab/_core.pyx"],
        extra_compile_args=["-O3", "-ffp-contract=off"],
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


setup(
    ext_modules=extensions(),
    cmdclass={"build_ext": OptionalBuildExt},
)
