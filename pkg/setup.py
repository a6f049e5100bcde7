"""Build script: compiles the optional hash-encoding extension.

The package works without the extension (a pure-torch fallback is selected
at import time), so a failed native build degrades to a warning instead of
aborting the install.  Set SCENEGEN_NO_EXT=1 to skip the build entirely.
"""

import os
import sys
import warnings

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class optional_build_ext(build_ext):
    """build_ext that downgrades native-build failures to a warning."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing, etc.
            warnings.warn(f"native extension build failed ({exc}); "
                          "scenegen will use the pure-torch hash backend")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            warnings.warn(f"building {ext.name} failed ({exc}); "
                          "scenegen will use the pure-torch hash backend")


def extensions():
    if os.environ.get("SCENEGEN_NO_EXT"):
        return []
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError:
        warnings.warn("Cython/numpy unavailable at build time; "
                      "skipping the native hash backend")
        return []
    ext = Extension(
        "scenegen.field._hash_cy",
        sources=["src/scenegen/field/_hash_cy.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"] if sys.platform != "win32" else ["/O2"],
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


setup(ext_modules=extensions(), cmdclass={"build_ext": optional_build_ext})
