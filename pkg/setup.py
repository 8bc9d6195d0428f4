"""Build script for the optional compiled pair-scan kernel.

The package works without the extension (a numpy fallback is selected at
import time), so a failed compile only costs speed.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        Extension(
            "gradbound.doubling._scan",
            ["src/gradbound/doubling/_scan.pyx"],
            include_dirs=[numpy.get_include()],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        ),
        compiler_directives={"language_level": "3"},
    )
except Exception as exc:  # pragma: no cover - build-environment dependent
    import sys

    print(f"warning: compiled kernel skipped ({exc}); using pure-Python scan",
          file=sys.stderr)

setup(ext_modules=ext_modules)
