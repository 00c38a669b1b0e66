"""Build script: compiles the optional kernel extension.

The package works without the extension (numpy fallback selected at
import); a failed compile therefore downgrades to a warning instead of
aborting the install.
"""

import sys

from setuptools import setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "scribblecap.kernels._core",
                ["src/scribblecap/kernels/_core.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": 3},
    )
except Exception as exc:  # pragma: no cover - depends on build host
    print(f"warning: kernel extension skipped ({exc}); numpy fallback will be used", file=sys.stderr)

setup(ext_modules=ext_modules)
