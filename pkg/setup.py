"""Build the optional compiled kernel extension.

The package works without the extension (a numpy fallback is selected at
import time), so a failed build here is tolerated rather than fatal.
"""

from setuptools import setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools.extension import Extension

    # -ffp-contract=off: the kernels promise bit-exact agreement with the
    # reference accumulation order, which FMA contraction would break.
    ext_modules = cythonize(
        [
            Extension(
                "affectbench._kernels",
                sources=["src/affectbench/_kernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3", "-ffp-contract=off"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except Exception as exc:  # pragma: no cover - build-env dependent
    import sys

    print(f"affectbench: skipping compiled kernels ({exc}); "
          "the pure-python backend will be used", file=sys.stderr)

setup(ext_modules=ext_modules)
