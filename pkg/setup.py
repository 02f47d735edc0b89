"""Build script for the optional compiled kernel extension.

The package is fully functional without the extension (a numpy/scipy
fallback is selected at import time), so a missing compiler or Cython
only costs speed, never correctness.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "nudgekit.model.kernels._speedups",
                ["src/nudgekit/model/kernels/_speedups.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
