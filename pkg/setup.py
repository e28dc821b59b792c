import os

from setuptools import Extension, setup

# Built from source in place, so tune for the host by default; set
# BOUNDARYLAB_CFLAGS="-O3" for a portable binary.
CFLAGS = os.environ.get("BOUNDARYLAB_CFLAGS", "-O3 -march=native").split()

try:
    import numpy as np
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

if cythonize is not None:
    extensions = [
        Extension(
            "boundarylab.kernels._native",
            [
                "src/boundarylab/kernels/_native.pyx",
                "src/boundarylab/kernels/_kernels.c",
            ],
            include_dirs=[np.get_include(), "src/boundarylab/kernels"],
            extra_compile_args=CFLAGS,
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        )
    ]
    ext_modules = cythonize(
        extensions,
        compiler_directives={
            "language_level": 3,
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )
else:
    # Pure-python install: boundarylab.kernels falls back to the numpy
    # reference implementations at import time.
    ext_modules = []

setup(ext_modules=ext_modules)
