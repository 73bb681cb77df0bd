import os

from setuptools import Extension, setup

# The compiled sweep kernel is optional: without Cython (or with
# ROBUST_SYNTH_NO_EXT=1) the package falls back to the numpy backend.
extensions = []
if not os.environ.get("ROBUST_SYNTH_NO_EXT"):
    try:
        import numpy
        from Cython.Build import cythonize

        extensions = cythonize(
            [
                Extension(
                    "robustsynth._kernels",
                    ["src/robustsynth/_kernels.pyx"],
                    include_dirs=[numpy.get_include()],
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            language_level=3,
        )
    except ImportError:
        extensions = []

setup(ext_modules=extensions)
