# Builds the optional compiled kernels (seqmix.nn._ckernels). If Cython or a
# C compiler is missing, the install falls back to the pure-numpy kernels.
import sys

from setuptools import setup

try:
    import numpy
    from Cython.Build import cythonize
    from setuptools.extension import Extension

    extensions = cythonize(
        [
            Extension(
                "seqmix.nn._ckernels",
                ["src/seqmix/nn/_ckernels.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                # -fno-trapping-math/-fno-math-errno keep IEEE results but let
                # gcc if-convert the relu/softmax selects into vector code
                extra_compile_args=["-O3", "-fno-trapping-math", "-fno-math-errno"],
            )
        ],
        language_level="3",
    )
except ImportError as exc:
    print(f"seqmix: building without compiled kernels ({exc})", file=sys.stderr)
    extensions = []

setup(ext_modules=extensions)
