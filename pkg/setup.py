import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

if cythonize is not None:
    ext_modules = cythonize(
        [
            Extension(
                "blindinv._convkern",
                ["src/blindinv/_convkern.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
else:
    # Pure-Python install: blindinv.kernels falls back to the numpy path.
    ext_modules = []

setup(ext_modules=ext_modules)
