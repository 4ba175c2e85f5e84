import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "pecontrol._band_kernels",
                ["src/pecontrol/_band_kernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
                optional=True,
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    # No Cython: the package runs on the pure SciPy kernels.
    extensions = []

setup(ext_modules=extensions)
