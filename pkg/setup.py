"""Build the optional compiled random-walk kernel.

The package works without it: ``dmrisim.oracles.walker`` falls back to a
vectorized NumPy implementation when the extension is missing.
"""
import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
_PYX = "src/dmrisim/oracles/_walker_ext.pyx"
if os.environ.get("DMRISIM_NO_EXT", "0") != "1" and os.path.exists(_PYX):
    try:
        from Cython.Build import cythonize
    except ImportError:  # pragma: no cover
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "dmrisim.oracles._walker_ext",
                    [_PYX],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3", "-fopenmp"],
                    extra_link_args=["-fopenmp"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
