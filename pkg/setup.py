import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # the package runs on its pure-Python fallback
    ext_modules = []
else:
    ext_modules = cythonize(
        [Extension("kercnn._ckernels", ["src/kercnn/_ckernels.pyx"],
                   include_dirs=[np.get_include()], extra_compile_args=["-O2"])],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
