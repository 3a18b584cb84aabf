from setuptools import setup, Extension
from Cython.Build import cythonize


ext_module = Extension(
    "cfsf._kernels",
    ["src/cfsf/_kernels.pyx"],
    extra_compile_args=["-O3"],
)


setup(
    ext_modules=cythonize(ext_module, language_level=3),
)
