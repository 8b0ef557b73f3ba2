"""Optional compiled shading kernel; the package works without it."""

import os

from setuptools import setup

ext_modules = []
if not os.environ.get("LUMIFORGE_NO_EXT"):
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [Extension("lumiforge.render._shade_ext", ["src/lumiforge/render/_shade_ext.pyx"],
                       include_dirs=[numpy.get_include()], extra_compile_args=["-O3"])],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
