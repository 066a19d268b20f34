import os

from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("SABER_NO_EXT"):
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "saber.replay._sumtree_cy",
                    ["src/saber/replay/_sumtree_cy.pyx"],
                    include_dirs=[numpy.get_include()],
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
