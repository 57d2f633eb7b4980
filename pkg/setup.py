import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [
    Extension(
        "lora_lab._ckernels",
        ["src/lora_lab/_ckernels.pyx"],
        include_dirs=[np.get_include()],
        # no FMA contraction: the elementwise updates must match the numpy path bit for bit
        extra_compile_args=[
            "-O3",
            "-march=native",
            "-ffp-contract=off",
            # lets the compiler vectorize dot products; NaN/inf semantics are kept
            "-fassociative-math",
            "-fno-signed-zeros",
            "-fno-trapping-math",
        ],
        optional=True,
    )
]

setup(
    ext_modules=cythonize(extensions, compiler_directives={"language_level": "3"}),
)
