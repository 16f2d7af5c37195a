from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class optional_build_ext(build_ext):
    # the pure-Python kernels take over if the extension cannot be built

    def run(self):
        try:
            super().run()
        except Exception as exc:
            print(f"warning: magicpair._speedups not built ({exc})")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"warning: magicpair._speedups not built ({exc})")


try:
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "magicpair._speedups",
                ["src/magicpair/_speedups.pyx"],
                libraries=["crypto"],
                extra_compile_args=["-O2", "-Wno-deprecated-declarations"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules, cmdclass={"build_ext": optional_build_ext})
