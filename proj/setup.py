"""Builds the compiled `ctfr._core` extension by driving the project's CMake
configuration from setuptools, so `pip install` (editable or not) produces the
same module the CMake build tree does."""

import os
import subprocess
import sys
from pathlib import Path

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class CMakeExtension(Extension):
    def __init__(self, name: str, sourcedir: str = "") -> None:
        super().__init__(name, sources=[])
        self.sourcedir = os.fspath(Path(sourcedir).resolve())


class CMakeBuild(build_ext):
    def build_extension(self, ext: CMakeExtension) -> None:
        out_path = Path.cwd() / self.get_ext_fullpath(ext.name)
        out_path.parent.mkdir(parents=True, exist_ok=True)

        build_temp = Path(self.build_temp).resolve()
        build_temp.mkdir(parents=True, exist_ok=True)

        cmake_args = [
            "-DCMAKE_BUILD_TYPE=Release",
            f"-DPython3_EXECUTABLE={sys.executable}",
        ]
        try:
            import pybind11

            cmake_args.append(f"-Dpybind11_DIR={pybind11.get_cmake_dir()}")
        except ImportError:
            pass  # find_package falls back to a system-wide pybind11

        subprocess.run(["cmake", ext.sourcedir, *cmake_args], cwd=build_temp, check=True)
        subprocess.run(
            ["cmake", "--build", ".", "--target", "_core", "-j", str(os.cpu_count() or 1)],
            cwd=build_temp,
            check=True,
        )

        # The CMake build drops the module into its python package staging
        # directory; hand the file to setuptools under the name it expects.
        staged = list((build_temp / "python_pkg" / "ctfr").glob("_core*.so"))
        if len(staged) != 1:
            raise RuntimeError(f"expected exactly one built module, found {staged}")
        out_path.write_bytes(staged[0].read_bytes())


setup(
    ext_modules=[CMakeExtension("ctfr._core")],
    cmdclass={"build_ext": CMakeBuild},
)
