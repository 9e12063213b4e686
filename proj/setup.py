import subprocess
import sys
from pathlib import Path

from setuptools import setup
from setuptools.command.build_ext import build_ext
from setuptools.extension import Extension


class CMakeExtension(Extension):
    def __init__(self, name):
        super().__init__(name, sources=[])


class CMakeBuild(build_ext):
    """Delegate the extension build to the project's CMake tree."""

    def build_extension(self, ext):
        source = Path(__file__).resolve().parent
        build_dir = Path(self.build_temp).resolve()
        build_dir.mkdir(parents=True, exist_ok=True)
        out_dir = Path(self.get_ext_fullpath(ext.name)).resolve().parent
        subprocess.run(
            [
                "cmake",
                str(source),
                "-DCMAKE_BUILD_TYPE=Release",
                f"-Dpybind11_DIR={self._pybind11_dir()}",
            ],
            cwd=build_dir,
            check=True,
        )
        subprocess.run(["cmake", "--build", str(build_dir), "--target", "_core"], check=True)
        built = next((build_dir / "python" / "runmax").glob("_core*"))
        out_dir.mkdir(parents=True, exist_ok=True)
        self.copy_file(str(built), str(out_dir / built.name))

    @staticmethod
    def _pybind11_dir():
        import pybind11

        return pybind11.get_cmake_dir()


setup(
    ext_modules=[CMakeExtension("runmax._core")],
    cmdclass={"build_ext": CMakeBuild},
)
