from . import _version
from .blocks import ExperimentConfig, PpoSettings  # noqa
from .memory import FarCuriosity  # noqa

__version__ = _version.get_versions()["version"]
