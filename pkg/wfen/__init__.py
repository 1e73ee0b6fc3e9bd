from .pipeline import WFEN as WFEN
from .config import RunConfig as RunConfig
from .config import WFENConfig as WFENConfig
from .config import WFENSettings as WFENSettings
from .model import WFENModel as WFENModel
from .model import build_model as build_model

__version__ = "0.1.0"
__author__ = "wfen-developers"
__url__ = ""

__all__ = ["WFEN", "RunConfig", "WFENConfig", "WFENSettings", "WFENModel", "build_model"]
