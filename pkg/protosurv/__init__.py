"""ProtoSurv: prototype-library survival prediction with traceable explanations."""

from .core import (ENGINE_VERSION, CIndexUndefinedError, ConfigError, DataError, DatasetParseError,
                   DimensionError, EngineConfig, FeatureRecord, Kind, LibraryError, NonFiniteError,
                   NumericError, PrototypeEntry, PrototypeLibrary, ProtoSurvError, load_config,
                   validate_config, validate_library)
from .similarity import dissimilarity, l2_normalize, pmdsim

__version__ = ENGINE_VERSION
