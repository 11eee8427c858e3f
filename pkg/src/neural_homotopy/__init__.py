"""Neural homotopies: space-time sinusoidal networks trained to follow geometric PDEs."""
from .field import (
    Jet2,
    SirenNetwork,
    extract_slice,
    forward,
    init_from_condition,
    init_standard,
    jet,
    jet_with_parameter_sensitivity,
    load_checkpoint,
    save_checkpoint,
)

__version__ = "0.1.0"
