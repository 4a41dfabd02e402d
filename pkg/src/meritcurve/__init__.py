"""meritcurve: day-ahead curve modelling and price-maker storage optimization."""

__version__ = "0.1.0"

from .market_data import (
    AggregatedCurve,
    CurvePoint,
    FeatureVector,
    Side,
    SynthConfig,
    dst_fix,
    fuel_cost,
    load_curves,
    save_curves,
    synth_curves,
)
from .parametric import (
    DenseCurve,
    ParametricCurve,
    detect_elastic,
    extract_plateaus,
    fit_parametric,
    interpolate_uniform,
    mase,
    nmae,
    reconstruct,
)

__all__ = [
    "AggregatedCurve", "CurvePoint", "FeatureVector", "Side", "SynthConfig",
    "dst_fix", "fuel_cost", "load_curves", "save_curves", "synth_curves",
    "DenseCurve", "ParametricCurve", "detect_elastic", "extract_plateaus",
    "fit_parametric", "interpolate_uniform", "mase", "nmae", "reconstruct",
    "__version__",
]
