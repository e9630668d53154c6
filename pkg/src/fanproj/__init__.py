"""Discretised projections, tube fans and sum-product experiments in the plane."""

from .projections import Direction, DirectionSet, exceptional_parameters, sumset_entropy
from .sets import PointSet1D, PointSet2D, Scale
from .solymosi import PipelineReport, sum_product_pipeline
from .tubes import Fan, FanParams, NoFan, find_fan

__version__ = "0.1.0"

__all__ = [
    "Direction",
    "DirectionSet",
    "Fan",
    "FanParams",
    "NoFan",
    "PipelineReport",
    "PointSet1D",
    "PointSet2D",
    "Scale",
    "exceptional_parameters",
    "find_fan",
    "sum_product_pipeline",
    "sumset_entropy",
]
