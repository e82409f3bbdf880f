"""coopsense: multi-base-station cooperative radar sensing with CNN-aided
target classification and random-finite-set multi-target tracking."""

__version__ = "0.1.0"

from .scenario import (RadioParams, BsPose, TargetTruth, Trajectory,
                       MotionPrimitive, ReflectionPoint, Scenario,
                       advance, target_reflectors, circular_network)
from .sensing import (SymbolGrid, BeamWeights, RangeAngleMap, make_tx_grid,
                      tx_beamformer, simulate_rx_grid, sensing_snr,
                      range_doppler_map, range_angle_map)
from .fusion import GridSpec, SoftMap, resample_to_grid, fuse
from .clustering import ClusteringConfig, MeasurementSet, extract_measurements
from .tracking import (MotionModel, TrackerConfig, BirthModel, StateVector,
                       PhdFilter, MbmFilter)
from .classifier import ClassifierConfig, CnnModel, crop_window, train, classify
from .metrics import OspaConfig, OspaResult, CapacityParams, ConfusionCounts, ospa, \
    assignment, aggregate_capacity, accuracy
