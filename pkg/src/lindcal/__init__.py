"""Open-system simulation and calibration of small transmon chains."""

from .calibrate import FitConfig, FitResult, ParameterLayout, ParameterVector, adam_fit, loss_fn
from .measurement import ConfusionMatrix, ExperimentRecord, mitigate, sample_record
from .propagator import ExperimentKind, TimeGrid, evolve, populations, run_experiment, simulate_populations
from .qdyn import CouplingMatrix, DensityMatrix, FrequencyVector, HamiltonianSpec, NoiseSpec, thermal_photon_number
from .stitch import SubsystemFit, consistency_check, predict_composite

__version__ = "0.1.0"
