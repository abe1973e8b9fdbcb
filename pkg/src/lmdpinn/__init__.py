"""Physics-informed networks for thermoelastic laser metal deposition, numpy only."""
from .network import NetworkConfig, ScaleSet, init_glorot, forward, forward_physical
from .physics import Face, ProcessSetup
from .sampling import SamplingPlan, make_batch
from .training import Checkpoint, LossWeights, TrainRecord, TrainSettings, run_stage, validation_error

__all__ = [
    "Checkpoint", "Face", "LossWeights", "NetworkConfig", "ProcessSetup", "SamplingPlan", "ScaleSet",
    "TrainRecord", "TrainSettings", "forward", "forward_physical", "init_glorot", "make_batch", "run_stage",
    "validation_error",
]
