"""Helper selection and LTE-V2X resource allocation for cooperative perception."""
from .allocator import (AllocationPlan, AllocPolicy, PowerSplit, allocate, allocate_baseline,
                        allocate_proportional, sweep_error)
from .comms import (effective_throughput, expected_retransmissions, f3_throughput, f4_energy,
                    meets_delay_constraint, sample_delay)
from .errors import ConfigurationError, ContractError, DomainError, InfeasibleError
from .fusion import BoundingBox, DetectionSet, degrade, fuse_iou_max, iou, metrics
from .objectives import f1_visual_range, f2_motion_blur, pulse_for
from .scenario import (CameraModel, CommsBudget, Environment, Scenario, ScenarioConfig, Vehicle,
                       generate_scenario, validate_scenario)
from .selector import GaConfig, ObjectiveWeights, SelectionResult, select_baseline, select_ga, select_oracle

__version__ = "0.1.0"
