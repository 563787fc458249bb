"""Neural immune PD tracking control simulation for a DC actuating mechanism.

A PD-plus-feedforward helper term drives the plant along a desired
trajectory; a fully recurrent network, trained online by backpropagation
through time, supplies the suppressor term that cancels the plant's
equivalent disturbance.  An immune PID controller serves as the comparison
baseline.
"""

from .control import (ControlSample, Gains, ImmunePidBaseline,
                      ImmunePidBaselineParams, check_critical_damping,
                      gaussian_suppression, general_immune_law, helper_pd,
                      immune_combine, tracking_helper)
from .harness import (CONTROLLERS, ComparisonResult, EpisodeConfig,
                      EpisodeLog, Metrics, Trajectory, TrainReport,
                      TrainingDiverged, compare, eval_trajectory, metrics,
                      run_episode, train, tune_baseline)
from .plant import (IntegrationError, LumpedParams, NominalParams,
                    PhysicalParams, PlantState, dynamics_rhs,
                    equivalent_disturbance, lump, step)
from .suppressor import (NetState, NetTopology, SuppressorNet, apply_update,
                         bptt_deltas, cost, error_output_coupling,
                         forward_step, gradient_check, immune_error,
                         init_weights, load_weights, mask_structure,
                         run_teacher_forced, save_weights, suppressor_output,
                         weight_gradient, zero_state)

__version__ = "0.1.0"
