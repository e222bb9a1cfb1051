"""polytrack: a path-following control laboratory for automated vehicles.

Polytopic LPV lateral-error models under bounded uncertainty, per-timestep
min-max robust MPC synthesized from matrix inequalities, an offline switched
LPV controller with an average-dwell-time supervisor, and a closed-loop
single-track simulation harness for comparing them.
"""

__version__ = "0.1.0"

from .controllers import FrozenLqrController, NominalMpcController, dlqr_gain
from .lmi import (AffineMatrixExpr, MatrixVar, SdpProblem, SdpSolution,
                  SolverSettings, SolveStatus, block_expr, psd_check,
                  schur_embed, solve)
from .mpc import (GainResult, RobustMpcConfig, RobustMpcController,
                  assemble_lmis, compute_gain, control_step,
                  curvature_feedforward, understeer_gradient)
from .paths import (ArcSpec, DoubleLaneChangeSpec, ReferencePath, SineSpec,
                    StraightSpec, generate_path)
from .sim import (ConstantSpeed, GustDisturbance, NoDisturbance, PlantState,
                  RampSpeed, RandomDisturbance, Scenario, SimLog, SineSpeed,
                  longitudinal_step, metrics, plant_step, project_error,
                  run_closed_loop)
from .switched import (AdtCertificate, GainSchedule, RegionGains, SpeedRegion,
                       SupervisorState, SwitchedLpvController,
                       SwitchedSynthConfig, compute_mu, load_schedule,
                       save_schedule, supervisor_step, switched_control_step,
                       synthesize_region, synthesize_schedule)
from .vehicle import (ErrorState, PolytopicModel, SchedulingPoint,
                      VehicleParams, build_error_dynamics, build_polytope,
                      discretize_euler, scheduling_weights)

__all__ = [name for name in dir() if not name.startswith("_")]
