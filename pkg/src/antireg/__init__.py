"""Sign-reversed (reward) regularization with spectral safety checks, degrees-of-freedom
targeting, decay schedules, safeguarded small-network training and paired reporting."""

from .dof_target import DofTarget, solve_dof_target
from .regression import RegressionProblem, closed_form_solve, gd_solve
from .schedule import ARConfig, LambdaSchedule, SafetyZone, power_decay
from .smoother import dof, smoother_matrix, smoother_report
from .spectral import safe_lambda_max
from .training import OptimizerSpec, train

__version__ = "0.1.0"
