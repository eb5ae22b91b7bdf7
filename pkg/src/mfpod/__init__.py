"""Multi-fidelity field surrogates: POD compression, two-step co-kriging of
the latent coefficients and constrained design optimization on top."""

from .doe import ESC_SPACE, DesignSpace, lhs, nested_subset
from .errors import DataError, MfpodError, NumericalError
from .evaluation import CostModel, QoiSummary, equivalent_cost, qoi, rmse
from .field_grid import GridField, ScatteredField, StandardGrid, build_grid, interpolate_nearest
from .kriging import KrigingConfig, KrigingRegressor, LatentKriging
from .mf_kriging import MultiFidelityKriging
from .optimizer import OptimizationProblem, OptResult, build_esc_problem, minimize_constrained, multistart
from .pod import PODBasis, PODTransformer, compute_pod
from .surrogate import FieldSurrogate, fit_field_surrogate, load_surrogate, save_surrogate

__version__ = "0.1.0"
