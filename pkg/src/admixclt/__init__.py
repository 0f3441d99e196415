"""Maximum likelihood and asymptotic uncertainty for the Admixture Model."""

__version__ = "0.1.0"

from .asymptotics import (ConeSpec, GaussianLaw, ProjectedLaw, boundary_law, interior_law,
                          project_onto_cone, summarize_law)
from .estimation import (EstimationProblem, FitResult, align_labels, fit_em, fit_em_multistart,
                         fit_supervised_newton, metric_d)
from .fisher import (SingularFisherError, check_assumption_star, check_assumption_starstar,
                     check_condition_au, expected_info_p, expected_info_q, fisher_blocks)
from .model import GenotypeMatrix, ModelConfig, log_likelihood
from .simulation import SimSpec, generate, run_clt_boundary, run_clt_interior, run_consistency
from .uniqueness import check_uniqueness_general, check_uniqueness_k2, is_possible
