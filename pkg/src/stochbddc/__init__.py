"""Stochastic BDDC preconditioners for elliptic problems with random coefficients."""
from .bddc import (BddcPreconditioner, SchurOperator, SPDError, Substructure,
                   average_operator_apply, build_preconditioner, mean_preconditioner,
                   preconditioner_apply, recover_interior, reduce_rhs, rho_scaling, schur_apply)
from .chaos import MultiIndexSet, PCMatrix, multi_index_set, pc_evaluate
from .harness import ExperimentConfig, RunReport, emit_report, run_experiment, sweep
from .krylov import PcgReport, pcg
from .mesh_fem import DofPartition, Mesh, build_mesh, classify_dofs, load_vector
from .offline import OfflineData, build_offline
from .online import OnlineInstance, instantiate, surrogate_schur
from .random_field import CovarianceSpec, KLBasis, global_kl, local_kl, sample_xi

__version__ = "0.1.0"
