"""Fractional diffusion bridge models at desk scale.

Markov-approximate fractional Brownian motion as a bridge reference process,
exact and SDE-based sampling of its partially pinned bridge, paired
coupling-preserving bridge training, unpaired alpha-IMF training, and the
2D toy benchmarks with Wasserstein evaluation.
"""

__version__ = "0.1.0"

from .bridge import (AugmentedState, Trajectory, brownian_bridge_marginal,
                     joint_covariance, pinned_drift, pinned_mean_cov,
                     sample_pinned_marginal, sample_pinned_marginal_batch,
                     sample_pinned_path, simulate_pinned_em,
                     simulate_pinned_em_batch, write_trajectories_csv)
from .errors import (DivergenceDetected, EmptySet, FBridgeError, InvalidConfig,
                     NoConvergence, NonFiniteGradient, NotPositiveDefinite,
                     ShapeMismatch, SingularMatrix, TimeTooCloseToOne)
from .mafbm import (BridgeKernel, ProcessConfig, build_grid, cross_vector,
                    drift_matrices, fbm_variance_integral, gram_matrix,
                    mc_l2_error, mc_l2_quadratic, optimal_coefficients)
from .nn import (MlpModel, adam_step, backward, backward_and_step, forward,
                 init_mlp, load_model, save_model)
from .numerics import cholesky, quadrature, sample_gaussian, solve_linear
from .paired import (PairDataset, PairedTrainConfig, TrainResult, abm_loss,
                     paired_loss, sample_abm, sample_paired, train_abm,
                     train_paired)
from .rng import RngStream
from .unpaired import (MarginalPools, UnpairedConfig, UnpairedModels,
                       backward_regularizer, coupling_correlation,
                       eot_gaussian_correlation, finetune_alpha_imf, pretrain,
                       reverse_drift_residual, simulate_endpoints,
                       unpaired_loss)
from .datasets import (ToySpec, gen_gaussian_cross, gen_gaussian_shift,
                       gen_moons, gen_tshape, make_dataset, mode_accuracy,
                       wasserstein1)
