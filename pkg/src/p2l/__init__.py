"""Desk-scale latent-diffusion inverse problem solvers.

Prompt-tuned, projected latent sampling (P2L) plus the classical
latent- and image-domain baselines, built on hand-written
vector-Jacobian products and verifiable against closed-form Gaussian
posteriors.
"""

from .codec import LatentCodec, autoencode_iterate, make_codec
from .diffmap import DiffMap, check_vjp, compose
from .harness import (ExperimentConfig, OracleResult, gaussian_posterior_oracle,
                      psnr, run_experiment)
from .operators import (LinearOperator, Measurement, OperatorSpec, add_noise,
                        adjoint, dot_product_check, make_motion_kernel, make_operator)
from .proximal import ProxConfig, cg_solve, glue_gamma, prox_gamma
from .score import (ConditionalGMMModel, Embedding, GaussianAnalyticModel,
                    NoiseSchedule, ScoreModel, ToyDenoiser, epsilon_predict,
                    make_vp_schedule, null_embedding, train_toy_denoiser, tweedie)
from .solvers import (AdamParams, RhoRule, SolverConfig, Trajectory, ddim_transition,
                      likelihood_grad, optimize_embedding, patched_epsilon,
                      project_to_encoder_range, run_baseline, run_p2l, run_solver)

__version__ = "0.1.0"
