"""Accuracy and stability measurements for learned image deblurring.

The package builds periodic blur operators, classical and learned
reconstructors, and the empirical accuracy / stability / Lipschitz
estimators used to compare them, plus the desk-scale experiments behind
the `reconstab` command-line tool.
"""

from .errors import (CapabilityError, DegenerateSpectrumError,
                     NumericalBreakdownError, ParameterError, PgmParseError,
                     RankDeficiencyError, ReconstabError, ShapeError,
                     TrainingDivergedError)
from .linops import (ConvolutionOperator, DenseOperator, GaussianKernel,
                     GradientOperator, IdentityOperator, LinearOperator,
                     Shape, SpectralDecomposition, StencilKernel,
                     build_convolution_operator, build_gaussian_kernel,
                     load_kernel_text, load_operator, operator_from_descriptor,
                     operator_to_descriptor, save_kernel_text, save_operator,
                     spectral_decomposition, trailing_subspace_vector)
from .svd import jacobi_svd
from .reconstruct import (CglsTrace, ComposedReconstructor,
                          ConstantReconstructor, PseudoInverseReconstructor,
                          Reconstructor, StabilizerReconstructor,
                          StabilizerSpec, StopReason, TikhonovConfig,
                          TikhonovReconstructor, cgls, compose,
                          constant_reconstructor, pseudo_inverse,
                          stabilizer, stacked_min_singular_value, tikhonov)
from .stability import (AdversarialPair, LipschitzBound, NoiseModel,
                        StabilityReport, TrialReport, adversarial_pair,
                        approximation_gap, empirical_accuracy,
                        empirical_stability, error_vs_delta_curve,
                        lipschitz_estimate, lipschitz_lower_bound,
                        repeated_stability, sigma_phi_estimate,
                        stability_radius, tradeoff_lower_bound,
                        write_curve_csv)
from .data import (DatasetSplit, DegradationConfig, GrayImage, degrade,
                   load_manifest, load_pgm, normalize, patchify,
                   save_manifest, save_pgm, split_images, synthesize_images)
from .models import (ConvNetModel, DatasetPairs, LearnedReconstructor,
                     LinearFourierFilter, TrainConfig, TrainMode,
                     as_reconstructor, build_dataset, load_model,
                     loss_and_gradients, mse, save_loss_curve, save_model,
                     train)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
