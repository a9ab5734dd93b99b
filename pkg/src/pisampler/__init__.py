"""Path-integral sampling: controlled diffusions trained to hit a target density."""
from .baselines import HmcConfig, SmcConfig, hmc_sample, smc_annealed
from .errors import (ConfigurationError, EstimationError, IncompatibleDataError, PISError,
                     SimulationError, TrainingError, UsageError)
from .estimator import HMCSampler, PathIntegralSampler, SMCSampler
from .estimators import (WeightedSamples, ess_fraction, log_z_elbo, log_z_is,
                         read_samples_csv, sample_weighted, write_samples_csv)
from .metrics import moment_report, sliced_w2, w2_1d
from .policy import (GaussianOraclePolicy, NeuralPolicy, ZeroPolicy, gaussian_oracle,
                     load_policy, make_policy, pi_control_mc, pi_value_mc, save_policy)
from .sde import SdeConfig, simulate, simulate_batch
from .targets import (funnel_target, gaussian_target, lgcp_target, make_target, mog_target,
                      rings_target)
from .trainer import TrainConfig, train

__version__ = "0.1.0"
