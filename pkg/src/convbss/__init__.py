"""Convolutive blind source separation: FD-ICA, IVA and broadband SOS separation
under one cost-function framework, with structured-matrix identities, oracle
baselines and BSS-eval scoring."""

from .costs import (
    BlockCovarianceSet,
    SourcePrior,
    estimate_block_covariances,
    fdica_cost,
    fdica_grad,
    gaussian_kl_cost,
    iva_cost,
    iva_grad,
    natural_gradient_direction,
    sos_cost,
    trinicon_blocks,
    trinicon_fd_cost,
    trinicon_td_cost,
)
from .errors import ConfigError, FormatError, SingularMatrixError, UnsupportedScenarioError
from .metrics import SeparationReport, bss_eval
from .oracle import build_oracle_demixer, fit_fd_rtf, fit_oracle_models, fit_td_relative_ir
from .scene import RirSet, Scenario, convolve_mix, simulate, synth_rir
from .signal import (
    MultichannelSignal,
    StftConfig,
    TimeFrequencyTensor,
    istft,
    make_window,
    read_wav,
    stft,
    write_wav,
)
from .solvers import (
    SolverConfig,
    SolverReport,
    minimum_distortion_rescale,
    run_auxiva,
    run_fdica,
    run_gradiva,
    run_trinicon_sos,
)
from .structured import FrequencyDomainDemixer, TimeDomainDemixer, relayout_iva

__version__ = "0.1.0"
