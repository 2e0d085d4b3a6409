"""Quantum cartpole benchmark: stabilize a wavepacket on an inverted
potential from weak measurements, with a calibrated classical surrogate,
an LQG control stack, and a wire protocol for external agents."""

__version__ = "0.1.0"

from .errors import (BackactionError, CalibrationError, ConfigurationError,
                     EstimatorFault, GainFault, ProtocolError, QCartpoleError)
from .params import SimParams
from .potentials import Potential, default_potential
from .quantum import (Grid, Observables, Wavefunction, apply_kick, evolve,
                      init_wavepacket, observables, prob_outside)
from .measurement import (MeasurementConfig, MeasurementOutcome,
                          apply_backaction, measure, sample_outcome)
from .surrogate import (ClassicalState, LinearModel, NoiseModel,
                        SurrogateStepper, build_model, calibrate_noise,
                        load_noise, save_noise, step)
from .estimators import (DecorrelatedModel, EstimatorState, compound_block,
                         decorrelate, default_prior, ekf_step, kf_decorr_step,
                         kf_step)
from .lqr import LqrGain, LqrWeights, control, solve_gain, weights_for
from .episode import (BatchSummary, ControllerBinding, EpisodeResult,
                      EpisodeRunner, HistogramPair, collect_histograms,
                      run_batch, run_episode)
from .protocol import EnvSpec, Session, serve_lines, serve_socket, serve_stdio

__all__ = [name for name in dir() if not name.startswith("_")]
