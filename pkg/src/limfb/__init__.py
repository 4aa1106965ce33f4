"""Limited-feedback multi-user MIMO downlink simulation lab.

Compares mixture-model-based feedback (component index by responsibility,
precoding from directional representatives or generated samples) against
DFT-codebook feedback over estimated CSI, end to end: scene generation,
mixture training with full or block-Toeplitz covariances, feedback
inference, RCI and stochastic WMMSE precoding, and sum-rate sweeps.
"""

from .estimators import (build_omp_dictionary, estimate_gmm, estimate_lmmse,
                         estimate_omp)
from .evaluate import (Experiment, ExperimentConfig, SweepResult, dump_raw,
                       emit_csv, export_trajectory_csv, run_constellation,
                       run_sweep, sum_rate)
from .feedback import (Codebook, FeedbackReport, PilotSetup,
                       build_dft_codebook, build_pilot_matrix,
                       gmm_feedback_index, gmm_feedback_index_perfect,
                       observe, select_codebook_index)
from .gmm import (EmOptions, GmmModel, ObservationGmm, fit_em, load_model,
                  log_density, param_count, project_to_observation,
                  responsibilities, sample_component, save_model)
from .precoding import (PrecoderSet, SwmmseOptions, directional_representative,
                        directional_representatives, rci_precoders,
                        swmmse_precoders)
from .scene import (ArrayGeometry, ChannelDataset, SceneConfig,
                    generate_channels, load_dataset, load_scene_config,
                    normalize_dataset, save_dataset, steering_vector)
from .toeplitz import check_structure, realize_spectral, toeplitz_mstep

__version__ = "0.1.0"
