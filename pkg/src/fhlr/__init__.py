"""fhlr: a noisy-label learning lab for wearable time-series classification.

Three-stage pipeline: seed training on smoothed noisy labels with EMA,
few-shot fine-tuning on expert-corrected labels, and weighted parameter
merging of the two models. Ships with a configurable class-conditional noise
model, acquisition strategies, a simulated annotator panel, eight comparison
baselines, preset experiment grids, and a live annotation HTTP service.
"""

__version__ = "0.1.0"

from .noise import (CorruptionRecord, NoiseMatrix, NoiseSpec,  # noqa: F401
                    build_noise_matrix, corrupt_labels, measured_level,
                    measured_sparsity)
from .data import (SyntheticSpec, WindowedDataset, load_canonical,  # noqa: F401
                   make_synthetic, normalize_mean, save_canonical,
                   split_dataset, window_signal)
from .network import (ArchitectureSpec, ModelState,  # noqa: F401
                      ParameterVector, build_model, flatten, forward,
                      load_checkpoint, save_checkpoint, unflatten)
from .losses import LossSpec, compute_loss, mixup_batch  # noqa: F401
from .training import (ExpertSet, TrainConfig, ema_update,  # noqa: F401
                       fine_tune, smooth_targets, train_baseline, train_seed)
from .acquisition import AcquisitionSpec, score_uncertainty, select_batch  # noqa: F401
from .oracle import (AnnotatorPanel, fleiss_kappa, oracle_labels,  # noqa: F401
                     panel_annotate)
from .merging import (FisherVector, MergeSpec, ensemble_predict,  # noqa: F401
                      estimate_fisher, merge_fisher, merge_weighted)
from .confident import (ConfidentJoint, estimate_joint,  # noqa: F401
                        oof_probabilities, prune_and_retrain)
from .runner import (ExperimentConfig, RunReport, evaluate,  # noqa: F401
                     run_pipeline, run_preset)
