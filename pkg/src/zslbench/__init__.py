"""Adversarial robustness benchmark for attribute-based zero-shot models.

A compact, fully deterministic pipeline: a frozen affine/tanh feature
extractor plus a trainable label-embedding compatibility matrix, three
white-box attacks (FGSM, DeepFool-L2, Carlini-Wagner-L2), two blind
input-transform defenses (median spatial smoothing, total-variance
minimization) and a training-time label-smoothing defense, evaluated
with ZSL/GZSL per-class accuracies and class-transition analytics.
"""

from .attacks import (ATTACK_PRESETS, AdvResult, AttackConfig, attack_batch,
                      attack_cw_l2, attack_deepfool, attack_fgsm)
from .dataset import (DatasetBundle, SYNTH_PRESETS, SynthConfig,
                      generate_synthetic, load_bundle, save_bundle)
from .defenses import (DEFENSE_PRESETS, DefenseConfig, LabelSmoothingDefense,
                       defend_batch, defend_median, defend_tvm)
from .evaluate import (GzslMetrics, PredictionRecord, defense_effect_categories,
                       gzsl_metrics, per_class_top1, pooled_top1,
                       transition_cf_fc_ff, transition_seen_unseen)
from .harness import (ExperimentConfig, RunLedger, default_config,
                      export_qualitative, run_benchmark, write_reports)
from .model import (AleWeights, FeatureExtractor, TrainConfig, ZslModel,
                    class_score_input_grad, compatibility_scores,
                    extract_features, load_model, loss_and_input_grad,
                    predict, save_model, train_ale)
from .seeding import derive_seed
from .tensorops import (PipelineTrace, affine_forward, pipeline_vjp,
                        tanh_forward)

__version__ = "0.1.0"
