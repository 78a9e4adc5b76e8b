"""Fast two-branch stereo matching network and its verification toolkit."""

from .aggregation import (AggregationHead, HeadConfig, HeadOutputs, ModelConfig,
                          StereoModel, regress_disparity, soft_argmax)
from .backbone import (BackboneConfig, FeatureMap, ImageBatch, StereoBackbone,
                       standardize)
from .config import RunConfig, apply_preset, load_config
from .cost_volume import (AttentionWeights, CostVolume, CostVolumeBuilder,
                          CostVolumeConfig, apply_attention, build_concat_volume,
                          build_gwc_volume)
from .data import (DatasetSpec, StereoSample, generate_synthetic_pair, preprocess,
                   read_kitti_disparity, read_pfm, write_pfm)
from .losses import LossConfig, logl1_loss, multi_output_loss, validity_mask
from .metrics import MetricsReport, combine_reports, metrics_report
from .profiler import BenchmarkResult, ProfileReport, benchmark_inference, count_parameters

__version__ = "0.1.0"
