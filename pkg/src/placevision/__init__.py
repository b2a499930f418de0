"""Visual place classification toolkit.

Color histograms and SIFT-family local features feed a bag-of-visual-
words model; histogram dissimilarity measures, a thresholded nearest-
neighbor classifier with an UNKNOWN option, and one-vs-all kernel SVMs
do the room recognition.  The `placevision` CLI batches the full
pipeline over image manifests.
"""

from .image import GrayImage, HsvPixel, Image, PnmError, load_pnm, write_pnm
from .histograms import FeatureHistogram, hsv_histogram, normalize_l1, rgb_histogram
from .distances import emd, get_measure
from .sift import Descriptor, Keypoint, SiftParams, extract_rgb_sift, extract_sift
from .asift import AffineView, asift_views, extract_asift
from .bovw import BowVector, Vocabulary, encode_image, incremental_vocab, kmeans, quantize
from .classify import (
    CompositeFeature,
    CompositePart,
    GaParams,
    KernelSpec,
    SvmModel,
    ThresholdSet,
    UNKNOWN,
    composite_distance,
    ga_optimize_thresholds,
    kernel,
    nn_classify,
    ova_predict,
    ova_train,
    svm_train,
)
from .evaluate import EvalReport, build_report, confusion_matrix, metrics, pr_curve, write_report

__version__ = "0.1.0"

__all__ = [
    "AffineView",
    "BowVector",
    "CompositeFeature",
    "CompositePart",
    "Descriptor",
    "EvalReport",
    "FeatureHistogram",
    "GaParams",
    "GrayImage",
    "HsvPixel",
    "Image",
    "KernelSpec",
    "Keypoint",
    "PnmError",
    "SiftParams",
    "SvmModel",
    "ThresholdSet",
    "UNKNOWN",
    "Vocabulary",
    "asift_views",
    "build_report",
    "composite_distance",
    "confusion_matrix",
    "emd",
    "encode_image",
    "extract_asift",
    "extract_rgb_sift",
    "extract_sift",
    "ga_optimize_thresholds",
    "get_measure",
    "hsv_histogram",
    "incremental_vocab",
    "kernel",
    "kmeans",
    "load_pnm",
    "metrics",
    "nn_classify",
    "normalize_l1",
    "ova_predict",
    "ova_train",
    "pr_curve",
    "quantize",
    "rgb_histogram",
    "svm_train",
    "write_pnm",
    "write_report",
]
