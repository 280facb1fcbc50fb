"""Iterative classification and introspection with class activation maps.

A window is classified from global-average-pooled features, the class
activation map of the decision picks the next, smaller window, and the
evidence gathered along the route is fused into one prediction.
"""

from .cam import (ClassActivationMap, Peak, compute_cam, decomposition_residual, find_peak,
                  propose_subwindow, render_heatmap, render_overlay)
from .classifier import (LinearClassifier, ScoreVector, SVMConfig, concat_normalized,
                         l2_normalize, score, softmax, train_svm)
from .explorer import (ExplorationTree, ExploreConfig, Route, explore, fuse_early,
                       fuse_early_accum, fuse_late, load_tree, select_route, serialize_tree)
from .featurizer import (ExtractorSpec, FeatureMap, extract, filter_bank_spec, gap,
                         load_weights, save_weights, tiny_conv_spec)
from .raster import (Window, crop, read_ppm, resize_bilinear, resize_smaller_side, write_pgm,
                     write_ppm)
from .synthetic import SynthConfig, generate_synthetic
from .trainkit import (ClassifierStack, StackConfig, load_manifest, load_model, save_model,
                       train_stack)

__version__ = "0.1.0"
