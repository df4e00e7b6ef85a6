"""A scikit-learn style facade over the encoder.

The extractor behaves like a seeded random-feature transformer (in the
spirit of sklearn's GaussianRandomProjection): fit() materializes
deterministic weights from the seed without looking at the data, transform()
runs the forward pass per image and flattens the resulting feature grid.
Research-scale: images are processed one at a time in float64.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .blocks import forward
from .errors import ConfigError
from .factory import ArchConfig, init_weights, override_input, preset
from .tensor import Tensor
from .validation import check_image_batch, check_seed


class UViTFeatureExtractor(BaseEstimator, TransformerMixin):
    """Extract flattened encoder features from images.

    Parameters
    ----------
    config : preset name or ArchConfig, default "uvit-t-dense"
    input_size : evaluate at this resolution instead of the config's native
        one (weights are sized accordingly at fit time)
    seed : weight-initialization seed
    """

    def __init__(self, config="uvit-t-dense", input_size=None, seed=0):
        self.config = config
        self.input_size = input_size
        self.seed = seed

    def _resolve(self) -> ArchConfig:
        cfg = self.config if isinstance(self.config, ArchConfig) else preset(self.config)
        if self.input_size is not None:
            cfg = override_input(cfg, int(self.input_size))
        return cfg

    def fit(self, X=None, y=None):
        """Materialize seeded weights; the data is not consulted."""
        cfg = self._resolve()
        seed = check_seed(self.seed)
        self.config_ = cfg
        self.weights_ = init_weights(cfg, seed)
        if cfg.mode == "classification":
            self.n_features_out_ = 1000
        else:
            grids = ([cfg.tap_extent(i) if s.output_tap is not None else cfg.grid_extent(i)
                      for i, s in enumerate(cfg.stages)]
                     if cfg.mf else [cfg.grid_extent(len(cfg.stages) - 1)])
            hiddens = ([s.hidden for s in cfg.stages] if cfg.mf
                       else [cfg.stages[-1].hidden])
            self.n_features_out_ = sum(g * g * d for g, d in zip(grids, hiddens))
        return self

    def transform(self, X) -> np.ndarray:
        """(n, images) -> (n, n_features_out_) flattened features.

        Dense configs emit the final grid (concatenated taps under MF);
        classification configs emit the 1000 logits.
        """
        check_is_fitted(self, "weights_")
        batch = check_image_batch(X, self.config_.input)
        rows = []
        for image in batch:
            out = forward(self.config_, self.weights_, Tensor(image))
            if self.config_.mode == "classification":
                rows.append(out.logits.data)
            else:
                rows.append(np.concatenate([g.values.data.ravel() for g in out.grids]))
        return np.stack(rows)

    def predict(self, X) -> np.ndarray:
        """Argmax class indices; classification configs only."""
        check_is_fitted(self, "weights_")
        if self.config_.mode != "classification":
            raise ConfigError("predict needs a classification config; "
                              "use transform for dense features")
        return self.transform(X).argmax(axis=1)
