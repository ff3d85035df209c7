"""Scikit-learn style estimators wrapping the single-image denoisers.

Both estimators perform test-time training: ``fit(X)`` trains the network on
the noisy image ``X`` itself and ``transform(X)`` applies masked-ensemble
inference with the fitted model.  ``fit_transform(X)`` is the normal way to
denoise an image.  Parameters follow the scikit-learn convention (stored
verbatim in ``__init__``, validated in ``fit``) so the estimators work with
``get_params``/``set_params``/``clone``.
"""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from mash import seeds
from mash.image_io import as_image
from mash.network import NetConfig
from mash.pipeline import pad_to_multiple, run_baseline, run_mash
from mash.training import MashConfig, ensemble_predict


class _SingleImageDenoiser(TransformerMixin, BaseEstimator):
    """Shared fit/transform plumbing for the fixed and adaptive denoisers."""

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError(
                f"This {type(self).__name__} instance is not fitted yet; call fit first."
            )

    def _net_config(self):
        return NetConfig(
            in_channels=self._fit_channels_,
            base_width=self.base_width,
            depth=self.depth,
            leaky_slope=self.leaky_slope,
            reduced=self.reduced,
        )

    def transform(self, X):
        """Masked-ensemble prediction with the fitted model."""
        self._check_fitted()
        img = as_image(X, min_size=8)
        if img.shape[2] != self._fit_channels_:
            raise ValueError(
                f"expected {self._fit_channels_} channels, got {img.shape[2]}"
            )
        y_pad, size = pad_to_multiple(img, self.model_.config.spatial_multiple)
        rng = seeds.stream_rng(self._config_.seed, seeds.STREAM_ENSEMBLE, 1)
        out = ensemble_predict(
            self.model_, y_pad, self.tau_optimal_, self.ensemble_size, rng
        )
        return out[: size[0], : size[1], :]


class MashDenoiser(_SingleImageDenoiser):
    """Adaptive masked-and-shuffled blind-spot denoiser for a single image.

    Fitting runs two warm-up trainings to measure the noise-level estimation
    gap, picks the masking ratio (and whether to shuffle flat regions), then
    trains the final model.  Fitted attributes expose the decision record:
    ``sigma_low_``, ``sigma_high_``, ``epsilon_``, ``tau_optimal_``,
    ``shuffle_enabled_`` and the full ``report_``.
    """

    def __init__(
        self,
        tau_low=0.2,
        tau_medium=0.5,
        tau_high=0.8,
        eps_low=1.5,
        eps_high=2.5,
        iters=800,
        split_iter=400,
        warmup_iters=800,
        ensemble_size=10,
        tile_size=4,
        flat_threshold=5.0,
        sigma_window=50,
        base_lr=1e-4,
        floor_lr=1e-6,
        base_width=48,
        depth=5,
        leaky_slope=0.1,
        reduced=False,
        seed=0,
    ):
        self.tau_low = tau_low
        self.tau_medium = tau_medium
        self.tau_high = tau_high
        self.eps_low = eps_low
        self.eps_high = eps_high
        self.iters = iters
        self.split_iter = split_iter
        self.warmup_iters = warmup_iters
        self.ensemble_size = ensemble_size
        self.tile_size = tile_size
        self.flat_threshold = flat_threshold
        self.sigma_window = sigma_window
        self.base_lr = base_lr
        self.floor_lr = floor_lr
        self.base_width = base_width
        self.depth = depth
        self.leaky_slope = leaky_slope
        self.reduced = reduced
        self.seed = seed

    def _mash_config(self):
        return MashConfig(
            tau_low=self.tau_low,
            tau_medium=self.tau_medium,
            tau_high=self.tau_high,
            eps_low=self.eps_low,
            eps_high=self.eps_high,
            iters=self.iters,
            split_iter=self.split_iter,
            warmup_iters=self.warmup_iters,
            ensemble_size=self.ensemble_size,
            tile_size=self.tile_size,
            flat_threshold=self.flat_threshold,
            sigma_window=self.sigma_window,
            base_lr=self.base_lr,
            floor_lr=self.floor_lr,
            seed=self.seed,
            net=self._net_config(),
        )

    def fit(self, X, y=None):
        """Train on the noisy image ``X`` (``y`` is ignored)."""
        img = as_image(X, min_size=8)
        self._fit_channels_ = img.shape[2]
        cfg = self._mash_config()
        denoised, report = run_mash(img, cfg)
        self._config_ = cfg
        self.model_ = report.model
        self.report_ = report
        self.gap_ = report.gap
        self.sigma_low_ = report.gap.sigma_low
        self.sigma_high_ = report.gap.sigma_high
        self.epsilon_ = report.gap.epsilon
        self.tau_optimal_ = report.gap.tau_optimal
        self.shuffle_enabled_ = report.gap.shuffle_enabled
        self.denoised_ = denoised
        return self


class BaselineDenoiser(_SingleImageDenoiser):
    """Fixed-masking-ratio blind-spot denoiser (optionally with shuffling)."""

    def __init__(
        self,
        tau=0.5,
        lps=False,
        iters=800,
        split_iter=400,
        ensemble_size=10,
        tile_size=4,
        flat_threshold=5.0,
        sigma_window=50,
        base_lr=1e-4,
        floor_lr=1e-6,
        base_width=48,
        depth=5,
        leaky_slope=0.1,
        reduced=False,
        seed=0,
    ):
        self.tau = tau
        self.lps = lps
        self.iters = iters
        self.split_iter = split_iter
        self.ensemble_size = ensemble_size
        self.tile_size = tile_size
        self.flat_threshold = flat_threshold
        self.sigma_window = sigma_window
        self.base_lr = base_lr
        self.floor_lr = floor_lr
        self.base_width = base_width
        self.depth = depth
        self.leaky_slope = leaky_slope
        self.reduced = reduced
        self.seed = seed

    def fit(self, X, y=None):
        img = as_image(X, min_size=8)
        self._fit_channels_ = img.shape[2]
        cfg = MashConfig(
            iters=self.iters,
            split_iter=self.split_iter,
            ensemble_size=self.ensemble_size,
            tile_size=self.tile_size,
            flat_threshold=self.flat_threshold,
            sigma_window=self.sigma_window,
            base_lr=self.base_lr,
            floor_lr=self.floor_lr,
            seed=self.seed,
            net=self._net_config(),
        )
        denoised, report = run_baseline(img, self.tau, cfg, lps=self.lps)
        self._config_ = cfg
        self.model_ = report.model
        self.report_ = report
        self.tau_optimal_ = self.tau
        self.denoised_ = denoised
        return self
