"""scikit-learn style wrapper: ``fit`` on noisy/clean pairs, ``transform`` noisy audio."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .metrics import si_sdr
from .model import ModelConfig, load_checkpoint
from .pipeline import enhance_waveform
from .training import LossConfig, OptimConfig, PairDataset, train
from .validation import check_pairs, check_waveforms


class BSDBEnhancer(TransformerMixin, BaseEstimator):
    """Speech enhancer operating on 16 kHz waveforms.

    ``X`` is a list of noisy clips (or a 2-D array, one clip per row) and ``y``
    the matching clean clips. ``transform`` returns enhanced clips with the
    same lengths as the input, as a list or a 2-D array mirroring ``X``.

    ``config`` is a named configuration (``"micro"``, ``"64-4"``, ...), a
    :class:`ModelConfig` or a dict of its fields.
    """

    def __init__(self, config="micro", lr=5e-4, max_steps=500, batch_size=4, val_every=50,
                 plateau_patience=2, beta=0.5, segment_seconds=None, grad_clip=None,
                 seed=0, run_dir=None, identity_mask=False):
        self.config = config
        self.lr = lr
        self.max_steps = max_steps
        self.batch_size = batch_size
        self.val_every = val_every
        self.plateau_patience = plateau_patience
        self.beta = beta
        self.segment_seconds = segment_seconds
        self.grad_clip = grad_clip
        self.seed = seed
        self.run_dir = run_dir
        self.identity_mask = identity_mask

    def _model_config(self):
        if isinstance(self.config, dict):
            return ModelConfig.from_dict(self.config)
        return self.config

    def fit(self, X, y):
        xs, ys = check_pairs(X, y)
        optim = OptimConfig(
            lr=self.lr, max_steps=self.max_steps, batch_size=self.batch_size,
            val_every=self.val_every, plateau_patience=self.plateau_patience,
            grad_clip=self.grad_clip, seed=self.seed,
        )
        result = train(self._model_config(), optim, PairDataset(xs, ys), loss_cfg=LossConfig(self.beta),
                       run_dir=self.run_dir, segment_seconds=self.segment_seconds)
        self.model_ = result.model.eval()
        self.history_ = result.history
        self.best_val_ = result.best_val
        return self

    @classmethod
    def from_checkpoint(cls, path, **params) -> "BSDBEnhancer":
        """A fitted enhancer wrapping the network stored at ``path``."""
        model, _ = load_checkpoint(path)
        est = cls(config=model.cfg, **params)
        est.model_ = model.eval()
        est.history_ = []
        est.best_val_ = float("nan")
        return est

    def transform(self, X):
        check_is_fitted(self, "model_")
        xs = check_waveforms(X)
        out = [enhance_waveform(self.model_, x, self.identity_mask) for x in xs]
        if isinstance(X, np.ndarray):
            return out[0] if X.ndim == 1 else np.stack(out)
        return out

    def predict(self, X):
        return self.transform(X)

    def score(self, X, y):
        """Mean SI-SDR (dB) of the enhanced clips against ``y``."""
        xs, ys = check_pairs(X, y)
        return float(np.mean([si_sdr(e, c) for e, c in zip(self.transform(xs), ys)]))

    @property
    def n_parameters_(self) -> int:
        check_is_fitted(self, "model_")
        return sum(p.numel() for p in self.model_.parameters())

