"""sklearn-style estimator facade.

Two estimators wrap the pipeline so it composes with the wider
ecosystem (``get_params``/``set_params``, ``clone``, pipelines):

* :class:`TrussStateEstimator` -- ``fit`` optionally self-tunes model
  and filter parameters against a recorded run, ``predict`` runs the
  multi-rate fusion filter over a sensor log and returns displacement
  estimates.
* :class:`GreedyGaugeSelector` -- ``fit`` computes the Gramian-based
  removal order for a model, ``transform`` selects the retained gauge
  columns from a sample matrix, sklearn feature-selection style.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import config as config_mod
from .model import AXES
from .placement import greedy_prune
from .simulate import SensorLog, channel_estimates, run_estimator
from .tuning import PARAM_ORDER, TuningProblem, tune


class TrussStateEstimator(BaseEstimator):
    """Multi-rate truss state estimator with optional self-tuning fit.

    Parameters mirror the experiment configuration; passing a recorded
    ``SensorLog`` to :meth:`fit` runs the bounded derivative-free tuner
    against the configured reference channels, otherwise ``fit`` just
    assembles the model.  :meth:`predict` consumes a ``SensorLog`` and
    returns displacement estimates at the requested channels.
    """

    def __init__(self, config=None, tune_on_fit=True, tune_free=None,
                 max_evals=300, n_starts=2, seed=0,
                 channels=config_mod.DEFAULT_LDV_CHANNELS):
        self.config = config
        self.tune_on_fit = tune_on_fit
        self.tune_free = tune_free
        self.max_evals = max_evals
        self.n_starts = n_starts
        self.seed = seed
        self.channels = channels

    def _config(self):
        return self.config if self.config is not None else config_mod.default_config()

    def fit(self, X=None, y=None):
        """Assemble the model; self-tune when X is a recorded SensorLog."""
        cfg = self._config().validate()
        if X is not None and self.tune_on_fit:
            if not isinstance(X, SensorLog):
                raise TypeError("fit expects a SensorLog recorded with the "
                                "same configuration")
            base = {k: _config_value(cfg, k) for k in PARAM_ORDER}
            problem = TuningProblem(config=cfg, log=X, base=base)
            result = tune(problem, free=self.tune_free,
                          max_evals=self.max_evals, n_starts=self.n_starts,
                          seed=self.seed)
            self.tuning_result_ = result
            cfg = _apply_physical(cfg, result.p_physical)
        self.config_ = cfg
        (self.model_, self.basis_, self.statespace_, self.gauges_,
         self.camera_, self.gauge_model_) = config_mod.build_components(cfg)
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("call fit before predict/score")

    def predict(self, X: SensorLog, channels=None):
        """Displacement estimates, (n_ticks, n_channels)."""
        self._check_fitted()
        cfg = self.config_
        trace = run_estimator(
            self.statespace_, self.gauge_model_, X, self.camera_,
            q=cfg.q, P0=cfg.p0_diag, highpass=(cfg.highpass_fc_hz, cfg.f_sg_hz),
            fused_channel_idx=config_mod.fused_channel_indices(cfg, self.camera_),
            track_health=False, lag_noise_scale=cfg.oosm_lag_noise_scale)
        chans = channels if channels is not None else self.channels
        idx = [self.model_.dof_index(int(n), AXES.index(a)) for n, a in chans]
        return channel_estimates(trace, self.basis_.phi, idx)

    def score(self, X: SensorLog, y=None):
        """Negative mean absolute error against the log's reference taps."""
        self._check_fitted()
        est = self.predict(X, channels=X.ldv_channels)
        return -float(np.mean(np.abs(est - X.ldv)))


def _config_value(cfg, name):
    return {"alpha0": cfg.alpha0_per_s, "alpha1": cfg.alpha1_s,
            "k_b": cfg.k_b_n_per_m, "k_ca": cfg.k_ca_n_per_m,
            "k_cp": cfg.k_cp_n_per_m, "q": cfg.q, "r_b": cfg.r_b_n2,
            "r_c": cfg.r_c_n2, "r_t": cfg.r_t_m2}[name]


def _apply_physical(cfg, phys):
    return cfg.replace(alpha0_per_s=phys["alpha0"], alpha1_s=phys["alpha1"],
                       k_b_n_per_m=phys["k_b"], k_ca_n_per_m=phys["k_ca"],
                       k_cp_n_per_m=phys["k_cp"], q=phys["q"],
                       r_b_n2=phys["r_b"], r_c_n2=phys["r_c"],
                       r_t_m2=phys["r_t"])


class GreedyGaugeSelector(BaseEstimator):
    """Strain-gauge subset selection by observability Gramian trace.

    ``fit`` accepts the experiment configuration's built components (or
    uses defaults) and records the greedy removal order; ``get_support``
    and ``transform`` then behave like sklearn feature selection over
    gauge sample columns.
    """

    def __init__(self, n_gauges=40, config=None):
        self.n_gauges = n_gauges
        self.config = config

    def fit(self, X=None, y=None):
        cfg = self.config if self.config is not None else config_mod.default_config()
        if X is None:
            _, _, ss, gauges, _, _ = config_mod.build_components(cfg)
        else:
            ss, gauges = X  # (ModalStateSpace, StrainGaugeSet)
        if not 0 <= self.n_gauges <= gauges.n_sg:
            raise ValueError(f"n_gauges must be in 0..{gauges.n_sg}")
        result = greedy_prune(ss.F, ss.H0, gauges.element_ids, C_t=ss.C_t,
                              target_n_sg=0)
        self.placement_ = result
        self.element_ids_ = gauges.element_ids
        self.selected_ids_ = result.retained(self.n_gauges)
        return self

    def _check_fitted(self):
        if not hasattr(self, "placement_"):
            raise NotFittedError("call fit before transform/get_support")

    def get_support(self, indices=False):
        self._check_fitted()
        mask = np.array([eid in set(self.selected_ids_)
                         for eid in self.element_ids_])
        return np.flatnonzero(mask) if indices else mask

    def transform(self, X):
        """Select retained gauge columns from (n_ticks, n_sg) samples."""
        self._check_fitted()
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != len(self.element_ids_):
            raise ValueError(f"X has {X.shape[1]} columns, expected "
                             f"{len(self.element_ids_)} gauge channels")
        return X[:, self.get_support(indices=True)]
