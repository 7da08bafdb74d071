"""Estimator-style wrappers around the functional matching and flow API.

Each estimator is fitted on the first (reference) image and predicts on the
second one::

    dm = DeepMatching(resolution=0.5).fit(img1)
    matches = dm.predict(img2)
    flow = DeepFlow().fit(img1).predict(img2, matches=matches)
"""

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_image
from .correspondence import MatchParams, deep_matching
from .descriptor import DescriptorParams
from .flow import FlowParams, rasterize_matches, solve_flow
from .invariance import match_invariant


class DeepMatching(BaseEstimator):
    """Dense hierarchical matching from a fitted reference image.

    Parameters
    ----------
    resolution : float
        Working scale in (0, 1]; images are box-downsized by 1/resolution.
    dict_size : int
        Prototype count for approximate mode; 0 selects exact mode.
    lam : float
        Rectification exponent applied to every correlation level.
    nu, varsigma, mu : float
        Descriptor smoothing, sigmoid slope and regularizer.
    seed : int
        Seed of the prototype clustering.
    n_threads : int
        Worker threads for correlation; results do not depend on it.
    """

    def __init__(self, resolution=0.5, dict_size=0, lam=1.4, nu=1.0, varsigma=0.2, mu=0.3, seed=0, n_threads=1):
        self.resolution = resolution
        self.dict_size = dict_size
        self.lam = lam
        self.nu = nu
        self.varsigma = varsigma
        self.mu = mu
        self.seed = seed
        self.n_threads = n_threads

    def _params(self):
        desc = DescriptorParams(nu1=self.nu, nu2=self.nu, nu3=self.nu, sigmoid_slope=self.varsigma, regularizer=self.mu)
        return MatchParams(
            resolution=self.resolution,
            dict_size=self.dict_size,
            lam=self.lam,
            descriptor=desc,
            seed=self.seed,
            n_threads=self.n_threads,
        )

    def fit(self, X, y=None):
        self.params_ = self._params()
        self.reference_ = check_image(X, "reference image")
        return self

    def _match(self, img2):
        return deep_matching(self.reference_, img2, self.params_)

    def predict(self, X):
        """Matches from the reference image to ``X`` as a MatchSet."""
        check_is_fitted(self, "reference_")
        return self._match(check_image(X))

    def transform(self, X):
        """Matches as an ``(n, 5)`` array of ``x1 y1 x2 y2 score`` rows."""
        return self.predict(X).matches

    def fit_predict(self, X, y):
        return self.fit(X).predict(y)


class InvariantDeepMatching(DeepMatching):
    """DeepMatching run over a lattice of scale ratios and rotations."""

    def __init__(self, resolution=0.5, dict_size=0, lam=1.4, nu=1.0, varsigma=0.2, mu=0.3, seed=0, n_threads=1,
                 n_jobs=1):
        super().__init__(resolution, dict_size, lam, nu, varsigma, mu, seed, n_threads)
        self.n_jobs = n_jobs

    def _match(self, img2):
        return match_invariant(self.reference_, img2, self.params_, n_jobs=self.n_jobs)


class DeepFlow(BaseEstimator):
    """Variational optical flow guided by optional sparse matches.

    Parameter names mirror :class:`deepmatch.flow.FlowParams`.
    """

    def __init__(self, alpha=1.0, beta=300.0, gamma=0.8, delta=0.0, sigma=0.5, b=0.6, zeta=0.1,
                 epsilon=0.001, kappa=5.0, sigma_m=50.0, eta=0.95, min_size=16, fp_iters=5,
                 sor_iters=25, sor_omega=1.6):
        self.alpha = alpha
        self.beta = beta
        self.gamma = gamma
        self.delta = delta
        self.sigma = sigma
        self.b = b
        self.zeta = zeta
        self.epsilon = epsilon
        self.kappa = kappa
        self.sigma_m = sigma_m
        self.eta = eta
        self.min_size = min_size
        self.fp_iters = fp_iters
        self.sor_iters = sor_iters
        self.sor_omega = sor_omega

    def fit(self, X, y=None):
        self.params_ = FlowParams(**self.get_params())
        self.reference_ = check_image(X, "reference image")
        return self

    def predict(self, X, matches=None):
        """Flow (H, W, 2) from the reference image to ``X``."""
        check_is_fitted(self, "reference_")
        img2 = check_image(X)
        mf = None
        if matches is not None:
            mf = rasterize_matches(matches, self.reference_, img2, self.params_)
        self.diagnostics_ = {}
        return solve_flow(self.reference_, img2, mf, self.params_, diagnostics=self.diagnostics_)

    def transform(self, X, matches=None):
        return self.predict(X, matches)
