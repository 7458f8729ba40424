"""Response distributions with their link functions.

Each family works on the linear predictor ``eta`` and exposes the
per-observation log-likelihood together with its first and second
derivatives in ``eta``; the fitter only ever needs those.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import digamma, expit, gammaln, logit, xlogy

_ETA_MAX = 700.0


def _trigamma(x):
    """Trigamma via upward recurrence then the asymptotic series (rel. error < 1e-11)."""
    x = np.array(x, dtype=float)
    acc = np.zeros_like(x)
    small = x < 10.0
    while np.any(small):
        acc[small] += 1.0 / x[small] ** 2
        x[small] += 1.0
        small = x < 10.0
    iz = 1.0 / x
    iz2 = iz * iz
    return acc + iz + 0.5 * iz2 + iz * iz2 * (1 / 6 - iz2 * (1 / 30 - iz2 * (1 / 42 - iz2 / 30)))


@dataclass(frozen=True)
class Family:
    kind = "base"
    dispersion: float = 1.0

    def __post_init__(self):
        if not self.dispersion > 0:
            raise ValueError(f"dispersion must be positive, got {self.dispersion}")

    def with_dispersion(self, value: float) -> "Family":
        return replace(self, dispersion=float(value))

    # link
    def inverse_link(self, eta):
        raise NotImplementedError

    def link(self, mu):
        raise NotImplementedError

    def check_response(self, y) -> None:
        raise NotImplementedError

    def initial_eta(self, y):
        raise NotImplementedError

    # likelihood pieces, all elementwise
    def loglik(self, y, eta):
        raise NotImplementedError

    def dl_deta(self, y, eta):
        raise NotImplementedError

    def d2l_deta2(self, y, eta):
        raise NotImplementedError

    def fisher_weight(self, eta):
        raise NotImplementedError

    def unit_deviance(self, y, eta):
        raise NotImplementedError

    def newton_weights(self, y, eta):
        """Observed curvature ``-d2l/deta2``, with Fisher weights where it is not positive."""
        curv = -self.d2l_deta2(y, eta)
        bad = ~(curv > 0)
        if np.any(bad):
            curv[bad] = self.fisher_weight(eta[bad])
        return curv


@dataclass(frozen=True)
class BetaLogit(Family):
    """Beta regression, mean on the logit scale, precision ``dispersion`` (phi)."""

    kind = "BetaLogit"

    def inverse_link(self, eta):
        return expit(eta)

    def link(self, mu):
        return logit(mu)

    def check_response(self, y):
        if np.any((y <= 0) | (y >= 1)):
            raise ValueError("beta responses must lie strictly inside (0, 1)")

    def initial_eta(self, y):
        return logit(y)

    def _mu(self, eta):
        return np.clip(expit(eta), 1e-15, 1 - 1e-15)

    def _ll(self, y, mu):
        phi = self.dispersion
        return (gammaln(phi) - gammaln(mu * phi) - gammaln((1 - mu) * phi)
                + (mu * phi - 1) * np.log(y) + ((1 - mu) * phi - 1) * np.log1p(-y))

    def loglik(self, y, eta):
        return self._ll(y, self._mu(eta))

    def dl_deta(self, y, eta):
        phi = self.dispersion
        mu = self._mu(eta)
        t = np.log(y) - np.log1p(-y) - digamma(mu * phi) + digamma((1 - mu) * phi)
        return phi * t * mu * (1 - mu)

    def d2l_deta2(self, y, eta):
        phi = self.dispersion
        mu = self._mu(eta)
        g = mu * (1 - mu)
        t = np.log(y) - np.log1p(-y) - digamma(mu * phi) + digamma((1 - mu) * phi)
        return -phi**2 * self._tri(mu) * g**2 + phi * t * g * (1 - 2 * mu)

    def _tri(self, mu):
        phi = self.dispersion
        n = mu.size
        both = _trigamma(np.concatenate([mu * phi, (1 - mu) * phi]))
        return both[:n] + both[n:]

    def fisher_weight(self, eta):
        phi = self.dispersion
        mu = self._mu(eta)
        return phi**2 * self._tri(mu) * (mu * (1 - mu)) ** 2

    def newton_weights(self, y, eta):
        phi = self.dispersion
        mu = self._mu(eta)
        g = mu * (1 - mu)
        fisher = phi**2 * self._tri(mu) * g**2
        t = np.log(y) - np.log1p(-y) - digamma(mu * phi) + digamma((1 - mu) * phi)
        curv = fisher - phi * t * g * (1 - 2 * mu)
        return np.where(curv > 0, curv, fisher)

    def unit_deviance(self, y, eta):
        return 2.0 * (self._ll(y, y) - self.loglik(y, eta))


@dataclass(frozen=True)
class NegativeBinomialLog(Family):
    """Negative binomial counts, log link, size ``dispersion`` (theta)."""

    kind = "NegativeBinomialLog"

    def inverse_link(self, eta):
        return np.exp(np.minimum(eta, _ETA_MAX))

    def link(self, mu):
        return np.log(mu)

    def check_response(self, y):
        if np.any(y < 0):
            raise ValueError("negative binomial responses must be non-negative")

    def initial_eta(self, y):
        return np.log(y + 0.5)

    def loglik(self, y, eta):
        th = self.dispersion
        # log(mu + theta) computed stably in eta
        log_mu_th = np.logaddexp(eta, np.log(th))
        return (gammaln(y + th) - gammaln(th) - gammaln(y + 1)
                + th * np.log(th) + y * eta - (y + th) * log_mu_th)

    def dl_deta(self, y, eta):
        th = self.dispersion
        mu = self.inverse_link(eta)
        return th * (y - mu) / (mu + th)

    def d2l_deta2(self, y, eta):
        th = self.dispersion
        mu = self.inverse_link(eta)
        return -th * mu * (y + th) / (mu + th) ** 2

    def fisher_weight(self, eta):
        th = self.dispersion
        mu = self.inverse_link(eta)
        return th * mu / (mu + th)

    def unit_deviance(self, y, eta):
        th = self.dispersion
        log_mu_th = np.logaddexp(eta, np.log(th))
        return 2.0 * (xlogy(y, y) - y * eta
                      - (y + th) * (np.log(y + th) - log_mu_th))


@dataclass(frozen=True)
class GaussianLog(Family):
    """Normal errors around a log-linked mean, variance ``dispersion`` (sigma^2)."""

    kind = "GaussianLog"

    def inverse_link(self, eta):
        return np.exp(np.minimum(eta, _ETA_MAX))

    def link(self, mu):
        return np.log(mu)

    def check_response(self, y):
        if not np.all(np.isfinite(y)):
            raise ValueError("gaussian responses must be finite")

    def initial_eta(self, y):
        pos = y[y > 0]
        floor = pos.min() * 0.5 if pos.size else 1.0
        return np.log(np.maximum(y, floor))

    def loglik(self, y, eta):
        s2 = self.dispersion
        mu = self.inverse_link(eta)
        return -0.5 * ((y - mu) ** 2 / s2 + np.log(2 * np.pi * s2))

    def dl_deta(self, y, eta):
        mu = self.inverse_link(eta)
        return (y - mu) * mu / self.dispersion

    def d2l_deta2(self, y, eta):
        mu = self.inverse_link(eta)
        return mu * (y - 2 * mu) / self.dispersion

    def fisher_weight(self, eta):
        mu = self.inverse_link(eta)
        return mu**2 / self.dispersion

    def unit_deviance(self, y, eta):
        return (y - self.inverse_link(eta)) ** 2


FAMILIES = {cls.kind: cls for cls in (BetaLogit, NegativeBinomialLog, GaussianLog)}


def family_from_kind(kind: str, dispersion: float = 1.0) -> Family:
    try:
        return FAMILIES[kind](dispersion)
    except KeyError:
        raise ValueError(f"unknown family {kind!r}") from None
