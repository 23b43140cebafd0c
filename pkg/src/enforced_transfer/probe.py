"""Critique-based Mahalanobis probe that routes samples to the source or target head."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cell import EtcModels, discriminator_response
from .features import ActivationSet
from .linalg import (
    DEFAULT_RIDGE,
    DimensionError,
    GaussianStats,
    ScalarStats,
    fit_gaussian,
    mahalanobis,
    mahalanobis_batch,
    scalar_stats,
)
from .nn import forward

PROBE_VERSION = 1
SIGMA_FLOOR = 1e-12
SOURCE, TARGET = "source", "target"


@dataclass(frozen=True, eq=False)
class ProbeParams:
    source_stats: GaussianStats
    target_stats: GaussianStats
    source_m_stats: ScalarStats
    target_m_stats: ScalarStats
    lambda_s: float = 2.0
    lambda_t: float = 2.0

    def __post_init__(self):
        if self.source_stats.dim != self.target_stats.dim:
            raise ValueError("source and target critique stats differ in dimension")
        if not (self.lambda_s > 0 and self.lambda_t > 0):
            raise ValueError("lambdas must be positive")

    @property
    def dim(self) -> int:
        return self.source_stats.dim

    def with_lambdas(self, lambda_s: float, lambda_t: float) -> "ProbeParams":
        return ProbeParams(self.source_stats, self.target_stats, self.source_m_stats,
                           self.target_m_stats, lambda_s, lambda_t)

    def __eq__(self, other):
        if not isinstance(other, ProbeParams):
            return NotImplemented
        return (
            self.source_stats == other.source_stats
            and self.target_stats == other.target_stats
            and self.source_m_stats == other.source_m_stats
            and self.target_m_stats == other.target_m_stats
            and self.lambda_s == other.lambda_s
            and self.lambda_t == other.lambda_t
        )


@dataclass(frozen=True)
class Membership:
    in_source: bool
    in_target: bool

    @property
    def kind(self) -> str:
        if self.in_source and self.in_target:
            return "both"
        if self.in_source:
            return "source"
        if self.in_target:
            return "target"
        return "neither"


@dataclass(frozen=True)
class Route:
    branch: str
    membership: Membership
    m_source: float
    m_target: float
    tie_broken: bool


# critiques -----------------------------------------------------------------

def critiques(models: EtcModels, x) -> np.ndarray:
    """Critique rows ``C(E_s(x)) || C(E_t(x))`` for a batch of activations."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != models.e_source.input_dim:
        raise DimensionError(
            f"dimension mismatch: activation dim {x.shape[1]}, encoder expects {models.e_source.input_dim}"
        )
    mode = models.critique_mode
    via_source = discriminator_response(models.discriminator, forward(models.e_source, x), mode)
    via_target = discriminator_response(models.discriminator, forward(models.e_target, x), mode)
    return np.concatenate([via_source, via_target], axis=1)


def critique(models: EtcModels, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionError("critique takes a single activation vector")
    return critiques(models, x)[0]


# fitting -------------------------------------------------------------------

def fit_probe_from_critiques(c_s, c_t, lambda_s=2.0, lambda_t=2.0, ridge=DEFAULT_RIDGE) -> ProbeParams:
    c_s = np.asarray(c_s, dtype=np.float64)
    c_t = np.asarray(c_t, dtype=np.float64)
    if len(c_s) < 2 or len(c_t) < 2:
        raise ValueError("need at least 2 samples per domain to fit the probe")
    source_stats = fit_gaussian(c_s, ridge)
    target_stats = fit_gaussian(c_t, ridge)
    m_s = mahalanobis_batch(c_s, source_stats)
    m_t = mahalanobis_batch(c_t, target_stats)
    return ProbeParams(source_stats, target_stats, scalar_stats(m_s), scalar_stats(m_t),
                       lambda_s, lambda_t)


def fit_probe(models: EtcModels, x_s: ActivationSet, x_t: ActivationSet,
              lambda_s=2.0, lambda_t=2.0, ridge=DEFAULT_RIDGE) -> ProbeParams:
    """Fit both critique Gaussians and the spread of in-domain distances."""
    if len(x_s) < 2 or len(x_t) < 2:
        raise ValueError("need at least 2 samples per domain to fit the probe")
    return fit_probe_from_critiques(critiques(models, x_s.activations),
                                    critiques(models, x_t.activations),
                                    lambda_s, lambda_t, ridge)


# decisions -----------------------------------------------------------------

def _in_band(m, stats: ScalarStats, lam):
    return (stats.mu - lam * stats.sigma <= m) & (m <= stats.mu + lam * stats.sigma)


def _decide(probe: ProbeParams, m_s, m_t):
    """Vectorised decision rule; returns ``(to_target, in_source, in_target, tie)``."""
    in_s = _in_band(m_s, probe.source_m_stats, probe.lambda_s)
    in_t = _in_band(m_t, probe.target_m_stats, probe.lambda_t)
    tie = in_s == in_t
    z_s = np.abs(m_s - probe.source_m_stats.mu) / max(probe.source_m_stats.sigma, SIGMA_FLOOR)
    z_t = np.abs(m_t - probe.target_m_stats.mu) / max(probe.target_m_stats.sigma, SIGMA_FLOOR)
    to_target = np.where(tie, z_t < z_s, in_t)
    return to_target, in_s, in_t, tie


def _check_dim(probe, c):
    c = np.asarray(c, dtype=np.float64)
    if c.shape != (probe.dim,):
        raise DimensionError(f"critique has shape {c.shape}, probe expects ({probe.dim},)")
    return c


def distances(probe: ProbeParams, c) -> tuple[float, float]:
    c = _check_dim(probe, c)
    return mahalanobis(c, probe.source_stats), mahalanobis(c, probe.target_stats)


def membership(probe: ProbeParams, c) -> Membership:
    m_s, m_t = distances(probe, c)
    return Membership(bool(_in_band(m_s, probe.source_m_stats, probe.lambda_s)),
                      bool(_in_band(m_t, probe.target_m_stats, probe.lambda_t)))


def route(probe: ProbeParams, c) -> Route:
    """Unambiguous memberships route directly; both/neither go to the smaller z-deviation.

    An exact z tie goes to the source branch.
    """
    m_s, m_t = distances(probe, c)
    to_target, in_s, in_t, tie = _decide(probe, np.array([m_s]), np.array([m_t]))
    return Route(
        TARGET if to_target[0] else SOURCE,
        Membership(bool(in_s[0]), bool(in_t[0])),
        m_s, m_t, bool(tie[0]),
    )


@dataclass(eq=False)
class BatchRoutes:
    to_target: np.ndarray
    in_source: np.ndarray
    in_target: np.ndarray
    tie_broken: np.ndarray
    m_source: np.ndarray
    m_target: np.ndarray

    def __len__(self):
        return len(self.to_target)

    def membership_counts(self) -> dict:
        s, t = self.in_source, self.in_target
        return {
            "source": int(np.sum(s & ~t)),
            "target": int(np.sum(t & ~s)),
            "both": int(np.sum(s & t)),
            "neither": int(np.sum(~s & ~t)),
        }


def route_critiques(probe: ProbeParams, cs) -> BatchRoutes:
    cs = np.atleast_2d(np.asarray(cs, dtype=np.float64))
    m_s = mahalanobis_batch(cs, probe.source_stats)
    m_t = mahalanobis_batch(cs, probe.target_stats)
    to_target, in_s, in_t, tie = _decide(probe, m_s, m_t)
    return BatchRoutes(to_target, in_s, in_t, tie, m_s, m_t)


def source_labels(models: EtcModels, x) -> np.ndarray:
    return np.argmax(forward(models.d_source, forward(models.e_source, np.atleast_2d(x))), axis=1)


def target_labels(models: EtcModels, x) -> np.ndarray:
    return np.argmax(forward(models.d_target, forward(models.e_target, np.atleast_2d(x))), axis=1)


def classify(models: EtcModels, probe: ProbeParams, x):
    """Label one activation vector with the head its route selects."""
    r = route(probe, critique(models, x))
    pick = target_labels if r.branch == TARGET else source_labels
    return int(pick(models, x)[0]), r


def classify_batch(models: EtcModels, probe: ProbeParams, x):
    """Batched ``classify``: returns ``(labels, BatchRoutes)``."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    routes = route_critiques(probe, critiques(models, x))
    labels = np.where(routes.to_target, target_labels(models, x), source_labels(models, x))
    return labels, routes


# persistence ---------------------------------------------------------------

def _gauss_to_dict(g: GaussianStats) -> dict:
    return {"mean": g.mean.tolist(), "covariance": g.covariance.tolist(),
            "precision": g.precision.tolist(), "ridge": g.ridge}


def _gauss_from_dict(d: dict) -> GaussianStats:
    return GaussianStats(np.array(d["mean"], dtype=np.float64),
                         np.array(d["covariance"], dtype=np.float64),
                         np.array(d["precision"], dtype=np.float64), float(d["ridge"]))


def probe_to_dict(p: ProbeParams) -> dict:
    return {
        "version": PROBE_VERSION,
        "source_stats": _gauss_to_dict(p.source_stats),
        "target_stats": _gauss_to_dict(p.target_stats),
        "source_m_stats": {"mu": p.source_m_stats.mu, "sigma": p.source_m_stats.sigma},
        "target_m_stats": {"mu": p.target_m_stats.mu, "sigma": p.target_m_stats.sigma},
        "lambda_s": p.lambda_s,
        "lambda_t": p.lambda_t,
    }


def probe_from_dict(d: dict) -> ProbeParams:
    if d.get("version") != PROBE_VERSION:
        raise ValueError(f"unsupported probe version {d.get('version')}")
    return ProbeParams(
        _gauss_from_dict(d["source_stats"]),
        _gauss_from_dict(d["target_stats"]),
        ScalarStats(**d["source_m_stats"]),
        ScalarStats(**d["target_m_stats"]),
        float(d["lambda_s"]),
        float(d["lambda_t"]),
    )


def save_probe(p: ProbeParams, path) -> None:
    Path(path).write_text(json.dumps(probe_to_dict(p)))


def load_probe(path) -> ProbeParams:
    return probe_from_dict(json.loads(Path(path).read_text()))
