"""Multi-target tracking on cluster centroids: GM-PHD and MBM filters.

Both filters share the linear-Gaussian constant-velocity motion model, the
position-only measurement model, the layout-based birth model, and the
post-processing stages (prune, cap, merge).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace

import numpy as np

_psd_repairs = 0


def psd_repair_count():
    """Number of covariance repairs (jitter added) since import."""
    return _psd_repairs


def _ensure_psd(p):
    global _psd_repairs
    p = 0.5 * (p + p.T)
    try:
        np.linalg.cholesky(p)
        return p
    except np.linalg.LinAlgError:
        _psd_repairs += 1
        return p + 1e-9 * max(float(np.trace(p)), 1.0) * np.eye(p.shape[0])


@dataclass(frozen=True)
class StateVector:
    x_m: float
    y_m: float
    vx_mps: float
    vy_mps: float

    @classmethod
    def from_array(cls, a):
        return cls(float(a[0]), float(a[1]), float(a[2]), float(a[3]))

    def as_array(self):
        return np.array([self.x_m, self.y_m, self.vx_mps, self.vy_mps])

    @property
    def position(self):
        return np.array([self.x_m, self.y_m])


@dataclass(frozen=True)
class MotionModel:
    scan_period_s: float = 0.05
    process_noise_scale: float = 5.0     # alpha_q
    survival_prob: float = 0.9
    detection_prob: float = 0.99
    clutter_intensity: float = 0.1       # expected clutter measurements per scan
    surveillance_area_m2: float = 1600.0

    @property
    def transition(self):
        f = np.eye(4)
        f[0, 2] = f[1, 3] = self.scan_period_s
        return f

    @property
    def process_noise(self):
        return self.process_noise_scale * self.scan_period_s * np.eye(4)

    @property
    def measurement(self):
        return np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]])

    @property
    def clutter_density(self):
        """Clutter spatial density: intensity spread uniformly over the area."""
        return self.clutter_intensity / self.surveillance_area_m2


@dataclass(eq=False)
class GaussianComponent:
    weight: float
    mean: np.ndarray
    cov: np.ndarray
    track_id: int
    class_label: str | None = None


@dataclass(eq=False)
class Bernoulli:
    existence: float
    mean: np.ndarray
    cov: np.ndarray
    track_id: int
    class_label: str | None = None


@dataclass(eq=False)
class GlobalHypothesis:
    weight: float
    bernoullis: list


@dataclass
class MbmDistribution:
    hypotheses: list

    @classmethod
    def empty(cls):
        return cls([GlobalHypothesis(weight=1.0, bernoullis=[])])

    def best_hypothesis(self):
        return max(self.hypotheses, key=lambda h: h.weight)


@dataclass(frozen=True)
class BirthComponent:
    mean: np.ndarray
    cov: np.ndarray
    weight: float  # PHD intensity weight; reused as Bernoulli existence


@dataclass(frozen=True)
class BirthModel:
    components: tuple

    @classmethod
    def from_sites(cls, sites, weight=0.05, cov_scale=0.1,
                   recovery_center=(0.0, 0.0), recovery_weight=0.05,
                   recovery_cov_scale=5.0):
        """Birth components at layout-prior positions plus one broad recovery
        component centered in the surveillance area."""
        comps = []
        for site in sites:
            mean = np.array([site[0], site[1], 0.0, 0.0])
            comps.append(BirthComponent(mean=mean, cov=cov_scale * np.eye(4), weight=weight))
        mean = np.array([recovery_center[0], recovery_center[1], 0.0, 0.0])
        comps.append(BirthComponent(mean=mean, cov=recovery_cov_scale * np.eye(4),
                                    weight=recovery_weight))
        return cls(tuple(comps))


@dataclass(frozen=True)
class TrackerConfig:
    phd_prune_thresh: float = 1e-4       # gamma_p
    phd_cap: int = 10                    # gamma_q
    mbm_bernoulli_prune: float = 1e-4    # gamma_l
    mbm_global_prune: float = 1e-15      # gamma_g
    mbm_cap: int = 10                    # gamma_c
    mbm_assoc_gate: float = 14.0         # xi_a, squared Mahalanobis distance
    mbm_existence_thresh: float = 0.99   # gamma_e
    merge_thresh: float = 5.0            # gamma_m


# --- Kalman primitives ---------------------------------------------------

def kalman_predict(mean, cov, model):
    f = model.transition
    return f @ mean, _ensure_psd(f @ cov @ f.T + model.process_noise)


def kalman_update(mean, cov, z, r, model):
    """Linear-Gaussian update; returns (mean, cov, likelihood of z)."""
    h = model.measurement
    s = h @ cov @ h.T + r
    s = 0.5 * (s + s.T)
    try:
        chol = np.linalg.cholesky(s)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("singular innovation covariance") from exc
    innov = np.asarray(z, dtype=float) - h @ mean
    gain = cov @ h.T @ np.linalg.inv(s)
    new_mean = mean + gain @ innov
    ikh = np.eye(4) - gain @ h
    new_cov = _ensure_psd(ikh @ cov @ ikh.T + gain @ r @ gain.T)
    white = np.linalg.solve(chol, innov)
    det = chol[0, 0] ** 2 * chol[1, 1] ** 2
    lik = math.exp(-0.5 * float(white @ white)) / (2.0 * math.pi * math.sqrt(det))
    return new_mean, new_cov, lik


def _mahalanobis_sq(mean, cov, z, r, model):
    h = model.measurement
    s = h @ cov @ h.T + r
    innov = np.asarray(z, dtype=float) - h @ mean
    return float(innov @ np.linalg.solve(0.5 * (s + s.T), innov))


def _moment_merge(weights, means, covs):
    """Moment-matched merge normalized by the summed weight."""
    w = float(np.sum(weights))
    mu = np.sum([wi * mi for wi, mi in zip(weights, means)], axis=0) / w
    p = np.zeros((4, 4))
    for wi, mi, pi in zip(weights, means, covs):
        d = mi - mu
        p += wi * (pi + np.outer(d, d))
    return w, mu, _ensure_psd(p / w)


# --- GM-PHD ---------------------------------------------------------------

def phd_predict(mixture, model, birth, id_alloc):
    """Survival-scaled Kalman prediction of every component plus births."""
    out = []
    for c in mixture:
        mean, cov = kalman_predict(c.mean, c.cov, model)
        out.append(GaussianComponent(weight=c.weight * model.survival_prob,
                                     mean=mean, cov=cov, track_id=c.track_id,
                                     class_label=c.class_label))
    for b in birth.components:
        out.append(GaussianComponent(weight=b.weight, mean=b.mean.copy(),
                                     cov=b.cov.copy(), track_id=next(id_alloc)))
    return out


def phd_update(mixture, measurements, model):
    """GM-PHD measurement update; component count becomes H * (M + 1)."""
    p_d = model.detection_prob
    out = [GaussianComponent(weight=c.weight * (1.0 - p_d), mean=c.mean.copy(),
                             cov=c.cov.copy(), track_id=c.track_id,
                             class_label=c.class_label)
           for c in mixture]
    for j in range(len(measurements)):
        z = measurements.centroids_m[j]
        r = measurements.covariances[j]
        updated = []
        for c in mixture:
            mean, cov, lik = kalman_update(c.mean, c.cov, z, r, model)
            updated.append((p_d * c.weight * lik, mean, cov, c))
        denom = model.clutter_density + sum(u[0] for u in updated)
        for w, mean, cov, parent in updated:
            out.append(GaussianComponent(weight=w / denom, mean=mean, cov=cov,
                                         track_id=parent.track_id,
                                         class_label=parent.class_label))
    return out


def phd_estimate(mixture):
    """Means of the round(sum of weights) highest-weight components."""
    total = sum(c.weight for c in mixture)
    n_hat = int(round(total))
    ranked = sorted(mixture, key=lambda c: (-c.weight, c.track_id))
    return ranked[:max(n_hat, 0)]


def phd_postprocess(mixture, config):
    """Prune by weight, cap to the strongest, merge nearby components."""
    kept = [c for c in mixture if c.weight >= config.phd_prune_thresh]
    kept.sort(key=lambda c: (-c.weight, c.track_id))
    kept = kept[:config.phd_cap]
    merged = []
    while kept:
        head = kept[0]
        group = [c for c in kept if np.linalg.norm(c.mean - head.mean) < config.merge_thresh]
        w, mu, p = _moment_merge([c.weight for c in group],
                                 [c.mean for c in group], [c.cov for c in group])
        merged.append(GaussianComponent(weight=w, mean=mu, cov=p,
                                        track_id=head.track_id,
                                        class_label=head.class_label))
        kept = [c for c in kept if c not in group]
    return merged


# --- MBM -------------------------------------------------------------------

def mbm_predict(dist, model, birth, id_alloc):
    """Survival-scaled prediction of every Bernoulli; births join every
    hypothesis under shared fresh track ids."""
    birth_ids = [next(id_alloc) for _ in birth.components]
    hyps = []
    for hyp in dist.hypotheses:
        berns = []
        for b in hyp.bernoullis:
            mean, cov = kalman_predict(b.mean, b.cov, model)
            berns.append(Bernoulli(existence=b.existence * model.survival_prob,
                                   mean=mean, cov=cov, track_id=b.track_id,
                                   class_label=b.class_label))
        for bc, tid in zip(birth.components, birth_ids):
            berns.append(Bernoulli(existence=bc.weight, mean=bc.mean.copy(),
                                   cov=bc.cov.copy(), track_id=tid))
        hyps.append(GlobalHypothesis(weight=hyp.weight, bernoullis=berns))
    return MbmDistribution(hyps)


def _missed_bernoulli(b, model):
    p_d = model.detection_prob
    denom = 1.0 - b.existence * p_d
    return Bernoulli(existence=b.existence * (1.0 - p_d) / denom,
                     mean=b.mean.copy(), cov=b.cov.copy(), track_id=b.track_id,
                     class_label=b.class_label), denom


def _enumerate_associations(n_meas, eligible):
    """All ways to map each measurement to clutter (-1) or an unused Bernoulli."""
    def rec(j, used):
        if j == n_meas:
            yield []
            return
        for tail in rec(j + 1, used):
            yield [-1] + tail
        for l in eligible[j]:
            if l in used:
                continue
            used.add(l)
            for tail in rec(j + 1, used):
                yield [l] + tail
            used.discard(l)
    yield from rec(0, set())


def mbm_update(dist, measurements, model, config):
    """Enumerate gated measurement-to-Bernoulli associations per hypothesis.

    Child weights are parent weight times the association likelihood (clutter
    terms use the clutter density); weights are normalized jointly, then
    children below the global prune threshold are dropped and the rest
    renormalized.
    """
    m = len(measurements)
    kappa = model.clutter_density
    p_d = model.detection_prob
    children = []
    for hyp in dist.hypotheses:
        berns = hyp.bernoullis
        n_b = len(berns)
        eligible = []
        upd = {}
        for j in range(m):
            z = measurements.centroids_m[j]
            r = measurements.covariances[j]
            ok = []
            for l in range(n_b):
                if _mahalanobis_sq(berns[l].mean, berns[l].cov, z, r, model) <= config.mbm_assoc_gate:
                    mean, cov, lik = kalman_update(berns[l].mean, berns[l].cov, z, r, model)
                    upd[(l, j)] = (mean, cov, lik)
                    ok.append(l)
            eligible.append(ok)
        missed = [_missed_bernoulli(b, model) for b in berns]
        base_weight = hyp.weight * math.prod(d for _, d in missed)
        for assoc in _enumerate_associations(m, eligible):
            w = base_weight
            new_berns = [mb for mb, _ in missed]
            for j, l in enumerate(assoc):
                if l < 0:
                    w *= kappa
                    continue
                mean, cov, lik = upd[(l, j)]
                # replace the missed factor with the detection term
                w *= berns[l].existence * p_d * lik / missed[l][1]
                new_berns = list(new_berns)
                new_berns[l] = Bernoulli(existence=1.0, mean=mean, cov=cov,
                                         track_id=berns[l].track_id,
                                         class_label=berns[l].class_label)
            children.append(GlobalHypothesis(weight=w, bernoullis=list(new_berns)))
    total = sum(h.weight for h in children)
    if total <= 0.0:
        raise RuntimeError("all association hypotheses vanished")
    for h in children:
        h.weight /= total
    kept = [h for h in children if h.weight >= config.mbm_global_prune]
    if not kept:
        kept = [max(children, key=lambda h: h.weight)]
    total = sum(h.weight for h in kept)
    for h in kept:
        h.weight /= total
    return MbmDistribution(kept)


def mbm_postprocess(dist, config):
    """Prune weak Bernoullis and hypotheses, cap, renormalize, and merge
    nearby Bernoullis inside the highest-weight hypothesis."""
    hyps = []
    for hyp in dist.hypotheses:
        berns = [b for b in hyp.bernoullis if b.existence >= config.mbm_bernoulli_prune]
        hyps.append(GlobalHypothesis(weight=hyp.weight, bernoullis=berns))
    hyps = [h for h in hyps if h.weight >= config.mbm_global_prune]
    if not hyps:
        hyps = [dist.best_hypothesis()]
    hyps.sort(key=lambda h: -h.weight)
    hyps = hyps[:config.mbm_cap]
    total = sum(h.weight for h in hyps)
    for h in hyps:
        h.weight /= total

    best = max(range(len(hyps)), key=lambda i: hyps[i].weight)
    pool = sorted(hyps[best].bernoullis, key=lambda b: (-b.existence, b.track_id))
    merged = []
    while pool:
        head = pool[0]
        group = [b for b in pool if np.linalg.norm(b.mean - head.mean) < config.merge_thresh]
        if len(group) == 1:
            merged.append(head)
        else:
            _, mu, p = _moment_merge([b.existence for b in group],
                                     [b.mean for b in group], [b.cov for b in group])
            merged.append(Bernoulli(existence=min(1.0, sum(b.existence for b in group)),
                                    mean=mu, cov=p, track_id=head.track_id,
                                    class_label=head.class_label))
        pool = [b for b in pool if b not in group]
    hyps[best] = GlobalHypothesis(weight=hyps[best].weight, bernoullis=merged)
    return MbmDistribution(hyps)


def mbm_estimate(dist, existence_thresh):
    """Bernoullis above the existence threshold in the best hypothesis."""
    best = dist.best_hypothesis()
    return [b for b in sorted(best.bernoullis, key=lambda b: b.track_id)
            if b.existence >= existence_thresh]


# --- Filter front-ends -----------------------------------------------------

@dataclass
class TrackerStep:
    """Output of one filter step: current estimates and the one-step-ahead
    predictions consumed by cropping and gating at the next scan."""

    estimates: list          # (track_id, StateVector, class_label, weight-or-existence)
    predicted_tracks: list   # (track_id, position (2,), class_label)
    diagnostics: dict


class PhdFilter:
    """Gaussian-mixture PHD filter with scan-level step().

    ``initial_components`` seeds prior tracks (layout knowledge) as unit-weight
    components; new tracks otherwise enter through the birth model.
    """

    name = "phd"

    def __init__(self, model, birth, config, initial_components=()):
        self.model = model
        self.birth = birth
        self.config = config
        self._ids = itertools.count(0)
        self.mixture = [GaussianComponent(weight=1.0, mean=np.array(mean, dtype=float),
                                          cov=np.array(cov, dtype=float),
                                          track_id=next(self._ids))
                        for mean, cov in initial_components]
        self.track_labels = {}

    def assign_label(self, track_id, label):
        self.track_labels[track_id] = label
        for c in self.mixture:
            if c.track_id == track_id:
                c.class_label = label

    def step(self, measurements):
        predicted = phd_predict(self.mixture, self.model, self.birth, self._ids)
        updated = phd_update(predicted, measurements, self.model)
        self.mixture = phd_postprocess(updated, self.config)
        for c in self.mixture:
            if c.track_id in self.track_labels:
                c.class_label = self.track_labels[c.track_id]
        selected = phd_estimate(self.mixture)
        estimates = [(c.track_id, StateVector.from_array(c.mean), c.class_label,
                      c.weight) for c in selected]
        f = self.model.transition
        predicted_tracks = [(c.track_id, (f @ c.mean)[:2], c.class_label)
                            for c in selected]
        diag = {"weight_sum": sum(c.weight for c in self.mixture),
                "n_components": len(self.mixture)}
        return TrackerStep(estimates, predicted_tracks, diag)


class MbmFilter:
    """Multi-Bernoulli mixture filter with scan-level step().

    ``initial_components`` seeds prior tracks as unit-existence Bernoullis in
    the single starting hypothesis.
    """

    name = "mbm"

    def __init__(self, model, birth, config, initial_components=()):
        self.model = model
        self.birth = birth
        self.config = config
        self._ids = itertools.count(0)
        berns = [Bernoulli(existence=1.0, mean=np.array(mean, dtype=float),
                           cov=np.array(cov, dtype=float), track_id=next(self._ids))
                 for mean, cov in initial_components]
        self.distribution = MbmDistribution([GlobalHypothesis(weight=1.0, bernoullis=berns)])
        self.track_labels = {}

    def assign_label(self, track_id, label):
        self.track_labels[track_id] = label
        for hyp in self.distribution.hypotheses:
            for b in hyp.bernoullis:
                if b.track_id == track_id:
                    b.class_label = label

    def step(self, measurements):
        predicted = mbm_predict(self.distribution, self.model, self.birth, self._ids)
        updated = mbm_update(predicted, measurements, self.model, self.config)
        self.distribution = mbm_postprocess(updated, self.config)
        for hyp in self.distribution.hypotheses:
            for b in hyp.bernoullis:
                if b.track_id in self.track_labels:
                    b.class_label = self.track_labels[b.track_id]
        selected = mbm_estimate(self.distribution, self.config.mbm_existence_thresh)
        estimates = [(b.track_id, StateVector.from_array(b.mean), b.class_label,
                      b.existence) for b in selected]
        f = self.model.transition
        predicted_tracks = [(b.track_id, (f @ b.mean)[:2], b.class_label)
                            for b in selected]
        diag = {"n_hypotheses": len(self.distribution.hypotheses),
                "weight_sum": sum(h.weight for h in self.distribution.hypotheses)}
        return TrackerStep(estimates, predicted_tracks, diag)
