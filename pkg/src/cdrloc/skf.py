"""Two-model (Move / Stay) switching Kalman filter and smoother.

The hidden state is ``(x, y, vx, vy)`` in local meters and m/s. A discrete
switch ``S_t`` selects the transition used to reach step ``t``:

* MOVE: constant velocity, ``x_t = x_{t-1} + v_{t-1} dt``, white-acceleration
  process noise;
* STAY: identity transition with a small positional random walk and the
  velocity pinned.

The observation at every event is the centre of the serving cell's circle,
with a covariance derived from the cell radius. The mixture over switch
sequences is kept tractable with GPB2: after each step the ``M*M`` branch
posteriors are moment-matched back to one Gaussian per current model. The
backward pass runs RTS per (current, next) model pair. Its switch weights
start from the forward joint branch posterior and are corrected by how well
each branch agrees with the smoothed estimate of the next step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import NonFiniteState, SingularInnovation, UnknownCell

MOVE = "MOVE"
STAY = "STAY"
STATE_DIM = 4
H = np.array([[1.0, 0.0, 0.0, 0.0],
              [0.0, 1.0, 0.0, 0.0]])
LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class SkfConfig:
    q_move: float = 0.5             # m^2/s^3, white-acceleration spectral density
    q_stay: float = 0.1             # m^2/s, positional random walk while staying
    velocity_eps: float = 1e-6      # pins velocity under STAY
    stay_prob: float = 0.8          # diagonal of the model transition matrix
    v_max: float = 40.0             # m/s, initial velocity std
    r_mode: str = "cell"            # "cell": R = ((r + p) / 2)^2 I ; "fixed": R = fixed_r^2 I
    fixed_r: float = 1.2
    max_gap_s: float = 6 * 3600.0   # dt cap for process-noise growth
    threshold: float = 0.5          # P(STAY) at or above this labels STAY
    use_extensions: bool = True
    models: tuple[str, ...] = (MOVE, STAY)


@dataclass(frozen=True)
class StateEstimate:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "cov", np.asarray(self.cov, dtype=float))

    @property
    def position(self) -> np.ndarray:
        return self.mean[:2]


@dataclass(frozen=True)
class Observation:
    z: np.ndarray
    R: np.ndarray


@dataclass(frozen=True)
class MotionModel:
    name: str
    transition: Callable[[float], np.ndarray]
    noise: Callable[[float], np.ndarray]


def move_transition(dt: float) -> np.ndarray:
    F = np.eye(STATE_DIM)
    F[0, 2] = F[1, 3] = dt
    return F


def move_noise(dt: float, q: float) -> np.ndarray:
    """Discretised white-acceleration noise, per axis ``q [dt^3/3, dt^2/2; dt^2/2, dt]``."""
    Q = np.zeros((STATE_DIM, STATE_DIM))
    a, b, c = dt ** 3 / 3.0, dt ** 2 / 2.0, dt
    for p, v in ((0, 2), (1, 3)):
        Q[p, p], Q[p, v], Q[v, p], Q[v, v] = a, b, b, c
    return q * Q


def stay_noise(dt: float, q: float, eps: float) -> np.ndarray:
    return np.diag([q * dt, q * dt, eps, eps])


def move_model(q_move: float = 0.5) -> MotionModel:
    return MotionModel(MOVE, move_transition, lambda dt: move_noise(dt, q_move))


def stay_model(q_stay: float = 0.1, eps: float = 1e-6) -> MotionModel:
    return MotionModel(STAY, lambda dt: np.eye(STATE_DIM), lambda dt: stay_noise(dt, q_stay, eps))


def model_transition_matrix(n_models: int, stay_prob: float = 0.8) -> np.ndarray:
    """``T[i, j] = P(S_t = j | S_{t-1} = i)``; ``stay_prob`` on the diagonal."""
    if n_models == 1:
        return np.ones((1, 1))
    T = np.full((n_models, n_models), (1.0 - stay_prob) / (n_models - 1))
    np.fill_diagonal(T, stay_prob)
    return T


@dataclass
class ModelBank:
    models: list[MotionModel]
    T: np.ndarray
    H: np.ndarray = field(default_factory=lambda: H.copy())
    max_gap_s: float = 6 * 3600.0

    def __post_init__(self):
        self.T = np.asarray(self.T, dtype=float)
        n = len(self.models)
        if self.T.shape != (n, n):
            raise ValueError(f"transition matrix must be {n}x{n}")
        if not np.allclose(self.T.sum(axis=1), 1.0, atol=1e-12) or np.any(self.T < 0):
            raise ValueError("transition matrix rows must be probability vectors")

    @classmethod
    def from_config(cls, cfg: SkfConfig) -> "ModelBank":
        builders = {MOVE: lambda: move_model(cfg.q_move),
                    STAY: lambda: stay_model(cfg.q_stay, cfg.velocity_eps)}
        models = [builders[name]() for name in cfg.models]
        return cls(models, model_transition_matrix(len(models), cfg.stay_prob),
                   max_gap_s=cfg.max_gap_s)

    @property
    def names(self) -> list[str]:
        return [m.name for m in self.models]

    def index(self, name: str) -> int:
        return self.names.index(name)

    def dynamics(self, dt: float):
        """Stacked ``(F, Q)`` for every model and whether ``dt`` hit the cap."""
        if dt <= 0:
            eye = np.broadcast_to(np.eye(STATE_DIM), (len(self.models), STATE_DIM, STATE_DIM))
            return eye.copy(), np.zeros_like(eye), False
        capped = dt > self.max_gap_s
        dq = min(dt, self.max_gap_s)
        F = np.stack([m.transition(dt) for m in self.models])
        Q = np.stack([m.noise(dq) for m in self.models])
        return F, Q, capped


# ------------------------------------------------------------ plain Kalman

def _symmetrize(P):
    return 0.5 * (P + np.swapaxes(P, -1, -2))


def kf_predict(s: StateEstimate, F, Q) -> StateEstimate:
    F = np.asarray(F, dtype=float)
    mean = F @ s.mean
    cov = _symmetrize(F @ s.cov @ F.T + np.asarray(Q, dtype=float))
    if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
        raise NonFiniteState("non-finite state after predict")
    return StateEstimate(mean, cov)


def kf_update(s: StateEstimate, obs: Observation, H=H):
    """Kalman update in Joseph form; returns ``(posterior, log N(z; H m, S))``."""
    H = np.asarray(H, dtype=float)
    R = np.asarray(obs.R, dtype=float)
    S = H @ s.cov @ H.T + R
    try:
        S_inv = np.linalg.inv(S)
    except np.linalg.LinAlgError:
        raise SingularInnovation("innovation covariance is singular") from None
    sign, logdet = np.linalg.slogdet(S)
    if sign <= 0 or not np.isfinite(logdet):
        raise SingularInnovation("innovation covariance is not positive definite")
    y = np.asarray(obs.z, dtype=float) - H @ s.mean
    K = s.cov @ H.T @ S_inv
    mean = s.mean + K @ y
    A = np.eye(len(s.mean)) - K @ H
    cov = _symmetrize(A @ s.cov @ A.T + K @ R @ K.T)
    loglik = -0.5 * (y @ S_inv @ y + logdet + len(y) * LOG_2PI)
    if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
        raise NonFiniteState("non-finite state after update")
    return StateEstimate(mean, cov), float(loglik)


# ------------------------------------------------------- batched branches

def _predict_batch(mu, P, F, Q):
    """Predict every (prev i, next j) branch: shapes (I,4), (I,4,4), (J,4,4)."""
    mp = np.einsum("jab,ib->ija", F, mu)
    Pp = np.einsum("jab,ibc,jdc->ijad", F, P, F) + Q[None, :, :, :]
    return mp, _symmetrize(Pp)


def _update_batch(mp, Pp, z, R):
    """Joseph-form update of a batch of priors against one observation."""
    S = Pp[..., :2, :2] + R
    det = S[..., 0, 0] * S[..., 1, 1] - S[..., 0, 1] * S[..., 1, 0]
    if np.any(~np.isfinite(det)) or np.any(det <= 0):
        raise SingularInnovation("innovation covariance is singular")
    S_inv = np.empty_like(S)
    S_inv[..., 0, 0] = S[..., 1, 1] / det
    S_inv[..., 1, 1] = S[..., 0, 0] / det
    S_inv[..., 0, 1] = -S[..., 0, 1] / det
    S_inv[..., 1, 0] = -S[..., 1, 0] / det
    y = z - mp[..., :2]
    K = np.einsum("...ab,...bc->...ac", Pp[..., :, :2], S_inv)
    mean = mp + np.einsum("...ab,...b->...a", K, y)
    A = np.broadcast_to(np.eye(STATE_DIM), Pp.shape).copy()
    A[..., :, :2] -= K
    cov = (np.einsum("...ab,...bc,...dc->...ad", A, Pp, A)
           + np.einsum("...ab,bc,...dc->...ad", K, R, K))
    maha = np.einsum("...a,...ab,...b->...", y, S_inv, y)
    loglik = -0.5 * (maha + np.log(det) + 2 * LOG_2PI)
    return mean, _symmetrize(cov), loglik


def _collapse(weights, means, covs):
    """Moment-match mixtures along axis 0: weights (I,J), means (I,J,4)."""
    mu = np.einsum("ij,ija->ja", weights, means)
    d = means - mu[None]
    cov = np.einsum("ij,ijab->jab", weights, covs + np.einsum("ija,ijb->ijab", d, d))
    return mu, _symmetrize(cov)


def _normalize_logs(logw):
    logz = logsumexp(logw)
    p = np.exp(logw - logz)
    p /= p.sum()
    return p, logz


def _conditional(joint, axis):
    """Normalise ``joint`` along ``axis``; all-zero slices become uniform."""
    tot = joint.sum(axis=axis, keepdims=True)
    n = joint.shape[axis]
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(tot > 0, joint / np.where(tot > 0, tot, 1.0), 1.0 / n)
    return out


def combine(probs, means, covs) -> StateEstimate:
    """Single Gaussian with the moments of ``sum_i probs[i] N(means[i], covs[i])``."""
    mu, cov = _collapse(np.asarray(probs)[:, None], means[:, None], covs[:, None])
    return StateEstimate(mu[0], cov[0])


# ------------------------------------------------------------------ records

@dataclass
class StepResult:
    timestamp: float
    cell_id: str | None
    filtered_probs: np.ndarray
    filtered: StateEstimate
    smoothed_probs: np.ndarray | None = None
    smoothed: StateEstimate | None = None
    gap_capped: bool = False


@dataclass
class FilterResult:
    """Filtered pass over one trajectory, with what the smoother needs."""

    steps: list[StepResult]
    means: np.ndarray           # (T, M, 4) per-model filtered means
    covs: np.ndarray            # (T, M, 4, 4)
    probs: np.ndarray           # (T, M)
    joints: np.ndarray          # (T, M, M): P(S_{t-1}=i, S_t=j | y_1:t); joints[0] unused
    branch_means: np.ndarray    # (T, M, M, 4): posterior of branch (i, j) before collapsing
    branch_covs: np.ndarray     # (T, M, M, 4, 4)
    dts: np.ndarray             # (T,), dts[0] unused
    loglik: float
    bank: ModelBank

    def __len__(self):
        return len(self.steps)

    @property
    def model_names(self) -> list[str]:
        return self.bank.names


def build_observation(cell, config: SkfConfig | None = None) -> Observation:
    """Observation at the cell's circle centre.

    ``cell`` mode (default) uses half the effective radius as the standard
    deviation per axis; ``fixed`` mode uses ``fixed_r**2`` for every cell.
    """
    cfg = config or SkfConfig()
    z = np.asarray(cell.circle_center, dtype=float)
    if cfg.r_mode == "fixed":
        sigma = cfg.fixed_r
    elif cfg.r_mode == "cell":
        radius = cell.base_radius + (cell.extension if cfg.use_extensions else 0.0)
        sigma = radius / 2.0
    else:
        raise ValueError(f"unknown r_mode {cfg.r_mode!r}")
    return Observation(z, sigma ** 2 * np.eye(2))


def run_filter(times: Sequence[float], zs, Rs, bank: ModelBank, v_max: float = 40.0,
               prior=None, cell_ids=None) -> FilterResult:
    """GPB2 forward pass over a sequence of observations.

    ``zs`` is ``(T, 2)``, ``Rs`` is ``(T, 2, 2)``. The first observation seeds
    every model with mean ``(z, 0, 0)`` and covariance
    ``blockdiag(R, v_max^2 I)``; the model prior is uniform unless given.
    """
    times = np.asarray(times, dtype=float)
    zs = np.asarray(zs, dtype=float).reshape(-1, 2)
    Rs = np.asarray(Rs, dtype=float).reshape(-1, 2, 2)
    n = len(times)
    if n == 0:
        raise ValueError("cannot filter an empty trajectory")
    M = len(bank.models)
    logT = np.log(np.where(bank.T > 0, bank.T, 1.0))
    logT[bank.T <= 0] = -np.inf

    means = np.empty((n, M, STATE_DIM))
    covs = np.empty((n, M, STATE_DIM, STATE_DIM))
    probs = np.empty((n, M))
    joints = np.zeros((n, M, M))
    branch_means = np.zeros((n, M, M, STATE_DIM))
    branch_covs = np.zeros((n, M, M, STATE_DIM, STATE_DIM))
    dts = np.zeros(n)
    capped = np.zeros(n, dtype=bool)

    P0 = np.zeros((STATE_DIM, STATE_DIM))
    P0[:2, :2] = Rs[0]
    P0[2, 2] = P0[3, 3] = v_max ** 2
    means[0] = np.concatenate([zs[0], [0.0, 0.0]])
    covs[0] = P0
    probs[0] = np.full(M, 1.0 / M) if prior is None else np.asarray(prior, dtype=float)
    loglik = 0.0

    for t in range(1, n):
        dt = times[t] - times[t - 1]
        if dt < 0:
            raise ValueError("timestamps must be non-decreasing")
        dts[t] = dt
        F, Q, capped[t] = bank.dynamics(dt)
        mp, Pp = _predict_batch(means[t - 1], covs[t - 1], F, Q)
        mu_b, P_b, ll = _update_batch(mp, Pp, zs[t], Rs[t])
        with np.errstate(divide="ignore"):
            logw = np.log(probs[t - 1])[:, None] + logT + ll
        joint, logz = _normalize_logs(logw)
        loglik += logz
        joints[t] = joint
        branch_means[t], branch_covs[t] = mu_b, P_b
        probs[t] = joint.sum(axis=0)
        probs[t] /= probs[t].sum()
        means[t], covs[t] = _collapse(_conditional(joint, 0), mu_b, P_b)
        if not (np.all(np.isfinite(means[t])) and np.all(np.isfinite(covs[t]))):
            raise NonFiniteState(f"non-finite filtered state at step {t}")

    steps = []
    for t in range(n):
        steps.append(StepResult(
            timestamp=times[t],
            cell_id=None if cell_ids is None else cell_ids[t],
            filtered_probs=probs[t].copy(),
            filtered=combine(probs[t], means[t], covs[t]),
            gap_capped=bool(capped[t]),
        ))
    return FilterResult(steps, means, covs, probs, joints, branch_means, branch_covs, dts,
                        float(loglik), bank)


def observations_for(traj, cells: Mapping, config: SkfConfig):
    zs, Rs = [], []
    cache = {}
    for _, cell_id in traj.events:
        if cell_id not in cache:
            try:
                cell = cells[cell_id]
            except KeyError:
                raise UnknownCell(cell_id) from None
            cache[cell_id] = build_observation(cell, config)
        obs = cache[cell_id]
        zs.append(obs.z)
        Rs.append(obs.R)
    return np.array(zs).reshape(-1, 2), np.array(Rs).reshape(-1, 2, 2)


def skf_filter(traj, cells: Mapping, config: SkfConfig | None = None,
               bank: ModelBank | None = None) -> FilterResult:
    """Filter one trajectory of ``(timestamp, cell_id)`` events."""
    cfg = config or SkfConfig()
    if len(traj.events) == 0:
        raise ValueError("trajectory is empty")
    bank = bank or ModelBank.from_config(cfg)
    zs, Rs = observations_for(traj, cells, cfg)
    return run_filter(traj.timestamps, zs, Rs, bank, cfg.v_max, cell_ids=traj.cell_ids)


def _future_agreement(bm, bP, fm, fP, sm, sP):
    """log of  int N(x; bm[j,k], bP[j,k]) N(x; sm[k], sP[k]) / N(x; fm[k], fP[k]) dx.

    The smoothed/filtered ratio for model ``k`` at ``t+1`` is the Gaussian
    message carrying the observations after ``t+1``; integrating it against
    each branch posterior scores how well ``S_t = j`` agrees with them.
    Terms that depend on ``k`` only are dropped (they cancel when
    normalising over ``j``). A column whose combined precision is not
    positive definite gets no correction.
    """
    M = bm.shape[0]
    out = np.zeros((M, M))
    for k in range(M):
        try:
            S_inv = np.linalg.inv(sP[k])
            F_inv = np.linalg.inv(fP[k])
        except np.linalg.LinAlgError:
            continue
        # centre on the smoothed mean to keep the quadratic forms small
        f = fm[k] - sm[k]
        col = np.zeros(M)
        ok = True
        for j in range(M):
            b = bm[j, k] - sm[k]
            try:
                B_inv = np.linalg.inv(bP[j, k])
            except np.linalg.LinAlgError:
                ok = False
                break
            A = B_inv + S_inv - F_inv
            A = 0.5 * (A + A.T)
            try:
                L = np.linalg.cholesky(A)
            except np.linalg.LinAlgError:
                ok = False
                break
            eta = B_inv @ b - F_inv @ f
            u = np.linalg.solve(L, eta)
            _, logdet_B = np.linalg.slogdet(bP[j, k])
            col[j] = (-0.5 * logdet_B - np.sum(np.log(np.diag(L)))
                      + 0.5 * u @ u - 0.5 * b @ B_inv @ b)
        if ok:
            out[:, k] = col - col.max()
    return out


def skf_smooth(fr: FilterResult) -> list[StepResult]:
    """Backward GPB2 pass; returns the steps with their smoothed fields set.

    For every (model j at t, model k at t+1) pair the model-j filtered
    Gaussian is RTS-smoothed through model k's dynamics towards the smoothed
    model-k Gaussian at t+1. The backward switch weights approximate
    ``P(S_t=j | S_{t+1}=k, y_1:T)`` by ``P(S_t=j | S_{t+1}=k, y_1:t+1)``, read
    off the forward pass's branch posteriors, so the likelihood of the next
    observation under each (j, k) branch is kept. Each weight is then scaled
    by how well branch (j, k) agrees with the smoothed model-k estimate
    beyond what the filter already knew. Pairs are collapsed per ``j`` by
    moment matching.
    """
    n, M = fr.probs.shape
    bank = fr.bank
    s_means = np.empty_like(fr.means)
    s_covs = np.empty_like(fr.covs)
    s_probs = np.empty_like(fr.probs)
    s_means[-1], s_covs[-1], s_probs[-1] = fr.means[-1], fr.covs[-1], fr.probs[-1]

    for t in range(n - 2, -1, -1):
        F, Q, _ = bank.dynamics(fr.dts[t + 1])
        mu, P = fr.means[t], fr.covs[t]
        mp, Pp = _predict_batch(mu, P, F, Q)                 # (j, k, ...)
        # J = P_j F_k^T Pp_jk^{-1}
        PFt = np.einsum("jab,kcb->jkac", P, F)
        try:
            G = np.linalg.solve(Pp, np.swapaxes(PFt, -1, -2))
        except np.linalg.LinAlgError:
            raise NonFiniteState(f"singular predicted covariance at step {t}") from None
        J = np.swapaxes(G, -1, -2)
        dmu = s_means[t + 1][None, :, :] - mp
        mu_jk = mu[:, None, :] + np.einsum("jkab,jkb->jka", J, dmu)
        dP = s_covs[t + 1][None] - Pp
        P_jk = P[:, None] + np.einsum("jkab,jkbc,jkdc->jkad", J, dP, J)

        log_corr = _future_agreement(fr.branch_means[t + 1], fr.branch_covs[t + 1],
                                     fr.means[t + 1], fr.covs[t + 1],
                                     s_means[t + 1], s_covs[t + 1])
        with np.errstate(divide="ignore"):
            logb = np.log(fr.joints[t + 1]) + log_corr
        top = np.max(logb, axis=0, keepdims=True)
        logb = np.where(np.isfinite(top), logb - np.where(np.isfinite(top), top, 0.0), -np.inf)
        back = _conditional(np.exp(logb), 0)                        # P(S_t=j | S_{t+1}=k)
        joint = back * s_probs[t + 1][None, :]
        s_probs[t] = joint.sum(axis=1)
        s_probs[t] /= s_probs[t].sum()
        w = _conditional(joint, 1)                                  # P(S_{t+1}=k | S_t=j)
        m_t, c_t = _collapse(w.T, np.swapaxes(mu_jk, 0, 1), np.swapaxes(P_jk, 0, 1))
        s_means[t], s_covs[t] = m_t, c_t
        if not (np.all(np.isfinite(m_t)) and np.all(np.isfinite(c_t))):
            raise NonFiniteState(f"non-finite smoothed state at step {t}")

    out = []
    for t, step in enumerate(fr.steps):
        out.append(replace(step, smoothed_probs=s_probs[t].copy(),
                           smoothed=combine(s_probs[t], s_means[t], s_covs[t])))
    return out


def classify_episodes(results: Sequence[StepResult], threshold: float = 0.5,
                      stay_index: int = 1, smoothed: bool = True) -> list[str]:
    """``STAY`` where P(STAY) >= threshold (ties go to STAY), else ``MOVE``."""
    labels = []
    for r in results:
        probs = r.smoothed_probs if smoothed else r.filtered_probs
        if probs is None:
            raise ValueError("smoothed probabilities missing; run skf_smooth first")
        labels.append(STAY if probs[stay_index] >= threshold else MOVE)
    return labels
