"""Closed-loop simulation of the bounded-noise plant with sensor attacks,
sliding-window decoding, intrusion detection and authentication enforcement.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .decoder import NoiseFeasibleSet, WindowDecoder, detector_threshold
from .detectors import id1
from .model import ConfigError, SensorSet, SystemModel

__all__ = [
    "NoiseSpec",
    "AuthPolicy",
    "AuthViolation",
    "Delivered",
    "SimTrace",
    "step",
    "apply_attack",
    "run_closed_loop",
]


@dataclass(frozen=True)
class NoiseSpec:
    """Deterministic bounded noise streams for the process and measurement channels.

    uniform_elementwise draws every component from U(lo, hi); ball draws
    uniformly from the 2-norm balls of the given radii; zero is noiseless.
    The same seed always reproduces the same streams.
    """

    kind: str = "uniform_elementwise"
    lo: float = -0.05
    hi: float = 0.05
    radius_p: float = 0.0
    radius_m: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("uniform_elementwise", "ball", "zero"):
            raise ConfigError(f"unknown noise kind {self.kind!r}")
        if self.kind == "uniform_elementwise" and self.lo > self.hi:
            raise ConfigError("uniform noise needs lo <= hi")

    @classmethod
    def zero(cls) -> "NoiseSpec":
        return cls(kind="zero")

    def delta_vp(self, n: int) -> float:
        if self.kind == "uniform_elementwise":
            return float(np.sqrt(n) * max(abs(self.lo), abs(self.hi)))
        if self.kind == "ball":
            return float(self.radius_p)
        return 0.0

    def delta_vm(self, p: int) -> float:
        if self.kind == "uniform_elementwise":
            return float(np.sqrt(p) * max(abs(self.lo), abs(self.hi)))
        if self.kind == "ball":
            return float(self.radius_m)
        return 0.0

    def draw(self, T: int, n: int, p: int) -> tuple[np.ndarray, np.ndarray]:
        """(v_P, v_M) arrays of shape (T, n) and (T, p); draw order is fixed
        (measurement first) so traces replay bit-identically."""
        if self.kind == "zero":
            return np.zeros((T, n)), np.zeros((T, p))
        rng = np.random.default_rng(self.seed)
        if self.kind == "uniform_elementwise":
            vM = rng.uniform(self.lo, self.hi, size=(T, p))
            vP = rng.uniform(self.lo, self.hi, size=(T, n))
            return vP, vM
        vM = _ball_draws(rng, T, p, self.radius_m)
        vP = _ball_draws(rng, T, n, self.radius_p)
        return vP, vM


def _ball_draws(rng, T: int, dim: int, radius: float) -> np.ndarray:
    g = rng.standard_normal((T, dim))
    norms = np.linalg.norm(g, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    r = radius * rng.uniform(0.0, 1.0, size=(T, 1)) ** (1.0 / dim)
    return g / norms * r


@dataclass(frozen=True)
class AuthPolicy:
    """Per-sensor authentication schedules.

    Each sensor maps to None (never authenticated), a (period, phase) pair for
    periodic schedules, or an explicit strictly increasing tuple of times.
    """

    schedules: dict
    p: int

    @classmethod
    def never(cls, p: int) -> "AuthPolicy":
        return cls({}, p)

    @classmethod
    def periodic(cls, sensors, period: int, p: int, phase: int = 0) -> "AuthPolicy":
        if period < 1:
            raise ConfigError("authentication period must be >= 1")
        return cls({int(i): (int(period), int(phase) % int(period)) for i in sensors}, p)

    @classmethod
    def explicit(cls, sensor_times: dict, p: int) -> "AuthPolicy":
        sched = {}
        for i, times in sensor_times.items():
            ts = tuple(int(t) for t in times)
            if list(ts) != sorted(set(ts)):
                raise ConfigError(f"authentication times for sensor {i} must be strictly increasing")
            sched[int(i)] = ts
        return cls(sched, p)

    def authenticated(self, sensor: int, t: int) -> bool:
        s = self.schedules.get(sensor)
        if s is None:
            return False
        if isinstance(s, tuple) and len(s) == 2 and isinstance(s[0], int):
            period, phase = s
            return t % period == phase
        return t in s

    def auth_set(self, t: int) -> SensorSet:
        return SensorSet.of([i for i in self.schedules if self.authenticated(i, t)], self.p)

    def sensors(self) -> SensorSet:
        return SensorSet.of(self.schedules.keys(), self.p)

    def common_period(self, subset: SensorSet):
        """Common (period, aligned-phase) bound over the subset, or None.

        Returns the period when every sensor in the subset is periodic with
        the same period and phase; explicit schedules and misaligned phases
        yield None (the over-time guarantee needs simultaneous enforcement).
        """
        got = None
        for i in subset:
            s = self.schedules.get(i)
            if not (isinstance(s, tuple) and len(s) == 2 and isinstance(s[0], int)):
                return None
            if got is None:
                got = s
            elif s != got:
                return None
        return None if got is None else got[0]


class AuthViolation(RuntimeError):
    """An attack plan requested a nonzero injection on an authenticated sensor."""

    def __init__(self, t: int, sensors: Sequence[int]):
        self.t = t
        self.sensors = tuple(sensors)
        super().__init__(f"nonzero attack on authenticated sensor(s) {self.sensors} at t={t}")


@dataclass(frozen=True)
class Delivered:
    y_delivered: np.ndarray
    applied_attack: np.ndarray
    violated: tuple[int, ...]


def step(model: SystemModel, state: np.ndarray, u: np.ndarray,
         v_p: np.ndarray, v_m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One plant step: next state and the (pre-attack) measurement."""
    x = np.asarray(state, dtype=float).ravel()
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if x.size != model.n or u.size != model.m:
        raise ConfigError("state/input dimension mismatch")
    nxt = model.A @ x + model.B @ u + np.asarray(v_p, dtype=float)
    y = model.C @ x + np.asarray(v_m, dtype=float)
    return nxt, y


def apply_attack(y: np.ndarray, a: np.ndarray, compromised: SensorSet,
                 auth_now: SensorSet) -> Delivered:
    """Deliver y + a with authentication enforced.

    Nonzero injections on authenticated sensors are zeroed AND flagged: the
    threat model gives the attacker the authentication times, so a violation
    is a synthesizer bug, not something to hide by silent clipping.
    """
    y = np.asarray(y, dtype=float).ravel()
    a = np.asarray(a, dtype=float).ravel().copy()
    nz = np.flatnonzero(a)
    bad = [int(i) + 1 for i in nz if (int(i) + 1) not in compromised.indices]
    if bad:
        raise ConfigError(f"attack support {bad} outside compromised set {compromised}")
    violated = []
    for i in auth_now:
        if a[i - 1] != 0.0:
            violated.append(i)
            a[i - 1] = 0.0
    return Delivered(y + a, a, tuple(violated))


@dataclass
class SimTrace:
    """Per-step trace of a closed-loop run (estimates timestamped at window start)."""

    model: SystemModel
    t: np.ndarray
    x: np.ndarray            # (T, n) true states
    y: np.ndarray            # (T, p) pre-attack outputs
    y_delivered: np.ndarray  # (T, p)
    attack: np.ndarray       # (T, p) applied attack
    u: np.ndarray            # (T, m)
    x_hat: np.ndarray        # (T, n) window-start estimates
    err_norm: np.ndarray     # (T,)
    alarm_id1: np.ndarray    # (T,) bool
    alarm_id2: np.ndarray    # (T,) bool
    innovation: np.ndarray   # (T,)
    auth_mask: np.ndarray    # (T,) int bitmask, bit i-1 set when sensor i authenticated
    violations: list = field(default_factory=list)
    supports: list = field(default_factory=list)
    indeterminate: int = 0
    threshold_d: float = 0.0
    supports_tested: int = 0
    oracle_iterations: int = 0

    @property
    def horizon(self) -> int:
        return len(self.t)

    def window(self, t: int):
        """StackedWindow view of delivered measurements anchored at t (only
        anchors whose N steps fall inside the trace)."""
        from .model import StackedWindow
        N = self.model.N
        if not 0 <= t <= self.horizon - N:
            raise ConfigError(f"window anchor {t} outside trace")
        return StackedWindow(self.y_delivered[t:t + N].T.ravel(), t,
                             self.model.p, N,
                             a_stacked=self.attack[t:t + N].T.ravel())

    def max_error(self) -> float:
        return float(np.max(self.err_norm))

    def alarm_counts(self) -> tuple[int, int]:
        return int(np.sum(self.alarm_id1)), int(np.sum(self.alarm_id2))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        n, p = self.model.n, self.model.p
        header = (["t"] + [f"x_{j+1}" for j in range(n)]
                  + [f"xhat_{j+1}" for j in range(n)] + ["err_norm"]
                  + [f"a_{j+1}" for j in range(p)]
                  + ["alarm_id1", "alarm_id2", "auth_flags"])
        w.writerow(header)
        for k in range(self.horizon):
            row = ([int(self.t[k])] + [f"{v:.12g}" for v in self.x[k]]
                   + [f"{v:.12g}" for v in self.x_hat[k]]
                   + [f"{self.err_norm[k]:.12g}"]
                   + [f"{v:.12g}" for v in self.attack[k]]
                   + [int(self.alarm_id1[k]), int(self.alarm_id2[k]), int(self.auth_mask[k])])
            w.writerow(row)
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())


def _forced_response_rows(model: SystemModel) -> list[list[np.ndarray]]:
    """pre[k][j] = C A^{k-1-j} B, the forced-response kernel inside one window."""
    out = []
    for k in range(model.N):
        out.append([model.C @ model.powers()[k - 1 - j] @ model.B for j in range(k)])
    return out


def run_closed_loop(model: SystemModel,
                    horizon: int,
                    noise: NoiseSpec,
                    compromised: Optional[SensorSet] = None,
                    attack: Optional[Callable[[int], np.ndarray]] = None,
                    policy: Optional[AuthPolicy] = None,
                    controller_gain: Optional[np.ndarray] = None,
                    reference: Optional[Callable[[int], tuple[np.ndarray, np.ndarray]]] = None,
                    omega: Optional[NoiseFeasibleSet] = None,
                    x0: Optional[np.ndarray] = None,
                    strict_auth: bool = False) -> SimTrace:
    """Simulate `horizon` decoded steps of the closed loop.

    The plant runs horizon + N - 1 measurement steps so that every t in
    0..horizon-1 anchors a complete window; the estimate x_hat(t) is decoded
    from the delivered window y(t..t+N-1) after subtracting the known forced
    response of the inputs.  Control uses the freshest complete window
    (N-1 steps old) propagated forward with the known inputs; the warm-up
    steps before the first complete window apply feedforward only.

    attack(t) returns the requested injection p-vector at step t (or None).
    With strict_auth the run aborts on an authentication violation; otherwise
    the violation is recorded in the trace and the injection entry zeroed.
    """
    if horizon < 1:
        raise ConfigError("horizon must be >= 1")
    N, n, p, m = model.N, model.n, model.p, model.m
    T_meas = horizon + N - 1
    comp = compromised if compromised is not None else SensorSet.empty(p)
    pol = policy if policy is not None else AuthPolicy.never(p)
    K_gain = np.zeros((m, n)) if controller_gain is None else np.atleast_2d(
        np.asarray(controller_gain, dtype=float))
    if K_gain.shape != (m, n):
        raise ConfigError(f"controller gain must be {m}x{n}")

    vP, vM = noise.draw(T_meas, n, p)
    # hard per-draw bound check (the decoder's guarantees assume it)
    dvp, dvm = noise.delta_vp(n), noise.delta_vm(p)
    assert np.all(np.linalg.norm(vP, axis=1) <= dvp + 1e-12)
    assert np.all(np.linalg.norm(vM, axis=1) <= dvm + 1e-12)

    decoder = WindowDecoder(model, omega)
    frk = _forced_response_rows(model)
    powN1 = model.powers()[N - 1]

    x = np.zeros((T_meas + 1, n))
    if x0 is not None:
        x[0] = np.asarray(x0, dtype=float).ravel()
    y = np.zeros((T_meas, p))
    y_del = np.zeros((T_meas, p))
    a_applied = np.zeros((T_meas, p))
    u_hist = np.zeros((T_meas, m))
    auth_mask = np.zeros(T_meas, dtype=int)
    violations = []

    x_hat = np.zeros((horizon, n))
    err = np.zeros(horizon)
    al1 = np.zeros(horizon, dtype=bool)
    al2 = np.zeros(horizon, dtype=bool)
    innov = np.zeros(horizon)
    supports = []
    indeterminate = 0
    supports_tested = 0
    oracle_iterations = 0
    d_thr = detector_threshold(model)
    # attack-free decodes obey ||err|| <= gain * 2 sqrt(N) delta_w = d / (1 + ||A||)
    err_bound = d_thr / (1.0 + float(np.linalg.norm(model.A, 2)))
    prev_xhat = None

    for t in range(T_meas):
        # measurement, attack, delivery
        y[t] = model.C @ x[t] + vM[t]
        a_req = np.zeros(p) if attack is None else np.asarray(attack(t), dtype=float)
        auth_now = pol.auth_set(t)
        delivered = apply_attack(y[t], a_req, comp, auth_now)
        if delivered.violated:
            if strict_auth:
                raise AuthViolation(t, delivered.violated)
            violations.append((t, delivered.violated))
        y_del[t] = delivered.y_delivered
        a_applied[t] = delivered.applied_attack
        for i in auth_now:
            auth_mask[t] |= 1 << (i - 1)

        # decode the newest complete window (anchor s = t - N + 1)
        s = t - N + 1
        if s >= 0:
            yw = y_del[s:t + 1].T.ravel().copy()
            # subtract the known forced response so the window looks autonomous
            for k in range(1, N):
                eff = np.zeros(p)
                for j in range(k):
                    eff += frk[k][j] @ u_hist[s + j]
                yw[k::N] -= eff
            res = decoder.decode(yw)
            x_hat[s] = res.x_hat
            err[s] = res.error_against(x[s])
            if attack is None:
                assert err[s] <= err_bound + 1e-9, "attack-free error bound violated"
            a1 = id1(res)
            if prev_xhat is None:
                iv = 0.0
            else:
                # the input applied between the two window anchors is known
                predicted = model.A @ prev_xhat + model.B @ u_hist[s - 1]
                iv = float(np.linalg.norm(res.x_hat - predicted))
            eps_iv = 1e-9 * (1.0 + float(np.linalg.norm(res.x_hat)))
            al1[s] = a1
            al2[s] = a1 or (prev_xhat is not None and iv > d_thr + eps_iv)
            innov[s] = iv
            supports.append(res.support)
            indeterminate += res.stats.indeterminate
            supports_tested += res.stats.supports_tested
            oracle_iterations += res.stats.oracle_iterations
            prev_xhat = res.x_hat

        # control from the freshest estimate, propagated to now
        if s >= 0 and (K_gain.any() or reference is not None):
            # x(t) = A^{N-1} x(s) + sum_{j<N-1} A^{N-2-j} B u(s+j) (+ noise)
            x_now = powN1 @ x_hat[s]
            for j in range(N - 1):
                x_now += model.powers()[N - 2 - j] @ model.B @ u_hist[s + j]
            if reference is not None:
                x_ref, u_ff = reference(t)
                u = u_ff - K_gain @ (x_now - x_ref)
            else:
                u = -K_gain @ x_now
        elif reference is not None:
            u = reference(t)[1]
        else:
            u = np.zeros(m)
        u_hist[t] = u
        x[t + 1] = model.A @ x[t] + model.B @ u + vP[t]

    return SimTrace(model, np.arange(horizon), x[:horizon].copy(), y[:horizon].copy(),
                    y_del[:horizon].copy(), a_applied[:horizon].copy(),
                    u_hist[:horizon].copy(), x_hat, err, al1, al2, innov,
                    auth_mask[:horizon].copy(), violations, supports,
                    indeterminate, d_thr, supports_tested, oracle_iterations)
