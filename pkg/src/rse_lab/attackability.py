"""Decision procedures for perfect attackability and for authentication
policies that prevent it.  Every positive verdict carries a numeric witness
that is re-verified before being returned."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .model import (
    SensorSet,
    SystemModel,
    build_auth_O,
    build_overlap_stack,
    build_O,
    classical_obs_stack,
    null_basis,
    rank_margin,
    unstable_eigenstructure,
    unstable_null_intersection,
)

__all__ = [
    "PaVerdict",
    "PolicyVerdict",
    "pa_single_step",
    "pa_over_time_id1",
    "pa_over_time_id2",
    "auth_blocks_single_step",
    "policy_prevents_pa",
    "analyze",
]

BRANCH_RANK_DEFICIENT_OVERLAP = "rank_deficient_overlap"
BRANCH_FULL_RANK_OVERLAP = "full_rank_overlap"


def _verify_null(M: np.ndarray, v: np.ndarray, tol: float) -> bool:
    if M.shape[0] == 0:
        return True
    vv = np.atleast_2d(np.asarray(v)).reshape(M.shape[1], -1)
    return all(np.linalg.norm(M @ vv[:, j]) <= tol * max(1.0, np.linalg.norm(vv[:, j]))
               for j in range(vv.shape[1]))


def pa_single_step(model: SystemModel, compromised: SensorSet):
    """Single-window attackability: true iff the clean sensors' observation
    stack loses column rank; the witness is a unit null vector."""
    O_clean = build_O(model, compromised.complement())
    rank, _ = rank_margin(O_clean, model.rank_tol)
    if rank >= model.n:
        return False, None
    basis = null_basis(O_clean, model.rank_tol)
    z = np.real(basis[:, 0])
    z = z / np.linalg.norm(z)
    assert _verify_null(O_clean, z, 10 * model.rank_tol * max(1.0, float(np.linalg.norm(O_clean, 2)) if O_clean.size else 1.0))
    return True, z


@dataclass(frozen=True)
class PaVerdict:
    """Attackability decision with certificate and rank diagnostics."""

    attackable: bool
    branch: str
    witness: Optional[object] = None  # null vector | (lambda, eigvec/plane)
    notes: str = ""
    margins: dict = field(default_factory=dict)

    def __bool__(self) -> bool:
        return self.attackable

    def to_report(self) -> dict:
        def _clean(v):
            if isinstance(v, np.ndarray):
                return v.tolist()
            if isinstance(v, complex):
                return [v.real, v.imag]
            if isinstance(v, tuple):
                return [_clean(x) for x in v]
            if isinstance(v, float) and not np.isfinite(v):
                return None  # strict-JSON friendly
            return v
        return {
            "attackable": self.attackable,
            "branch": self.branch,
            "witness": _clean(self.witness),
            "notes": self.notes,
            "margins": {k: _clean(v) for k, v in self.margins.items()},
        }


def pa_over_time_id1(model: SystemModel, compromised: SensorSet) -> PaVerdict:
    """Over-time attackability against the support-only detector.

    Rank-deficient F: equivalent to single-window attackability (the attacker
    propagates through the null space of F).  Full-rank F: additionally needs
    an unstable eigenvector inside the clean sensors' null space.
    """
    F = build_overlap_stack(model, compromised)
    rank_F, margin_F = rank_margin(F, model.rank_tol)
    single, z = pa_single_step(model, compromised)
    margins = {"rank_overlap": rank_F, "margin_overlap": margin_F}
    if rank_F < model.n:
        w = None
        if single:
            basis = null_basis(F, model.rank_tol)
            w = np.real(basis[:, 0])
            w /= np.linalg.norm(w)
        return PaVerdict(single, BRANCH_RANK_DEFICIENT_OVERLAP, w,
                         "F rank deficient: over-time iff single-step", margins)
    hit = unstable_null_intersection(model, compromised)
    ok = single and hit is not None
    return PaVerdict(ok, BRANCH_FULL_RANK_OVERLAP, hit,
                     "F full rank: needs unstable eigenvector in clean null space",
                     margins)


def pa_over_time_id2(model: SystemModel, compromised: SensorSet) -> PaVerdict:
    """Over-time attackability against the innovation-checking detector:
    single-window attackability, an unstable mode, and an unstable
    eigenvector hidden from the clean sensors, all three at once."""
    single, _ = pa_single_step(model, compromised)
    unstable = unstable_eigenstructure(model.A, model.stability_margin, model.rank_tol)
    hit = unstable_null_intersection(model, compromised)
    ok = single and bool(unstable) and hit is not None
    notes = []
    if not single:
        notes.append("clean sensors keep observability")
    if not unstable:
        notes.append("A is stable")
    if unstable and hit is None:
        notes.append("no unstable eigenvector in clean null space")
    return PaVerdict(ok, "id2", hit, "; ".join(notes) or "all three conditions hold",
                     {"unstable_count": len(unstable)})


def auth_blocks_single_step(model: SystemModel, compromised: SensorSet,
                            auth_sets: Sequence[SensorSet]) -> bool:
    """True iff per-slot authentication of auth_sets restores full column rank
    of the (clean + authenticated) observation stack, blocking the single-window
    perfect attack."""
    M = build_auth_O(model, compromised, list(auth_sets))
    rank, _ = rank_margin(M, model.rank_tol)
    return rank >= model.n


@dataclass(frozen=True)
class PolicyVerdict:
    prevented: bool
    reason: str
    checks: dict = field(default_factory=dict)

    def __bool__(self) -> bool:
        return self.prevented

    def to_report(self) -> dict:
        return {"prevented": self.prevented, "reason": self.reason, "checks": dict(self.checks)}


def _decimated_stack(model: SystemModel, auth_subset: SensorSet, period: int) -> np.ndarray:
    rows0 = list(auth_subset.indices0)
    CF = model.C[rows0]
    Ap = np.linalg.matrix_power(model.A, period)
    out = [CF]
    for _ in range(model.N - 1):
        out.append(out[-1] @ Ap)
    return np.vstack(out)


def policy_prevents_pa(model: SystemModel, compromised: SensorSet, policy,
                       auth_subset: SensorSet, detector: str = "II") -> PolicyVerdict:
    """Check whether a periodic authentication policy on auth_subset rules out
    over-time perfect attacks for the given detector.

    Requires (A, P_F C) observable.  For the support-only detector: a full-rank
    F(S, N) allows any bounded period; a rank-deficient F(S, N) demands period 1.
    For the innovation detector any bounded period works.  In all cases the
    period-decimated stack [P_F C; P_F C A^T; ...] must keep full rank; the
    boundedness argument rests on inverting it, so it is checked explicitly and
    reported when observability alone would have passed.
    """
    checks: dict = {}
    if len(auth_subset) == 0:
        return PolicyVerdict(False, "empty authentication subset", checks)
    period = policy.common_period(auth_subset) if policy is not None else None
    checks["period"] = period
    if period is None:
        return PolicyVerdict(False, "policy is not periodic with a common bounded "
                                    "period on the authenticated subset", checks)
    obs_F = classical_obs_stack(model, auth_subset)
    rank_obs, margin_obs = rank_margin(obs_F, model.rank_tol)
    checks["obs_F_rank"] = rank_obs
    checks["obs_F_margin"] = margin_obs
    if rank_obs < model.n:
        return PolicyVerdict(False, "(A, P_F C) unobservable", checks)

    key = _decimated_stack(model, auth_subset, period)
    rank_key, margin_key = rank_margin(key, model.rank_tol)
    checks["key_rank"] = rank_key
    checks["key_margin"] = margin_key
    key_ok = rank_key >= model.n
    if not key_ok:
        checks["key_matrix_warning"] = (
            "observable (A, P_F C) but the period-decimated stack loses rank")

    if detector.upper() in ("II", "2"):
        if key_ok:
            return PolicyVerdict(True, "bounded period with observable subset "
                                       "and full-rank decimated stack", checks)
        return PolicyVerdict(False, "decimated stack rank deficient for this period", checks)

    F_all = build_overlap_stack(model, SensorSet.all(model.p))
    rank_FS, margin_FS = rank_margin(F_all, model.rank_tol)
    checks["rank_overlap_all"] = rank_FS
    checks["margin_overlap_all"] = margin_FS
    if rank_FS >= model.n:
        if key_ok:
            return PolicyVerdict(True, "F(S,N) full rank: any bounded period works", checks)
        return PolicyVerdict(False, "decimated stack rank deficient for this period", checks)
    if period == 1 and key_ok:
        return PolicyVerdict(True, "F(S,N) rank deficient: period-1 authentication "
                                   "re-establishes the single-window block each step", checks)
    return PolicyVerdict(False, "F(S,N) rank deficient: single-injection attacks "
                                "slip between authentications unless the period is 1", checks)


def analyze(model: SystemModel, compromised: SensorSet) -> dict:
    """Bundle of the three attackability verdicts, serializable for the CLI."""
    single, z = pa_single_step(model, compromised)
    v1 = pa_over_time_id1(model, compromised)
    v2 = pa_over_time_id2(model, compromised)
    O_clean = build_O(model, compromised.complement())
    _, margin_single = rank_margin(O_clean, model.rank_tol)
    return {
        "compromised": list(compromised.indices),
        "pa_single_step": {"attackable": single,
                           "witness": None if z is None else z.tolist(),
                           "margin": margin_single if np.isfinite(margin_single) else None},
        "pa_over_time_id1": v1.to_report(),
        "pa_over_time_id2": v2.to_report(),
    }


def report_to_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True)
