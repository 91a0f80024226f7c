"""Ground-truth verification harness.

Everything here is allowed a second pass over the data (rebuilding dense
prefix matrices is how streaming claims get audited), so none of it is part
of the single-pass pipeline proper.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import InputError
from .kernels import Dataset, KernelSpec, gram
from .leverage import deff_increment_exact, exact_rls
from .linalg import eig_pairs, psd_order_check, regularized_solve, spectral_norm, symmetrize
from .nystrom import NystromFactor, Selection, build_selection, nystrom_approx
from .pipeline import RunCheckpoint

SCHEMA_VERSION = "1"

CONDITION_TOL = 1e-7


@dataclass(frozen=True)
class FixedDesignProblem:
    """A regression instance with known target values and noise level."""

    dataset: Dataset
    f_star: np.ndarray
    noise_std: float
    mu: float

    def __post_init__(self) -> None:
        f = np.asarray(self.f_star, dtype=np.float64).reshape(-1)
        if f.shape[0] != len(self.dataset):
            raise InputError("target vector length must match the dataset")
        if self.noise_std < 0:
            raise InputError("noise_std must be nonnegative")
        if not self.mu > 0:
            raise InputError("mu must be positive")
        object.__setattr__(self, "f_star", f)

    def prefix(self, t: int) -> "FixedDesignProblem":
        sub = Dataset(
            points=self.dataset.points[:t],
            labels=None if self.dataset.labels is None else self.dataset.labels[:t],
        )
        return FixedDesignProblem(
            dataset=sub, f_star=self.f_star[:t], noise_std=self.noise_std, mu=self.mu
        )


@dataclass(frozen=True)
class ConditionReport:
    """Outcome of the two-sided PSD reconstruction check at one step."""

    step: int
    lower_psd_ok: bool
    upper_psd_ok: bool
    spectral_gap: float
    psi_gap: float

    @property
    def ok(self) -> bool:
        return self.lower_psd_ok and self.upper_psd_ok


def check_condition(
    K: np.ndarray,
    K_tilde: np.ndarray,
    gamma: float,
    epsilon: float,
    *,
    tol: float = CONDITION_TOL,
    step: int = 0,
    selection: Selection | None = None,
) -> ConditionReport:
    """Check ``0 <= K - K_tilde <= gamma/(1-eps) * K (K + gamma I)^{-1}``
    in the PSD order, and record the spectral gap.

    When a selection is supplied its projection-gap certificate is computed
    as well (see :func:`psi_gap`); otherwise that field is NaN.
    """
    if not 0.0 <= epsilon < 1.0:
        raise InputError("epsilon must lie in [0, 1)")
    K = symmetrize(K)
    K_tilde = symmetrize(K_tilde)
    if K.shape != K_tilde.shape:
        raise InputError("matrices must share a shape")
    diff = K - K_tilde
    lower_ok = psd_order_check(np.zeros_like(diff), diff, tol)
    bound = symmetrize(regularized_solve(K, gamma, K)) * (gamma / (1.0 - epsilon))
    upper_ok = psd_order_check(diff, bound, tol)
    gap = spectral_norm(diff)
    psi = psi_gap(K, selection, gamma) if selection is not None else float("nan")
    return ConditionReport(
        step=step,
        lower_psd_ok=lower_ok,
        upper_psd_ok=upper_ok,
        spectral_gap=gap,
        psi_gap=psi,
    )


def psi_gap(K: np.ndarray, selection: Selection, gamma: float) -> float:
    """Largest eigenvalue of the whitened projection gap of a selection.

    The kernel matrix is whitened by its own soft-thresholded spectrum; the
    returned value is the worst direction the weighted selection fails to
    cover.  A value of at most ``eps`` certifies the two-sided PSD condition
    at that accuracy.
    """
    pair = eig_pairs(K)
    lam = np.clip(pair.eigenvalues, 0.0, None)
    ratios = lam / (lam + gamma)
    whitener = np.sqrt(ratios)[:, None] * pair.eigenvectors.T
    if selection.size:
        projected = whitener @ selection.dense()
        M = np.diag(ratios) - projected @ projected.T
    else:
        M = np.diag(ratios)
    if M.size == 0:
        return 0.0
    return float(np.max(np.linalg.eigvalsh(symmetrize(M))))


def fixed_design_risk(K_effective: np.ndarray, problem: FixedDesignProblem) -> float:
    """Closed-form expected squared prediction error at the training inputs.

    For the predictor built from ``K_effective`` the expectation over label
    noise splits into a bias and a variance term:
    ``mu^2 ||(K + mu I)^{-1} f*||^2 + sigma^2 tr(K^2 (K + mu I)^{-2})``.
    """
    K_effective = symmetrize(K_effective)
    t = K_effective.shape[0]
    if t != len(problem.dataset):
        raise InputError("matrix size must match the problem")
    mu = problem.mu
    bias_vec = regularized_solve(K_effective, mu, problem.f_star)
    bias_sq = mu**2 * float(bias_vec @ bias_vec)
    lam = np.clip(np.linalg.eigvalsh(K_effective), 0.0, None)
    variance = problem.noise_std**2 * float(np.sum((lam / (lam + mu)) ** 2))
    return bias_sq + variance


def risk_ratio_bound(gamma: float, mu: float, epsilon: float) -> float:
    """Multiplicative factor relating approximate and exact risk."""
    if not 0.0 <= epsilon < 1.0:
        raise InputError("epsilon must lie in [0, 1)")
    return (1.0 + (gamma / mu) / (1.0 - epsilon)) ** 2


_TARGETS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "sine": lambda X: np.sin(X.sum(axis=1)),
    "tanh": lambda X: np.tanh(X.sum(axis=1)),
    "bump": lambda X: np.exp(-0.5 * np.sum(X**2, axis=1)),
}


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a clustered fixed-design instance.

    Cluster sizes halve geometrically, which concentrates kernel mass on the
    big clusters and makes uniform column sampling fail first.
    """

    n: int
    d: int
    n_clusters: int
    cluster_std: float
    target: str = "sine"
    sigma: float = 0.1
    mu: float = 1.0
    center_spread: float = 2.0


def generate_synthetic(spec: SyntheticSpec, rng) -> FixedDesignProblem:
    """Sample a clustered gaussian problem; deterministic for a given spec
    and seed."""
    if spec.n < 1:
        raise InputError("n must be at least 1")
    if spec.target not in _TARGETS:
        raise InputError(f"unknown target {spec.target!r}; options: {sorted(_TARGETS)}")
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    shares = np.array([2.0**-j for j in range(spec.n_clusters)])
    sizes = np.maximum(1, np.floor(spec.n * shares / shares.sum()).astype(int))
    while sizes.sum() > spec.n:
        sizes[np.argmax(sizes)] -= 1
    sizes[0] += spec.n - sizes.sum()
    centers = gen.normal(0.0, spec.center_spread, size=(spec.n_clusters, spec.d))
    blocks = [
        centers[j] + spec.cluster_std * gen.normal(size=(sizes[j], spec.d))
        for j in range(spec.n_clusters)
    ]
    points = np.vstack(blocks)
    f_star = _TARGETS[spec.target](points)
    labels = f_star + spec.sigma * gen.normal(size=spec.n)
    dataset = Dataset(points=points, labels=labels)
    return FixedDesignProblem(
        dataset=dataset, f_star=f_star, noise_std=spec.sigma, mu=spec.mu
    )


@dataclass(frozen=True)
class MonotonicityReport:
    """Violations found while replaying a stream against the exact formulas."""

    t_max: int
    violations: tuple[tuple[str, int, int, float], ...]

    @property
    def ok(self) -> bool:
        return not self.violations


def monotonicity_audit(
    dataset: Dataset, kernel: KernelSpec, gamma: float, t_max: int
) -> MonotonicityReport:
    """Replay prefixes of a stream and check the exact-score monotonicity
    laws: scores and probabilities never increase, the effective dimension
    never decreases, its increment matches the bordering formula, and the
    Schur complement stays above gamma.
    """
    t_max = min(int(t_max), len(dataset))
    if t_max < 2:
        return MonotonicityReport(t_max=t_max, violations=())
    K = gram(dataset, kernel, t_max)
    violations: list[tuple[str, int, int, float]] = []
    prev = exact_rls(K[:1, :1], gamma)
    for t in range(1, t_max):
        cur = exact_rls(K[: t + 1, : t + 1], gamma)
        tau_up = cur.tau[:t] - prev.tau
        for i in np.flatnonzero(tau_up > 1e-9):
            violations.append(("tau", t + 1, int(i), float(tau_up[i])))
        if prev.deff > 0 and cur.deff > 0:
            p_up = cur.probabilities[:t] - prev.probabilities
            for i in np.flatnonzero(p_up > 1e-9):
                violations.append(("probability", t + 1, int(i), float(p_up[i])))
        if cur.deff < prev.deff - 1e-9:
            violations.append(("deff", t + 1, -1, float(prev.deff - cur.deff)))
        delta, xi = deff_increment_exact(K[:t, :t], K[:t, t], float(K[t, t]), gamma)
        if xi < gamma - 1e-9:
            violations.append(("xi", t + 1, -1, float(gamma - xi)))
        gap = abs(cur.deff - prev.deff - delta)
        if gap > 1e-8:
            violations.append(("increment", t + 1, -1, float(gap)))
        prev = cur
    return MonotonicityReport(t_max=t_max, violations=tuple(violations))


def checkpoint_selection(
    checkpoint: RunCheckpoint, t: int, algorithm: str
) -> Selection:
    """Rebuild the selection a checkpoint describes.

    Streaming checkpoints store integer dictionary weights (selection entries
    are their square roots); batch checkpoints store the final real weights
    directly.
    """
    if algorithm == "batch-exact":
        pairs = {int(i): float(w) for i, w in zip(checkpoint.indices, checkpoint.weights)}
        return build_selection(checkpoint.indices, pairs, t)
    weights = {int(i): math.sqrt(float(b)) for i, b in zip(checkpoint.indices, checkpoint.weights)}
    return build_selection(checkpoint.indices, weights, t)


def rebuild_factor(
    dataset: Dataset, kernel: KernelSpec, selection: Selection, gamma: float
) -> NystromFactor:
    """Second pass: assemble the full-row factor for a stored selection."""
    K = gram(dataset, kernel, selection.t)
    return nystrom_approx(K, selection, gamma)


@dataclass(frozen=True)
class CheckpointRecord:
    """One verified checkpoint, ready for CSV/JSON emission."""

    step: int
    dict_size: int
    deff_exact: float
    deff_tilde: float
    spectral_gap: float
    psi_gap: float
    lower_ok: bool
    upper_ok: bool
    risk_exact: float = float("nan")
    risk_approx: float = float("nan")
    risk_ratio_bound: float = float("nan")

    def as_dict(self) -> dict:
        return {
            "t": self.step,
            "Q_t": self.dict_size,
            "deff_exact": self.deff_exact,
            "deff_tilde": self.deff_tilde,
            "spectral_gap": self.spectral_gap,
            "psi_gap": self.psi_gap,
            "lower_ok": self.lower_ok,
            "upper_ok": self.upper_ok,
            "risk_exact": self.risk_exact,
            "risk_approx": self.risk_approx,
            "risk_ratio_bound": self.risk_ratio_bound,
        }


def verify_checkpoints(
    dataset: Dataset,
    kernel: KernelSpec,
    gamma: float,
    epsilon: float,
    checkpoints: Sequence[RunCheckpoint],
    algorithm: str,
    *,
    problem: FixedDesignProblem | None = None,
    tol: float = CONDITION_TOL,
) -> list[CheckpointRecord]:
    """Re-stream the data and verify every checkpoint of a finished run.

    Rebuilds the dense prefix matrix and the checkpoint's approximation,
    evaluates both PSD inequalities, the spectral and projection gaps, the
    exact effective dimension, and (when targets are known) the closed-form
    risks of the exact and approximate solvers.
    """
    records: list[CheckpointRecord] = []
    for cp in checkpoints:
        t = cp.step
        K = gram(dataset, kernel, t)
        selection = checkpoint_selection(cp, t, algorithm)
        factor = nystrom_approx(K, selection, gamma)
        K_tilde = factor.materialize()
        report = check_condition(
            K, K_tilde, gamma, epsilon, tol=tol, step=t, selection=selection
        )
        deff_exact = exact_rls(K, gamma).deff
        risk_exact = risk_approx = bound = float("nan")
        if problem is not None:
            sub = problem.prefix(t)
            risk_exact = fixed_design_risk(K, sub)
            risk_approx = fixed_design_risk(K_tilde, sub)
            bound = risk_ratio_bound(gamma, problem.mu, epsilon)
        records.append(
            CheckpointRecord(
                step=t,
                dict_size=len(set(selection.indices)),
                deff_exact=deff_exact,
                deff_tilde=cp.deff_tilde,
                spectral_gap=report.spectral_gap,
                psi_gap=report.psi_gap,
                lower_ok=report.lower_psd_ok,
                upper_ok=report.upper_psd_ok,
                risk_exact=risk_exact,
                risk_approx=risk_approx,
                risk_ratio_bound=bound,
            )
        )
    return records


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def write_records_csv(records: Sequence[CheckpointRecord], path) -> None:
    """Plot-ready CSV: '.' decimals, 17 significant digits, no locale."""
    if not records:
        raise InputError("nothing to write")
    fields = list(records[0].as_dict())
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(fields)
        for rec in records:
            writer.writerow([_fmt(v) for v in rec.as_dict().values()])


def write_records_json(records: Sequence[CheckpointRecord], path, *, meta: dict | None = None) -> None:
    payload = {
        "spec_version": SCHEMA_VERSION,
        "records": [rec.as_dict() for rec in records],
    }
    if meta:
        payload.update(meta)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
