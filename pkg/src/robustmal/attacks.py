"""Gradient-based evasion attacks.

Attacks ascend the cross-entropy of the true label (or descend the
cross-entropy of a target label) with Adam on a continuous relaxation of the
input, keeping every iterate inside the feasible set. Binary rounding is
applied only when scoring candidates, so gradients stay informative.

A model is anything exposing ``predict_proba(X)`` and
``loss_and_grad(X, labels) -> (per_sample_loss, grad_X)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import NoiseSpec, salt_pepper
from .errors import ContractError, ShapeError
from .tensor_core import AdamState, adam_step, cross_entropy_per_sample

NORMS = (None, "l0", "l2", "linf")
DUAL_NORM = {"l2": "l2", "linf": "l1", "l1": "linf", "l0": "linf"}
FEASIBILITY_TOL = 1e-9


@dataclass
class AttackConfig:
    iterations: int = 55
    restarts: int = 3
    learning_rate: float = 0.01
    norm: str | None = None
    epsilon: float | None = None
    box_lower: float | np.ndarray = 0.0
    box_upper: float | np.ndarray = 1.0
    insertion_only: bool = False
    targeted: int | None = None
    restart_noise_alpha: float = 0.02
    binary: bool = True

    def validate(self, true_labels=None):
        if self.iterations <= 0:
            raise ContractError("iterations must be positive")
        if self.restarts < 1:
            raise ContractError("need at least one restart")
        if self.learning_rate <= 0:
            raise ContractError("attack learning rate must be positive")
        if self.norm not in NORMS:
            raise ContractError(f"unknown norm {self.norm!r}")
        if self.epsilon is not None and (self.epsilon < 0 or math.isnan(self.epsilon)):
            raise ContractError(f"epsilon must be nonnegative, got {self.epsilon}")
        if np.any(np.asarray(self.box_lower) > np.asarray(self.box_upper)):
            raise ContractError("box lower bound exceeds upper bound")
        if not 0 <= self.restart_noise_alpha <= 1:
            raise ContractError("restart noise fraction must lie in [0, 1]")
        if self.targeted is not None and true_labels is not None:
            if np.any(np.asarray(true_labels) == self.targeted):
                raise ContractError("target label must differ from the true label")

    @property
    def budget(self) -> float | None:
        """The norm bound, or None when unconstrained."""
        if self.norm is None or self.epsilon is None:
            return None
        return float(self.epsilon)


@dataclass
class PerturbationResult:
    """Attack outcome for a batch; every field has a leading sample axis."""

    delta: np.ndarray
    adversarial_sample: np.ndarray
    loss_before: np.ndarray
    loss_after: np.ndarray
    evaded: np.ndarray
    restart_index_chosen: np.ndarray
    restart_losses: np.ndarray = field(repr=False)

    def __len__(self):
        return len(self.loss_before)


def _l0_keep_order(delta, grad):
    """Column order of priority for keeping perturbed coordinates, per row."""
    # stable sorts: |grad*delta| first, ties by |delta|, then lowest index
    order = np.argsort(-np.abs(delta), axis=1, kind="stable")
    if grad is not None:
        score = np.take_along_axis(np.abs(grad * delta), order, axis=1)
        order = np.take_along_axis(order, np.argsort(-score, axis=1, kind="stable"), axis=1)
    return order


def _project_norm(delta, norm, eps, grad=None):
    if norm is None or eps is None:
        return delta
    if norm == "linf":
        return np.clip(delta, -eps, eps)
    if norm == "l2":
        lengths = np.linalg.norm(delta, axis=1, keepdims=True)
        scale = np.minimum(1.0, eps / np.maximum(lengths, 1e-300))
        return delta * scale
    keep = int(math.floor(eps + 1e-9))
    if keep >= delta.shape[1]:
        return delta
    drop = _l0_keep_order(delta, grad)[:, keep:]
    out = delta.copy()
    np.put_along_axis(out, drop, 0.0, axis=1)
    return out


def _truncate_discrete(delta, priority_order, norm, eps):
    """Drop lowest-priority coordinates of a rounded delta until it fits the budget."""
    if norm is None or eps is None:
        return delta
    ordered = np.take_along_axis(delta, priority_order, axis=1)
    if norm == "l0":
        size = (ordered != 0).astype(np.float64)
        keep = np.cumsum(size, axis=1) <= math.floor(eps + 1e-9)
    elif norm == "l2":
        keep = np.cumsum(ordered**2, axis=1) <= eps * eps + FEASIBILITY_TOL
    else:
        keep = np.abs(ordered) <= eps + FEASIBILITY_TOL
    kept = np.where(keep, ordered, 0.0)
    out = np.zeros_like(delta)
    np.put_along_axis(out, priority_order, kept, axis=1)
    return out


def project(candidate, x_origin, config: AttackConfig, grad=None, round_binary=None):
    """Map a candidate into the feasible set of ``config``.

    Applied in order: insertion-only floor on the perturbation, box clip,
    norm-ball projection of the perturbation, then (if requested) rounding
    at 0.5 followed by dropping the weakest flips that would break the
    budget. L0 keeps the coordinates with the largest ``|grad * delta|``
    (``|delta|`` when no gradient is given).
    """
    x = np.atleast_2d(np.asarray(x_origin, dtype=np.float64))
    c = np.atleast_2d(np.asarray(candidate, dtype=np.float64))
    if c.shape != x.shape:
        raise ShapeError(f"candidate {c.shape} does not match origin {x.shape}")
    g = None if grad is None else np.atleast_2d(grad)
    round_binary = config.binary if round_binary is None else round_binary
    lower = np.broadcast_to(np.asarray(config.box_lower, dtype=np.float64), x.shape[1:])
    upper = np.broadcast_to(np.asarray(config.box_upper, dtype=np.float64), x.shape[1:])

    if config.insertion_only:
        c = np.maximum(c, x)
    c = np.clip(c, lower, upper)
    delta = _project_norm(c - x, config.norm, config.budget, g)
    out = x + delta
    if round_binary:
        rounded = np.clip((out >= 0.5).astype(np.float64), lower, upper)
        if config.budget is None:
            out = rounded
        else:
            priority = _l0_keep_order(delta, g)
            out = x + _truncate_discrete(rounded - x, priority, config.norm, config.budget)
    if np.ndim(candidate) == 1:
        return out[0]
    return out


def feasibility_violations(adversarial, x_origin, config: AttackConfig, tol=FEASIBILITY_TOL):
    """Human-readable list of constraint violations; empty when feasible."""
    adv = np.atleast_2d(np.asarray(adversarial, dtype=np.float64))
    x = np.atleast_2d(np.asarray(x_origin, dtype=np.float64))
    problems = []
    if adv.shape != x.shape:
        return [f"shape {adv.shape} differs from origin {x.shape}"]
    if not np.all(np.isfinite(adv)):
        problems.append("non-finite entries")
    lower = np.asarray(config.box_lower, dtype=np.float64)
    upper = np.asarray(config.box_upper, dtype=np.float64)
    if np.any(adv < lower - tol) or np.any(adv > upper + tol):
        problems.append("outside box")
    delta = adv - x
    if config.insertion_only and np.any(delta < -tol):
        problems.append("removes features under insertion-only")
    eps = config.budget
    if eps is not None:
        if config.norm == "l0":
            size = np.count_nonzero(np.abs(delta) > tol, axis=1)
            limit = math.floor(eps + 1e-9)
        elif config.norm == "l2":
            size, limit = np.linalg.norm(delta, axis=1), eps + tol
        else:
            size, limit = np.abs(delta).max(axis=1, initial=0.0), eps + tol
        if np.any(size > limit):
            problems.append(f"{config.norm} budget {eps} exceeded")
    if config.binary and np.any((adv != 0.0) & (adv != 1.0)):
        problems.append("non-binary entries")
    return problems


def check_feasible(adversarial, x_origin, config: AttackConfig):
    problems = feasibility_violations(adversarial, x_origin, config)
    if problems:
        raise ContractError("infeasible adversarial samples: " + "; ".join(problems))


def _predict(model, x):
    return np.argmax(model.predict_proba(x), axis=1)


def gradient_attack(model, x, y, config: AttackConfig | None = None, seed=None) -> PerturbationResult:
    """Run ``config.restarts`` independent Adam attacks and keep the best.

    Each restart starts from salt-and-pepper noise on ``x`` (projected back
    into the feasible set) and takes ``config.iterations`` steps. Within a
    restart the best feasible iterate is tracked, and the clean point itself
    is always a candidate, so a non-targeted attack never lowers the loss.
    Accepts a single sample or a batch.
    """
    config = config or AttackConfig()
    single = np.ndim(x) == 1
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    if y.shape != (x.shape[0],):
        raise ShapeError(f"expected {x.shape[0]} labels, got {y.shape}")
    config.validate(y)
    rng = np.random.default_rng(seed)
    n, d = x.shape
    k = config.restarts
    targeted = config.targeted is not None
    objective_labels = np.full(n, config.targeted) if targeted else y

    def objective(candidates, labels):
        losses = cross_entropy_per_sample(model.predict_proba(candidates), labels)
        return -losses if targeted else losses

    loss_before = cross_entropy_per_sample(model.predict_proba(x), y)
    best = x.copy()
    best_obj = objective(x, objective_labels)
    best_restart = np.full(n, -1)
    restart_obj = np.empty((n, k))

    x_rep = np.tile(x, (k, 1))
    labels_rep = np.tile(objective_labels, k)
    noise = NoiseSpec(config.restart_noise_alpha, config.box_lower, config.box_upper)
    start = salt_pepper(x_rep, noise, rng) if noise.count(d) else x_rep.copy()
    current = project(start, x_rep, config, round_binary=False)

    run_best = project(current, x_rep, config)
    run_obj = objective(run_best, labels_rep)
    last_scored = run_best.copy()
    state = AdamState.zeros_like([current], learning_rate=config.learning_rate)
    zero_budget = config.budget == 0.0
    for _ in range(0 if zero_budget else config.iterations):
        _, grad = model.loss_and_grad(current, labels_rep)
        # Adam minimizes, so hand it the negated loss gradient to ascend
        (stepped,), state = adam_step(state, [current], [grad if targeted else -grad])
        current = project(stepped, x_rep, config, grad=grad, round_binary=False)
        candidate = project(current, x_rep, config, grad=grad)
        # a candidate equal to the last scored one has the same objective
        changed = np.flatnonzero(np.any(candidate != last_scored, axis=1))
        if len(changed):
            obj = objective(candidate[changed], labels_rep[changed])
            last_scored[changed] = candidate[changed]
            improved = obj > run_obj[changed]
            better = changed[improved]
            run_best[better] = candidate[better]
            run_obj[better] = obj[improved]

    for r in range(k):
        rows = slice(r * n, (r + 1) * n)
        restart_obj[:, r] = run_obj[rows]
        better = run_obj[rows] > best_obj
        best[better] = run_best[rows][better]
        best_obj[better] = run_obj[rows][better]
        best_restart[better] = r

    loss_after = cross_entropy_per_sample(model.predict_proba(best), y)
    evaded = _predict(model, best) != y
    result = PerturbationResult(
        delta=best - x,
        adversarial_sample=best,
        loss_before=loss_before,
        loss_after=loss_after,
        evaded=evaded,
        restart_index_chosen=best_restart,
        restart_losses=-restart_obj if targeted else restart_obj,
    )
    if single:
        return PerturbationResult(
            result.delta[0],
            result.adversarial_sample[0],
            float(loss_before[0]),
            float(loss_after[0]),
            bool(evaded[0]),
            int(best_restart[0]),
            result.restart_losses[0],
        )
    return result


def dual_norm(v, norm):
    v = np.atleast_2d(v)
    kind = DUAL_NORM[norm]
    if kind == "l2":
        return np.linalg.norm(v, axis=1)
    if kind == "l1":
        return np.abs(v).sum(axis=1)
    return np.abs(v).max(axis=1)


@dataclass
class TransferEntry:
    delta: np.ndarray
    loss_change: np.ndarray
    bound: np.ndarray
    bound_satisfied: np.ndarray
    gray_box_gain: np.ndarray


@dataclass
class TransferReport:
    entries: TransferEntry
    white_box_gain: np.ndarray
    samples: int

    @property
    def mean_gray_box_gain(self) -> float:
        return float(np.mean(self.entries.gray_box_gain))

    @property
    def mean_white_box_gain(self) -> float:
        return float(np.mean(self.white_box_gain))

    @property
    def violations(self) -> int:
        return int(np.count_nonzero(~self.entries.bound_satisfied))

    def to_dict(self) -> dict:
        return {
            "samples": int(len(self.white_box_gain)),
            "segment_samples": self.samples,
            "mean_gray_box_loss_increase": self.mean_gray_box_gain,
            "mean_white_box_loss_increase": self.mean_white_box_gain,
            "bound_violations": self.violations,
            "mean_abs_loss_change": float(np.mean(self.entries.loss_change)),
            "mean_bound": float(np.mean(self.entries.bound)),
        }


def _require_budget(config):
    if config.budget is None or not math.isfinite(config.budget):
        raise ContractError("transfer analysis needs a finite norm budget")


def segment_bound(model, x, y, delta, config: AttackConfig, samples=20):
    """``eps_eff * max_t ||grad L(x + t*delta)||_*`` over t in {0, 1/T, ..., 1}.

    For L0 budgets the effective radius is ``eps * box width``, which bounds
    ``||delta||_1``.
    """
    _require_budget(config)
    x = np.atleast_2d(x)
    delta = np.atleast_2d(delta)
    y = np.atleast_1d(y)
    radius = float(config.budget)
    if config.norm == "l0":
        width = np.max(np.asarray(config.box_upper) - np.asarray(config.box_lower))
        radius *= float(width)
    peak = np.zeros(len(x))
    for t in np.linspace(0.0, 1.0, samples + 1):
        _, grad = model.loss_and_grad(x + t * delta, y)
        peak = np.maximum(peak, dual_norm(grad, config.norm))
    return radius * peak


def transfer_attack(surrogate, target, x, y, config: AttackConfig, seed=None, samples=20) -> TransferEntry:
    """Craft perturbations on ``surrogate`` and measure their effect on ``target``."""
    _require_budget(config)
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    if surrogate.num_classes != target.num_classes:
        raise ShapeError("surrogate and target disagree on the number of classes")
    crafted = gradient_attack(surrogate, x, y, config, seed)
    delta = crafted.delta
    before = cross_entropy_per_sample(target.predict_proba(x), y)
    after = cross_entropy_per_sample(target.predict_proba(x + delta), y)
    change = np.abs(after - before)
    bound = segment_bound(target, x, y, delta, config, samples)
    return TransferEntry(delta, change, bound, change <= bound + 1e-6, after - before)


def transfer_report(surrogate, target, x, y, config: AttackConfig, seed=None, samples=20) -> TransferReport:
    """Gray-box transfer entries alongside the white-box loss gain on ``target``."""
    entries = transfer_attack(surrogate, target, x, y, config, seed, samples)
    white = gradient_attack(target, x, y, config, seed)
    return TransferReport(entries, white.loss_after - white.loss_before, samples)
