"""End-to-end multi-source adaptation pipeline.

Flow, per source: train a classifier on the labeled source, summarize its
latent encodings as class-conditional Gaussian prototypes, record the
sliced-Wasserstein distance between the encoded source and a prototype
draw, release the source data, then adapt a copy of the encoder so the
encoded target matches fresh prototype draws. Sources are finally combined
by weights inversely proportional to the summed recorded distances, and
the ensemble predicts a weighted mixture of per-source probabilities.

The per-source work is split into two stage functions (`source_stage`,
`target_stage`) so the in-process runner and the simulated multi-node
protocol execute literally the same code on each side of the privacy
boundary.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import rng as rngmod
from .errors import DataAccessRevoked, DivergenceError, InvalidDimension, ProtoAdaptError
from .nets import (
    ClassifierParams,
    EncoderParams,
    SourceModel,
    TrainConfig,
    accuracy,
    ce_risk,
    encode_with_cache,
    encoder_backward,
    make_optimizer,
    train_source,
)
from .prototypes import ClassPrototypes, fit_prototypes
from .sliced import random_index_distance, sample_projections, sliced_w2, sliced_w2_grad

__all__ = [
    "RunConfig",
    "PseudoTargetDecision",
    "AdaptationRecord",
    "AdaptationReport",
    "BoundReport",
    "RunResult",
    "PrivateDataset",
    "adapt_encoder",
    "decide_sampling_distribution",
    "pseudo_target_distribution",
    "compute_weights",
    "predict_ensemble",
    "verify_ensemble_bound",
    "confidence_term",
    "bound_report",
    "run_algorithm1",
    "direct_adapt_baseline",
    "source_combined_baseline",
    "evaluate_ensemble",
    "estimate_distance",
]


# --------------------------------------------------------------------------
# Configuration
# --------------------------------------------------------------------------


@dataclass
class RunConfig:
    """All knobs for a pipeline run.

    Attributes
    ----------
    hidden : tuple of int
        Encoder hidden layer widths (a ReLU follows every affine layer).
    latent_dim : int
        Output dimensionality of the encoder.
    train : TrainConfig
        Per-source supervised training settings.
    n_projections : int
        Random directions per sliced-distance evaluation (default 100).
    adapt_steps : int
        Maximum encoder adaptation steps per source.
    adapt_batch : int
        Batch size for both the target batch and the prototype draw during
        adaptation; the two sides stay equal by construction.
    adapt_lr : float
        Adaptation learning rate.
    adapt_optimizer : str
        ``"adam"`` or ``"sgd"``.
    conf_threshold, frac_threshold : float
        A target sample is high-confidence when its max class probability
        exceeds ``conf_threshold``; pseudo-label sampling is used when the
        high-confidence fraction reaches ``frac_threshold``.
    weight_strategy : str
        ``"swd"`` (distance-based), ``"uniform"``, or ``"single-best"``.
    weight_eps : float
        Floor applied to summed distances so a perfectly aligned source
        (distance 0) still yields finite weights.
    distance_sets : int
        Projection sets averaged when recording a stored distance.
    eval_subsample : int
        Cap on points per side in stored-distance estimates.
    early_stop_window, early_stop_tol, early_stop_min_steps :
        Adaptation stops once the trailing ``window``-step average of the
        objective improves by less than ``tol`` over the previous window,
        checked only after ``min_steps`` steps.
    fixed_intermediate : bool
        Draw one prototype batch up front and reuse it every step instead
        of resampling. Useful for exact-trace tests.
    pairing : str
        ``"sorted"`` couples projected points by rank (the optimal 1-D
        transport plan); ``"random"`` couples random index pairs instead —
        kept only to compare against the principled choice.
    n_classes : int or None
        Total label-space size; inferred from the sources when None.
    seed : int
        Master seed; every random decision derives from it.
    workers : int
        Per-source stages run in this many threads (join steps stay
        single-threaded).
    """

    hidden: tuple = (64,)
    latent_dim: int = 16
    train: TrainConfig = field(default_factory=TrainConfig)
    n_projections: int = 100
    adapt_steps: int = 500
    adapt_batch: int = 64
    adapt_lr: float = 1e-3
    adapt_optimizer: str = "adam"
    conf_threshold: float = 0.8
    frac_threshold: float = 0.8
    weight_strategy: str = "swd"
    weight_eps: float = 1e-8
    distance_sets: int = 8
    eval_subsample: int = 2048
    early_stop_window: int = 50
    early_stop_tol: float = 1e-5
    early_stop_min_steps: int = 100
    fixed_intermediate: bool = False
    pairing: str = "sorted"
    n_classes: int | None = None
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.adapt_steps < 0:
            raise ValueError("adapt_steps must be >= 0")
        if self.pairing not in ("sorted", "random"):
            raise ValueError(f"unknown pairing {self.pairing!r}")
        if not (0.0 < self.conf_threshold < 1.0 and 0.0 < self.frac_threshold < 1.0):
            raise ValueError("confidence thresholds must lie in (0, 1)")
        if self.weight_strategy not in ("swd", "uniform", "single-best"):
            raise ValueError(f"unknown weight_strategy {self.weight_strategy!r}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


# --------------------------------------------------------------------------
# Reports
# --------------------------------------------------------------------------


@dataclass
class PseudoTargetDecision:
    """Record of how the prototype sampling distribution was chosen."""

    fraction_confident: float
    mode: str  # "uniform" | "pseudo"
    conf_threshold: float
    frac_threshold: float
    labels: np.ndarray  # prototype classes the distribution is aligned to
    distribution: np.ndarray


@dataclass
class AdaptationRecord:
    """Everything measured for one source along the way."""

    source_index: int
    n_samples: int
    source_risk: float
    d_source: float  # stored distance source ↔ prototype draw
    d_target_initial: float
    d_target_final: float
    steps_run: int
    step_trace: list
    pseudo: PseudoTargetDecision
    train_trace: list = field(default_factory=list, repr=False)


@dataclass
class AdaptationReport:
    records: list
    weights: np.ndarray
    weight_strategy: str
    excluded: list = field(default_factory=list)  # (source_index, reason)
    private: bool = True

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if len(w) and abs(float(w.sum()) - 1.0) > 1e-9:
            raise ValueError("weights must sum to 1")
        for r in self.records:
            if min(r.d_source, r.d_target_initial, r.d_target_final) < 0:
                raise ValueError("distances must be non-negative")


@dataclass
class BoundReport:
    """Computable pieces of the multi-source target-risk bound.

    ``rhs_terms[k]`` holds (source_risk, w_target, w_source, confidence)
    where the two middle entries are square roots of the stored sliced
    distances, i.e. sliced surrogates for a true Wasserstein distance. The
    irreducible combined-risk term is not estimable from data and is
    carried as a note instead of a number.
    """

    xi: float
    zeta: float
    weights: np.ndarray
    rhs_terms: list  # per source: dict with the four computable terms
    rhs_total: float
    distance_estimator: str = "sqrt(sliced-W2)"
    irreducible_term: str = "not computable from observed data"
    measured_target_risk: float | None = None


@dataclass
class RunResult:
    models: list  # adapted SourceModel per retained source
    weights: np.ndarray
    report: AdaptationReport
    n_classes: int

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return predict_ensemble(self.models, self.weights, x)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.predict_proba(x), axis=1)


# --------------------------------------------------------------------------
# Private data handle
# --------------------------------------------------------------------------


class PrivateDataset:
    """Revocable handle around one source's arrays.

    The pipeline reads sources only through this wrapper and revokes it as
    soon as the summary statistics exist, so any later code path that
    still tries to touch source rows fails loudly instead of silently
    leaking them into the adaptation phase.
    """

    def __init__(self, x: np.ndarray, y: np.ndarray):
        self._x = np.asarray(x, dtype=np.float64)
        self._y = np.asarray(y, dtype=np.int64)
        if self._x.ndim != 2 or self._y.shape != (self._x.shape[0],):
            raise InvalidDimension("expected x (n, d) with matching 1-D labels")
        self._revoked = False

    @property
    def revoked(self) -> bool:
        return self._revoked

    @property
    def x(self) -> np.ndarray:
        if self._revoked:
            raise DataAccessRevoked("source features were released")
        return self._x

    @property
    def y(self) -> np.ndarray:
        if self._revoked:
            raise DataAccessRevoked("source labels were released")
        return self._y

    def revoke(self) -> None:
        self._revoked = True
        self._x = None
        self._y = None


# --------------------------------------------------------------------------
# Distances
# --------------------------------------------------------------------------


def estimate_distance(
    z: np.ndarray,
    protos: ClassPrototypes,
    class_probs: np.ndarray | None,
    n_sets: int,
    n_projections: int,
    max_points: int,
    rng: np.random.Generator,
) -> float:
    """Stored-distance estimator: mean sliced-W2 over several projection sets.

    Each set pairs a fresh prototype draw (same size as the real batch)
    with the encoded points, capping both sides at ``max_points``.
    """
    z = np.asarray(z, dtype=np.float64)
    m = min(z.shape[0], max_points)
    if m < z.shape[0]:
        z = z[rng.choice(z.shape[0], size=m, replace=False)]
    total = 0.0
    for _ in range(n_sets):
        a, _ = protos.sample(m, rng, class_probs=class_probs)
        proj = sample_projections(z.shape[1], n_projections, rng)
        total += float(sliced_w2(z, a, proj))
    return total / n_sets


# --------------------------------------------------------------------------
# Pseudo-target sampling distribution
# --------------------------------------------------------------------------


def decide_sampling_distribution(
    probs: np.ndarray,
    protos: ClassPrototypes,
    conf_threshold: float = 0.8,
    frac_threshold: float = 0.8,
) -> PseudoTargetDecision:
    """Choose between uniform and pseudo-label prototype sampling.

    A target row counts as high-confidence when its max predicted
    probability exceeds ``conf_threshold``. When at least ``frac_threshold``
    of rows are high-confidence, prototypes are sampled from the empirical
    pseudo-label distribution of those rows; otherwise uniformly over the
    classes the prototypes actually contain. Mass predicted for classes
    absent from the prototypes is dropped with a warning.
    """
    if not (0.0 < conf_threshold < 1.0 and 0.0 < frac_threshold < 1.0):
        raise ValueError("thresholds must lie in (0, 1)")
    probs = np.asarray(probs, dtype=np.float64)
    top = probs.max(axis=1)
    confident = top > conf_threshold
    fraction = float(confident.mean()) if probs.shape[0] else 0.0
    labels = protos.labels
    if fraction >= frac_threshold:
        picks = np.argmax(probs[confident], axis=1)
        counts = np.bincount(picks, minlength=probs.shape[1]).astype(np.float64)
        dist = protos.restrict(counts / counts.sum(), np.arange(probs.shape[1]))
        mode = "pseudo"
    else:
        dist = np.full(len(labels), 1.0 / len(labels))
        mode = "uniform"
    return PseudoTargetDecision(
        fraction_confident=fraction,
        mode=mode,
        conf_threshold=conf_threshold,
        frac_threshold=frac_threshold,
        labels=labels.copy(),
        distribution=dist,
    )


def pseudo_target_distribution(
    model: SourceModel,
    protos: ClassPrototypes,
    target_x: np.ndarray,
    conf_threshold: float = 0.8,
    frac_threshold: float = 0.8,
) -> PseudoTargetDecision:
    """Decision for one source model applied to the raw target features."""
    return decide_sampling_distribution(
        model.predict_proba(target_x), protos, conf_threshold, frac_threshold
    )


# --------------------------------------------------------------------------
# Encoder adaptation
# --------------------------------------------------------------------------


def adapt_encoder(
    encoder: EncoderParams,
    classifier: ClassifierParams,
    protos: ClassPrototypes,
    target_x: np.ndarray,
    cfg: RunConfig,
    rng: np.random.Generator,
    class_probs: np.ndarray | None = None,
):
    """Minimize the sliced distance between encoded target and prototype draws.

    The classifier is untouched — it is accepted only so the call site
    reads like the full parameter hand-off. The returned encoder is a
    fresh copy warm-started from ``encoder``. Returns ``(adapted, trace)``
    where ``trace`` holds the per-step mini-batch objective.

    Prototype draws are latent points used as-is (they are not passed back
    through the encoder): the alignment objective compares projections of
    encoded target rows against projections of prototype samples directly.
    """
    target_x = np.asarray(target_x, dtype=np.float64)
    if target_x.shape[0] == 0:
        raise ValueError("target is empty")
    if protos.dim != encoder.d_latent:
        raise InvalidDimension(
            f"prototype dim {protos.dim} != encoder latent dim {encoder.d_latent}"
        )
    adapted = encoder.copy()
    if cfg.adapt_steps == 0:
        return adapted, []
    opt = make_optimizer(
        TrainConfig(lr=cfg.adapt_lr, optimizer=cfg.adapt_optimizer, batch_size=cfg.adapt_batch)
    )
    tensors = adapted.tensors()
    n_t = target_x.shape[0]
    batch = min(cfg.adapt_batch, n_t)
    fixed_draw = None
    if cfg.fixed_intermediate:
        fixed_draw, _ = protos.sample(batch, rng, class_probs=class_probs)
    trace = []
    w, tol, warmup = cfg.early_stop_window, cfg.early_stop_tol, cfg.early_stop_min_steps
    for step in range(cfg.adapt_steps):
        if n_t > batch:
            xb = target_x[rng.choice(n_t, size=batch, replace=False)]
        else:
            xb = target_x
        if fixed_draw is not None:
            a = fixed_draw
        else:
            a, _ = protos.sample(xb.shape[0], rng, class_probs=class_probs)
        proj = sample_projections(adapted.d_latent, cfg.n_projections, rng)
        latent, cache = encode_with_cache(adapted, xb)
        if cfg.pairing == "random":
            value, d_latent = random_index_distance(latent, a, proj, rng)
        else:
            value, d_latent = sliced_w2_grad(latent, a, proj)
        if not np.isfinite(value):
            raise DivergenceError("adaptation objective is non-finite", step)
        grads, _ = encoder_backward(adapted, cache, d_latent)
        opt.update(tensors, grads)
        trace.append(value)
        if len(trace) >= max(warmup, 2 * w):
            recent = float(np.mean(trace[-w:]))
            previous = float(np.mean(trace[-2 * w : -w]))
            if previous - recent < tol:
                break
    return adapted, trace


# --------------------------------------------------------------------------
# Weights / ensemble
# --------------------------------------------------------------------------


def compute_weights(
    d_target: np.ndarray,
    d_source: np.ndarray,
    strategy: str = "swd",
    eps: float = 1e-8,
) -> np.ndarray:
    """Mixing weights from the stored distances.

    ``"swd"``: w_k proportional to 1 / (d_target_k + d_source_k), with the
    sum floored at ``eps`` so a perfectly aligned source stays finite (the
    floor only engages below ``eps``, leaving ordinary values untouched).
    ``"uniform"``: equal weights. ``"single-best"``: point mass on the
    smallest summed distance.
    """
    d_target = np.asarray(d_target, dtype=np.float64)
    d_source = np.asarray(d_source, dtype=np.float64)
    if d_target.shape != d_source.shape or d_target.ndim != 1:
        raise InvalidDimension("distance vectors must be 1-D and equal length")
    if d_target.size == 0:
        raise ValueError("need at least one source")
    if np.any(d_target < 0) or np.any(d_source < 0):
        raise ValueError("distances must be non-negative")
    n = d_target.size
    if strategy == "uniform":
        return np.full(n, 1.0 / n)
    total = d_target + d_source
    if strategy == "single-best":
        w = np.zeros(n)
        w[int(np.argmin(total))] = 1.0
        return w
    if strategy != "swd":
        raise ValueError(f"unknown strategy {strategy!r}")
    inv = 1.0 / np.maximum(total, eps)
    return inv / inv.sum()


def predict_ensemble(models, weights, x: np.ndarray) -> np.ndarray:
    """Row-wise convex combination of per-model class probabilities."""
    weights = np.asarray(weights, dtype=np.float64)
    if len(models) != weights.shape[0]:
        raise InvalidDimension("one weight per model required")
    if abs(float(weights.sum()) - 1.0) > 1e-9 or np.any(weights < 0):
        raise ValueError("weights must be a simplex vector")
    out = None
    for model, w in zip(models, weights):
        p = model.predict_proba(x)
        out = w * p if out is None else out + w * p
    return out


def verify_ensemble_bound(models, weights, x: np.ndarray, y: np.ndarray):
    """Both sides of the mixture cross-entropy inequality.

    Returns (lhs, rhs) = (ensemble CE risk, weighted mean of per-model CE
    risks); lhs ≤ rhs always holds mathematically, so any violation beyond
    float tolerance indicates a bug.
    """
    weights = np.asarray(weights, dtype=np.float64)
    per_model = [model.predict_proba(x) for model in models]
    mix = sum(w * p for w, p in zip(weights, per_model))
    lhs = ce_risk(mix, y)
    rhs = float(sum(w * ce_risk(p, y) for w, p in zip(weights, per_model)))
    return lhs, rhs


# --------------------------------------------------------------------------
# Bound diagnostics
# --------------------------------------------------------------------------

_SAMPLE_CAP = 1e12


def confidence_term(xi: float, zeta: float, n_source: int, n_target: int) -> float:
    """√(2·log(1/ξ))/ζ · (√(1/N) + √(1/M)), sample sizes capped at 1e12."""
    if not (0.0 < xi <= 1.0):
        raise ValueError("xi must lie in (0, 1]")
    if not (0.0 < zeta < np.sqrt(2.0)):
        raise ValueError("zeta must lie in (0, sqrt(2))")
    if n_source < 1 or n_target < 1:
        raise ValueError("sample counts must be >= 1")
    n = min(float(n_source), _SAMPLE_CAP)
    m = min(float(n_target), _SAMPLE_CAP)
    return np.sqrt(2.0 * np.log(1.0 / xi)) / zeta * (np.sqrt(1.0 / n) + np.sqrt(1.0 / m))


def bound_report(
    report: AdaptationReport,
    n_target: int,
    xi: float = 0.05,
    zeta: float = 1.0,
    target_eval: tuple | None = None,
    models=None,
) -> BoundReport:
    """Assemble the computable right-hand side of the target-risk bound.

    Distances enter as √(stored sliced-W2). When ``target_eval=(x, y)`` and
    the models are supplied, the measured ensemble target risk is included
    for comparison.
    """
    terms = []
    for rec in report.records:
        terms.append(
            {
                "source_index": rec.source_index,
                "source_risk": rec.source_risk,
                "w_target": float(np.sqrt(rec.d_target_final)),
                "w_source": float(np.sqrt(rec.d_source)),
                "confidence": confidence_term(xi, zeta, rec.n_samples, n_target),
            }
        )
    w = np.asarray(report.weights, dtype=np.float64)
    per_source = np.array(
        [t["source_risk"] + t["w_target"] + t["w_source"] + t["confidence"] for t in terms]
    )
    measured = None
    if target_eval is not None and models is not None:
        x_eval, y_eval = target_eval
        measured, _ = verify_ensemble_bound(models, w, x_eval, y_eval)
    return BoundReport(
        xi=xi,
        zeta=zeta,
        weights=w.copy(),
        rhs_terms=terms,
        rhs_total=float(np.dot(w, per_source)) if len(terms) else 0.0,
        measured_target_risk=measured,
    )


# --------------------------------------------------------------------------
# Stage functions (shared with the distributed protocol)
# --------------------------------------------------------------------------


def source_stage(data: PrivateDataset, k: int, n_classes: int, cfg: RunConfig):
    """Everything that runs with source data in hand, then releases it.

    Returns (model, prototypes, summary dict). After this returns, the
    handle is revoked: the training set can no longer be read.
    """
    train_rng = rngmod.stream(cfg.seed, "source", k, "train")
    model, train_trace = train_source(
        data.x, data.y, n_classes, cfg.hidden, cfg.latent_dim, cfg.train, train_rng
    )
    z = model.encode(data.x)
    protos = fit_prototypes(z, data.y)
    source_risk = ce_risk(model.predict_proba(data.x), data.y)
    d_rng = rngmod.stream(cfg.seed, "source", k, "distance")
    d_source = estimate_distance(
        z,
        protos,
        protos.empirical_distribution(),
        cfg.distance_sets,
        cfg.n_projections,
        cfg.eval_subsample,
        d_rng,
    )
    n_samples = data.x.shape[0]
    data.revoke()
    summary = {
        "source_risk": source_risk,
        "d_source": d_source,
        "n_samples": n_samples,
        "train_trace": train_trace,
    }
    return model, protos, summary


def target_stage(
    model: SourceModel,
    protos: ClassPrototypes,
    summary: dict,
    k: int,
    target_x: np.ndarray,
    cfg: RunConfig,
):
    """Adaptation of one source's encoder against the shared target.

    Operates purely on the transferred model, prototypes, and scalar
    summary — no source rows exist on this side of the boundary.
    """
    decision = pseudo_target_distribution(
        model, protos, target_x, cfg.conf_threshold, cfg.frac_threshold
    )
    dist_rng = rngmod.stream(cfg.seed, "target", k, "distance")
    z0 = model.encode(target_x)
    d_initial = estimate_distance(
        z0,
        protos,
        decision.distribution,
        cfg.distance_sets,
        cfg.n_projections,
        cfg.eval_subsample,
        dist_rng,
    )
    adapt_rng = rngmod.stream(cfg.seed, "target", k, "adapt")
    adapted_encoder, trace = adapt_encoder(
        model.encoder,
        model.classifier,
        protos,
        target_x,
        cfg,
        adapt_rng,
        class_probs=decision.distribution,
    )
    adapted = SourceModel(adapted_encoder, model.classifier)
    final_rng = rngmod.stream(cfg.seed, "target", k, "distance-final")
    d_final = estimate_distance(
        adapted.encode(target_x),
        protos,
        decision.distribution,
        cfg.distance_sets,
        cfg.n_projections,
        cfg.eval_subsample,
        final_rng,
    )
    record = AdaptationRecord(
        source_index=k,
        n_samples=summary["n_samples"],
        source_risk=summary["source_risk"],
        d_source=summary["d_source"],
        d_target_initial=d_initial,
        d_target_final=d_final,
        steps_run=len(trace),
        step_trace=trace,
        pseudo=decision,
        train_trace=summary["train_trace"],
    )
    return adapted, record


def _infer_n_classes(sources) -> int:
    top = 0
    for _, y in sources:
        y = np.asarray(y)
        if y.size:
            top = max(top, int(y.max()) + 1)
    if top == 0:
        raise ValueError("no labels found across sources")
    return top


def _map_stages(fn, items, workers: int):
    """Index-ordered map with per-item exception capture."""
    results = [None] * len(items)
    errors = [None] * len(items)

    def run(i):
        try:
            results[i] = fn(items[i], i)
        except ProtoAdaptError as exc:  # deliberate: bugs (TypeError etc.) still raise
            errors[i] = exc

    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, range(len(items))))
    else:
        for i in range(len(items)):
            run(i)
    return results, errors


# --------------------------------------------------------------------------
# Full runs
# --------------------------------------------------------------------------


def run_algorithm1(sources, target_x: np.ndarray, cfg: RunConfig) -> RunResult:
    """Train / summarize / release / adapt each source, then combine.

    ``sources`` is a sequence of (x, y) pairs sharing a feature space with
    ``target_x``. A source whose stage fails with a pipeline error is
    excluded with a warning and the weights are renormalized over the
    survivors; if every source fails, the run fails.
    """
    if len(sources) == 0:
        raise ValueError("need at least one source")
    target_x = np.asarray(target_x, dtype=np.float64)
    n_classes = cfg.n_classes if cfg.n_classes is not None else _infer_n_classes(sources)
    handles = [PrivateDataset(x, y) for x, y in sources]
    for h in handles:
        if h._x.shape[1] != target_x.shape[1]:
            raise InvalidDimension("sources and target must share a feature dimension")

    src_out, src_err = _map_stages(
        lambda h, k: source_stage(h, k, n_classes, cfg), handles, cfg.workers
    )
    # Hard privacy boundary: whatever happened above, no source rows are
    # readable once adaptation begins.
    for h in handles:
        h.revoke()

    tgt_items = [(k, out) for k, out in enumerate(src_out) if out is not None]
    tgt_out, tgt_err = _map_stages(
        lambda item, _i: target_stage(item[1][0], item[1][1], item[1][2], item[0], target_x, cfg),
        tgt_items,
        cfg.workers,
    )

    models, records, excluded = [], [], []
    for k, err in enumerate(src_err):
        if err is not None:
            excluded.append((k, f"source stage failed: {err}"))
    for (k, _), out, err in zip(tgt_items, tgt_out, tgt_err):
        if err is not None:
            excluded.append((k, f"adaptation failed: {err}"))
        else:
            models.append(out[0])
            records.append(out[1])
    for k, reason in excluded:
        warnings.warn(f"source {k} excluded: {reason}", stacklevel=2)
    if not records:
        raise ProtoAdaptError("every source failed; nothing to combine")

    weights = compute_weights(
        np.array([r.d_target_final for r in records]),
        np.array([r.d_source for r in records]),
        cfg.weight_strategy,
        cfg.weight_eps,
    )
    report = AdaptationReport(
        records=records,
        weights=weights,
        weight_strategy=cfg.weight_strategy,
        excluded=excluded,
        private=True,
    )
    return RunResult(models=models, weights=weights, report=report, n_classes=n_classes)


def _adapt_direct(model: SourceModel, source_x: np.ndarray, target_x: np.ndarray,
                  cfg: RunConfig, rng: np.random.Generator, row_probs: np.ndarray):
    """Align encoded target to the trained encoder's source latents.

    The source cloud is encoded once and held fixed, exactly like the
    prototype draws in the main path; only the target side carries
    gradients. Letting both sides move admits the degenerate solution of
    collapsing every input to one point, which zeroes the distance while
    destroying the class structure the classifier relies on. Anchor
    minibatches are bootstrap draws weighted by ``row_probs`` so the
    anchor's class mix matches the estimated target distribution, the same
    role class probabilities play in prototype sampling.
    """
    adapted = model.encoder.copy()
    if cfg.adapt_steps == 0:
        return adapted, []
    anchors = model.encode(source_x)
    opt = make_optimizer(TrainConfig(lr=cfg.adapt_lr, optimizer=cfg.adapt_optimizer))
    tensors = adapted.tensors()
    n_t, n_a = target_x.shape[0], anchors.shape[0]
    batch = min(cfg.adapt_batch, n_t)
    trace = []
    w, tol, warmup = cfg.early_stop_window, cfg.early_stop_tol, cfg.early_stop_min_steps
    for step in range(cfg.adapt_steps):
        xb = target_x if n_t <= batch else target_x[rng.choice(n_t, size=batch, replace=False)]
        ab = anchors[rng.choice(n_a, size=xb.shape[0], replace=True, p=row_probs)]
        proj = sample_projections(adapted.d_latent, cfg.n_projections, rng)
        zt, cache_t = encode_with_cache(adapted, xb)
        value, d_zt = sliced_w2_grad(zt, ab, proj)
        if not np.isfinite(value):
            raise DivergenceError("direct alignment objective is non-finite", step)
        g_t, _ = encoder_backward(adapted, cache_t, d_zt)
        opt.update(tensors, g_t)
        trace.append(value)
        if len(trace) >= max(warmup, 2 * w):
            recent = float(np.mean(trace[-w:]))
            previous = float(np.mean(trace[-2 * w : -w]))
            if previous - recent < tol:
                break
    return adapted, trace


def direct_adapt_baseline(sources, target_x: np.ndarray, cfg: RunConfig) -> RunResult:
    """Ablation: skip the prototypes and align straight to retained source data.

    Source rows stay available through adaptation (both sides of the
    objective are re-encoded each step), so the report is marked
    non-private. Weights use the final target↔source distance only.
    """
    if len(sources) == 0:
        raise ValueError("need at least one source")
    target_x = np.asarray(target_x, dtype=np.float64)
    n_classes = cfg.n_classes if cfg.n_classes is not None else _infer_n_classes(sources)

    def one(source, k):
        x, y = source
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        train_rng = rngmod.stream(cfg.seed, "direct", k, "train")
        model, train_trace = train_source(
            x, y, n_classes, cfg.hidden, cfg.latent_dim, cfg.train, train_rng
        )
        protos = fit_prototypes(model.encode(x), y)
        decision = pseudo_target_distribution(
            model, protos, target_x, cfg.conf_threshold, cfg.frac_threshold
        )
        risk = ce_risk(model.predict_proba(x), y)
        # per-row weights that reshape the source cloud to the estimated
        # target class mix: P(row) = p(class) / count(class)
        class_idx = np.searchsorted(protos.labels, y)
        row_probs = decision.distribution[class_idx] / protos.counts[class_idx]
        row_probs = row_probs / row_probs.sum()
        d0 = _direct_distance(
            model, model, x, target_x, cfg,
            rngmod.stream(cfg.seed, "direct", k, "d0"), row_probs,
        )
        adapted_enc, trace = _adapt_direct(
            model, x, target_x, cfg,
            rngmod.stream(cfg.seed, "direct", k, "adapt"), row_probs,
        )
        adapted = SourceModel(adapted_enc, model.classifier)
        d1 = _direct_distance(
            adapted, model, x, target_x, cfg,
            rngmod.stream(cfg.seed, "direct", k, "d1"), row_probs,
        )
        rec = AdaptationRecord(
            source_index=k,
            n_samples=x.shape[0],
            source_risk=risk,
            d_source=0.0,
            d_target_initial=d0,
            d_target_final=d1,
            steps_run=len(trace),
            step_trace=trace,
            pseudo=decision,
            train_trace=train_trace,
        )
        return adapted, rec

    out, errs = _map_stages(one, list(sources), cfg.workers)
    models, records, excluded = [], [], []
    for k, (res, err) in enumerate(zip(out, errs)):
        if err is not None:
            excluded.append((k, str(err)))
            warnings.warn(f"source {k} excluded: {err}", stacklevel=2)
        else:
            models.append(res[0])
            records.append(res[1])
    if not records:
        raise ProtoAdaptError("every source failed; nothing to combine")
    weights = compute_weights(
        np.array([r.d_target_final for r in records]),
        np.array([r.d_source for r in records]),
        cfg.weight_strategy,
        cfg.weight_eps,
    )
    report = AdaptationReport(records, weights, cfg.weight_strategy, excluded, private=False)
    return RunResult(models, weights, report, n_classes)


def _direct_distance(model, base, source_x, target_x, cfg, rng, row_probs) -> float:
    """Target latents under ``model`` vs weighted resamples of the anchor cloud.

    Each set pairs the (capped) target latents with a fresh bootstrap draw
    from ``base``'s source latents, weighted like the adaptation anchors —
    the direct-alignment mirror of the stored-distance estimator.
    """
    zt = model.encode(target_x)
    zs = base.encode(source_x)
    m = min(zt.shape[0], cfg.eval_subsample)
    if zt.shape[0] > m:
        zt = zt[rng.choice(zt.shape[0], size=m, replace=False)]
    total = 0.0
    for _ in range(cfg.distance_sets):
        a = zs[rng.choice(zs.shape[0], size=m, replace=True, p=row_probs)]
        proj = sample_projections(zt.shape[1], cfg.n_projections, rng)
        total += float(sliced_w2(zt, a, proj))
    return total / cfg.distance_sets


def source_combined_baseline(sources, target_x: np.ndarray, cfg: RunConfig) -> RunResult:
    """Ablation: pool every source into one dataset and run single-source.

    Requires sources to share their data with each other, so the result is
    marked non-private (the downside the per-source pipeline avoids).
    """
    if len(sources) == 0:
        raise ValueError("need at least one source")
    xs = np.concatenate([np.asarray(x, dtype=np.float64) for x, _ in sources], axis=0)
    ys = np.concatenate([np.asarray(y, dtype=np.int64) for _, y in sources], axis=0)
    pooled_cfg = replace(cfg, n_classes=cfg.n_classes or _infer_n_classes(sources))
    result = run_algorithm1([(xs, ys)], target_x, pooled_cfg)
    result.report.private = False
    return result


# --------------------------------------------------------------------------
# Evaluation helper
# --------------------------------------------------------------------------


def evaluate_ensemble(result: RunResult, x: np.ndarray, y: np.ndarray) -> dict:
    """Accuracy, CE risk, and the mixture-bound check in one pass."""
    probs = result.predict_proba(x)
    lhs, rhs = verify_ensemble_bound(result.models, result.weights, x, y)
    return {
        "accuracy": accuracy(probs, y),
        "ce_risk": lhs,
        "jensen_lhs": lhs,
        "jensen_rhs": rhs,
        "jensen_ok": lhs <= rhs + 1e-9,
    }
