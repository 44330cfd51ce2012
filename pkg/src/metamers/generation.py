"""Metamer optimization.

A metamer ``x'`` is pushed by projected gradient descent so that its activations
at a chosen layer match those of a reference ``x``. With several models the
active model is switched round-robin every ``steps_per_model`` steps, and the
learning rate decays exponentially once per full cycle (repetition).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import torch

from .model_zoo import LayerRef, ModelHandle, StageSpec, ZooError, extract_activations, resolve_stage

Monitor = Callable[[int, str, int], None]


class GenerationError(RuntimeError):
    def __init__(self, message: str, step: int | None = None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


@dataclass(frozen=True)
class GenerationConfig:
    """Optimizer settings; defaults are the best-metamer settings.

    ``repetitions`` may be left unset, in which case it is derived from
    ``total_steps`` once the size of the model set is known
    (``total_steps // (n_models * steps_per_model)``).
    """

    steps_per_model: int = 10
    repetitions: int | None = None
    total_steps: int = 40000
    epsilon: float = 10000.0
    lr_start: float = 1.0
    lr_end: float = 0.005
    init_radius: float = 0.1
    init_offset: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not self.lr_start > self.lr_end > 0:
            raise ValueError(f"need lr_start > lr_end > 0, got {self.lr_start} and {self.lr_end}")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.steps_per_model < 1:
            raise ValueError("steps_per_model must be >= 1")
        if self.repetitions is not None and self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if self.init_radius < 0:
            raise ValueError("init_radius must be non-negative")

    def resolved(self, n_models: int) -> "GenerationConfig":
        if n_models < 1:
            raise GenerationError("empty model set")
        if self.repetitions is not None:
            return self
        reps = self.total_steps // (n_models * self.steps_per_model)
        if reps < 1:
            raise GenerationError(
                f"total_steps={self.total_steps} is below one repetition "
                f"({n_models} models x {self.steps_per_model} steps)")
        return replace(self, repetitions=reps)


@dataclass
class MetamerRecord:
    reference_id: str
    metamer: torch.Tensor
    model_set_ids: list[str]
    stage: StageSpec
    loss_trace: list[float]
    total_steps: int
    label: int | None = None
    layers: list[str] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.loss_trace[-1]

    @property
    def initial_loss(self) -> float:
        return self.loss_trace[0]


def inversion_loss(a_prime: torch.Tensor, a: torch.Tensor) -> torch.Tensor:
    """Normalized activation error ``||a' - a||_2 / ||a||_2``, row-wise for 2-D input."""
    if a_prime.shape != a.shape:
        raise ValueError(f"activation shapes differ: {tuple(a_prime.shape)} vs {tuple(a.shape)}")
    ref_norm = torch.linalg.vector_norm(a, dim=-1)
    if (ref_norm == 0).any():
        raise GenerationError("degenerate reference activation (zero norm)")
    return torch.linalg.vector_norm(a_prime - a, dim=-1) / ref_norm


def sample_l1_ball(shape: Sequence[int], radius: float, generator: torch.Generator,
                   dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Uniform samples from the l1 ball, one per leading index.

    Direction: normalized i.i.d. exponentials with random signs (uniform on the
    l1 sphere); radius: ``radius * U**(1/n)``.
    """
    n_samples, dims = shape[0], math.prod(shape[1:])
    e = torch.empty(n_samples, dims, dtype=torch.float64).exponential_(generator=generator)
    signs = torch.randint(0, 2, (n_samples, dims), generator=generator, dtype=torch.int64).to(torch.float64) * 2 - 1
    u = torch.rand(n_samples, 1, generator=generator, dtype=torch.float64)
    direction = signs * e / e.sum(dim=1, keepdim=True)
    points = radius * u ** (1.0 / dims) * direction
    return points.reshape(tuple(shape)).to(dtype)


def init_metamer(reference: torch.Tensor, config: GenerationConfig, rng: torch.Generator) -> torch.Tensor:
    """Constant ``init_offset`` image plus l1-ball noise, clamped to ``[0, 1]``.

    Only the shape of ``reference`` is used.
    """
    noise = sample_l1_ball(reference.shape, config.init_radius, rng, reference.dtype)
    return (config.init_offset + noise).clamp(0.0, 1.0)


def lr_at(repetition: int, config: GenerationConfig) -> float:
    r = config.repetitions
    if r is None or r < 2:
        raise ValueError(f"the learning-rate schedule needs at least 2 repetitions, got {r}")
    if not 0 <= repetition < r:
        raise ValueError(f"repetition {repetition} outside [0, {r - 1}]")
    # equals lr_start * gamma**repetition with gamma = (lr_end/lr_start)**(1/(r-1)),
    # written so that both endpoints are exact
    return config.lr_start * (config.lr_end / config.lr_start) ** (repetition / (r - 1))


def project(x_prime: torch.Tensor, reference: torch.Tensor, epsilon: float) -> torch.Tensor:
    """Clamp into the l-infinity ball of radius ``epsilon`` around ``reference``, then into [0, 1]."""
    if x_prime.shape != reference.shape:
        raise ValueError("shape mismatch between iterate and reference")
    return torch.minimum(torch.maximum(x_prime, reference - epsilon), reference + epsilon).clamp(0.0, 1.0)


def _target(model: ModelHandle, layer: LayerRef, x: torch.Tensor) -> torch.Tensor:
    a = extract_activations(model, layer, x).vectors
    if (torch.linalg.vector_norm(a, dim=1) == 0).any():
        raise GenerationError(f"degenerate reference activation at {model.id}:{layer.name}")
    return a


def _per_sample_loss(model: ModelHandle, layer: LayerRef, x_prime: torch.Tensor, target: torch.Tensor,
                     step: int | None = None) -> torch.Tensor:
    try:
        a_prime = extract_activations(model, layer, x_prime, track_gradient=True).vectors
    except ZooError as exc:
        raise GenerationError(str(exc), step) from exc
    return inversion_loss(a_prime, target)


def _pass(x, x_prime, model, layer, steps, lr, epsilon, target, step_offset=0, repetition=-1, monitor=None):
    """Inner loop shared by :func:`solver_pass` and the round-robin solver.

    Returns the iterate and the per-sample loss of the last computed step (or of
    the current iterate when ``steps == 0``).
    """
    per_sample = None
    for s in range(steps):
        step = step_offset + s
        xp = x_prime.detach().requires_grad_(True)
        per_sample = _per_sample_loss(model, layer, xp, target, step)
        # summed loss: each sample's step is independent of the batch size
        loss = per_sample.sum()
        if not torch.isfinite(loss):
            raise GenerationError("non-finite loss", step)
        (grad,) = torch.autograd.grad(loss, xp)
        if not torch.isfinite(grad).all():
            raise GenerationError("non-finite gradient", step)
        x_prime = project(xp.detach() - lr * grad, x, epsilon)
        if monitor is not None:
            monitor(step, model.id, repetition)
        per_sample = per_sample.detach()
    if per_sample is None:
        with torch.no_grad():
            per_sample = _per_sample_loss(model, layer, x_prime, target, step_offset)
    return x_prime, per_sample


def solver_pass(x: torch.Tensor, x_prime: torch.Tensor, model: ModelHandle, layer: LayerRef, steps: int,
                lr: float, epsilon: float) -> tuple[torch.Tensor, float]:
    """Run ``steps`` projected descent steps on the inversion loss; returns the batch-mean loss.

    The per-sample losses are summed before differentiation, so every sample
    moves as if optimized alone and ``lr`` does not shrink with the batch size.
    """
    if x.shape != x_prime.shape:
        raise ValueError("x and x_prime must share a shape")
    target = _target(model, layer, x)
    x_prime, per_sample = _pass(x, x_prime, model, layer, steps, lr, epsilon, target)
    return x_prime, float(per_sample.mean())


def _ensemble_loss(handles, layers, targets, x_prime) -> torch.Tensor:
    with torch.no_grad():
        losses = [_per_sample_loss(m, l, x_prime, t) for m, l, t in zip(handles, layers, targets)]
    return torch.stack(losses).mean(dim=0)


def _round_robin(x, x_prime, model_set, stage, config, reference_ids, labels, monitor):
    if len(model_set) == 0:
        raise GenerationError("empty model set")
    sizes = {tuple(m.input_size) for m in model_set}
    if len(sizes) != 1:
        raise GenerationError(f"models disagree on input size: {sorted(sizes)}")
    cfg = config.resolved(len(model_set))
    reps = cfg.repetitions
    layers = [resolve_stage(m, stage) for m in model_set]
    targets = [_target(m, l, x) for m, l in zip(model_set, layers)]

    traces = [_ensemble_loss(model_set, layers, targets, x_prime)]
    step = 0
    for r in range(reps):
        lr = lr_at(r, cfg) if reps > 1 else cfg.lr_start
        for model, layer, target in zip(model_set, layers, targets):
            x_prime, _ = _pass(x, x_prime, model, layer, cfg.steps_per_model, lr, cfg.epsilon, target,
                               step_offset=step, repetition=r, monitor=monitor)
            step += cfg.steps_per_model
        traces.append(_ensemble_loss(model_set, layers, targets, x_prime))

    trace = torch.stack(traces, dim=1)
    ids = list(reference_ids) if reference_ids is not None else [str(i) for i in range(x.shape[0])]
    if len(ids) != x.shape[0]:
        raise ValueError("one reference id per image required")
    member_ids = [m.id for m in model_set]
    records = []
    for i, rid in enumerate(ids):
        records.append(MetamerRecord(
            reference_id=rid, metamer=x_prime[i].detach().clone(), model_set_ids=member_ids, stage=stage,
            loss_trace=trace[i].tolist(), total_steps=step,
            label=None if labels is None else int(labels[i]),
            layers=[f"{l.model_id}:{l.name}" for l in layers],
        ))
    return records


def generate_metamers(x: torch.Tensor, model_set: Sequence[ModelHandle], stage: StageSpec, config: GenerationConfig,
                      reference_ids: Sequence[str] | None = None, labels: Sequence[int] | None = None,
                      monitor: Monitor | None = None) -> list[MetamerRecord]:
    """Round-robin multi-model generation from a near-constant gray start.

    ``model_set`` is cycled in the order given; pass it in registry order.
    Each record's ``loss_trace`` holds the ensemble-mean inversion loss at
    initialization and after every repetition. ``monitor`` is called after
    every optimizer step with ``(step, model_id, repetition)``.
    """
    if len(model_set) == 0:
        raise GenerationError("empty model set")
    rng = torch.Generator().manual_seed(config.seed)
    x_prime = project(init_metamer(x, config, rng), x, config.epsilon)
    return _round_robin(x, x_prime, model_set, stage, config, reference_ids, labels, monitor)


def generate_adversarial_mode(x: torch.Tensor, labels: Sequence[int] | None, model_set: Sequence[ModelHandle],
                              stage: StageSpec, config: GenerationConfig,
                              reference_ids: Sequence[str] | None = None,
                              monitor: Monitor | None = None) -> list[MetamerRecord]:
    """Epsilon-restricted variant: start at the reference itself.

    The start point is ``x`` plus l1-ball noise of radius
    ``min(init_radius, epsilon)``; every iterate stays inside the
    ``epsilon`` box around ``x``.
    """
    if len(model_set) == 0:
        raise GenerationError("empty model set")
    rng = torch.Generator().manual_seed(config.seed)
    noise = sample_l1_ball(x.shape, min(config.init_radius, config.epsilon), rng, x.dtype)
    x_prime = project(x + noise, x, config.epsilon)
    return _round_robin(x, x_prime, model_set, stage, config, reference_ids, labels, monitor)


def stack_metamers(records: Sequence[MetamerRecord]) -> torch.Tensor:
    return torch.stack([r.metamer for r in records])
