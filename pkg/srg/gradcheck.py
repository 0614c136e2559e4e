"""
Central finite-difference comparison against tape gradients
"""

from dataclasses import dataclass, field
from typing import Callable, List, Sequence, Tuple

import numpy as np

from srg.tensor import ComputationTape, Tensor, backward


@dataclass
class GradCheckReport:
    samples: int = 0
    max_error: float = 0.0
    failures: List[Tuple[str, int, float, float]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures


def finite_difference_check(
    build_loss: Callable[[], Tensor],
    tensors: Sequence[Tensor],
    samples: int,
    rng: np.random.Generator,
    eps: float = 1e-6,
    tolerance: float = 1e-4,
    floor: float = 1e-4,
) -> GradCheckReport:
    """
    Compare analytic gradients of build_loss() w.r.t. randomly chosen entries
    of `tensors` with central differences. The error of one sample is
    |analytic - numeric| / max(floor, |analytic|, |numeric|).
    """
    with ComputationTape() as tape:
        loss = build_loss()
    for t in tensors:
        t.grad = None
    backward(tape, loss)

    sizes = np.array([t.data.size for t in tensors], dtype=float)
    report = GradCheckReport()
    for _ in range(samples):
        which = int(rng.choice(len(tensors), p=sizes / sizes.sum()))
        tensor = tensors[which]
        index = int(rng.integers(tensor.data.size))
        flat = tensor.data.reshape(-1)
        original = flat[index]
        flat[index] = original + eps
        plus = build_loss().item()
        flat[index] = original - eps
        minus = build_loss().item()
        flat[index] = original

        numeric = (plus - minus) / (2 * eps)
        analytic = 0.0 if tensor.grad is None else float(tensor.grad.reshape(-1)[index])
        error = abs(analytic - numeric) / max(floor, abs(analytic), abs(numeric))
        report.samples += 1
        report.max_error = max(report.max_error, error)
        if error >= tolerance:
            report.failures.append((tensor.name or f"tensor{which}", index, analytic, numeric))
    return report
