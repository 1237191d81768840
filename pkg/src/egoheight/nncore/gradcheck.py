"""Central finite-difference check of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import layers as L
from .network import Network


@dataclass
class GradcheckRow:
    layer: int  # -1 for the network input
    kind: str
    name: str
    max_rel_err: float
    n_checked: int
    n_skipped: int


@dataclass
class GradcheckReport:
    tolerance: float
    rows: list[GradcheckRow] = field(default_factory=list)

    @property
    def max_rel_err(self) -> float:
        return max((r.max_rel_err for r in self.rows), default=0.0)

    @property
    def passed(self) -> bool:
        return all(r.max_rel_err < self.tolerance for r in self.rows)

    def per_layer(self) -> dict[int, float]:
        out: dict[int, float] = {}
        for r in self.rows:
            out[r.layer] = max(out.get(r.layer, 0.0), r.max_rel_err)
        return out

    def format_table(self) -> str:
        lines = [f"{'layer':>5}  {'kind':<11} {'param':<6} {'max_rel_err':>12} {'checked':>7} {'skipped':>7}"]
        for r in self.rows:
            flag = "" if r.max_rel_err < self.tolerance else "  FAIL"
            lines.append(
                f"{r.layer:>5}  {r.kind:<11} {r.name:<6} {r.max_rel_err:12.3e} {r.n_checked:7d} {r.n_skipped:7d}{flag}"
            )
        return "\n".join(lines)


def _signature(net: Network, caches):
    return [L.kink_signature(s, c) for s, c in zip(net.specs, caches)]


def _same(sig_a, sig_b) -> bool:
    return all(a is None or np.array_equal(a, b) for a, b in zip(sig_a, sig_b))


def gradcheck(
    net: Network,
    x,
    tolerance: float = 1e-4,
    h: float = 1e-4,
    training: bool = False,
    max_entries: int = 12,
    seed: int = 0,
    floor: float = 1e-6,
) -> GradcheckReport:
    """Compare backward() against central differences of ``sum(out * R)``.

    Runs in float64.  Entries whose perturbation changes a relu mask, elu
    branch or max-pool winner are skipped (non-differentiable point).
    Batchnorm running statistics are never updated.  Relative errors use
    ``max(|analytic|, |numeric|, floor)`` as denominator so that structurally
    zero gradients are not judged on float64 rounding noise (~eps*|f|/h).
    """
    rng = np.random.default_rng(seed)
    net = net.astype(np.float64)
    if isinstance(x, tuple):
        x = tuple(np.array(a, dtype=np.float64) for a in x)
    else:
        x = np.array(x, dtype=np.float64)

    out, caches = net.forward(x, training=training, update_stats=False)
    proj = rng.standard_normal(out.shape)
    grads, dx = net.backward(caches, proj, need_input_grad=True)
    base_sig = _signature(net, caches)

    def evaluate():
        o, c = net.forward(x, training=training, update_stats=False)
        return float(np.sum(o * proj)), _signature(net, c)

    def check(arr, analytic):
        n = arr.size
        picks = rng.choice(n, size=min(max_entries, n), replace=False)
        worst, done, skipped = 0.0, 0, 0
        flat = arr.reshape(-1)
        aflat = analytic.reshape(-1)
        for j in picks:
            old = flat[j]
            flat[j] = old + h
            fp, sp = evaluate()
            flat[j] = old - h
            fm, sm = evaluate()
            flat[j] = old
            if not (_same(base_sig, sp) and _same(base_sig, sm)):
                skipped += 1
                continue
            num = (fp - fm) / (2 * h)
            a = aflat[j]
            err = abs(a - num) / max(abs(a), abs(num), floor)
            worst = max(worst, err)
            done += 1
        return worst, done, skipped

    report = GradcheckReport(tolerance)
    inputs = x if isinstance(x, tuple) else (x,)
    dxs = dx if isinstance(dx, tuple) else (dx,)
    for k, (xi, dxi) in enumerate(zip(inputs, dxs)):
        worst, done, skipped = check(xi, dxi)
        report.rows.append(GradcheckRow(-1, "input", f"x{k}", worst, done, skipped))
    for i, spec in enumerate(net.specs):
        for name in sorted(net.params[i]):
            worst, done, skipped = check(net.params[i][name], grads[i][name])
            report.rows.append(GradcheckRow(i, spec.kind, name, worst, done, skipped))
    return report
