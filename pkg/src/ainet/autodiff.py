"""Reverse-mode differentiation tape and the finite-difference oracle.

Graphs are built eagerly: every op returns a Node holding its forward value
(a numpy array) and a closure that routes the output gradient to its parents.
``backward`` runs the closures in reverse topological order, accumulating
gradients by summation wherever a node feeds several consumers.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError


class Node:
    """One value in the computation graph.

    ``grad`` is lazily allocated to the value's shape during backward.
    Constant leaves (plain data) have needs_grad False and are skipped.
    """

    __slots__ = ("value", "grad", "parents", "needs_grad", "_backward", "op")

    def __init__(self, value, parents=(), backward=None, op="leaf", needs_grad=None):
        self.value = np.asarray(value)
        self.grad = None
        self.parents = tuple(parents)
        self._backward = backward
        self.op = op
        if needs_grad is None:
            needs_grad = any(p.needs_grad for p in self.parents)
        self.needs_grad = needs_grad

    def accumulate(self, g):
        if not self.needs_grad:
            return
        if self.grad is not None:
            self.grad += g
        elif np.shape(g) == self.value.shape:
            self.grad = np.array(g, dtype=self.value.dtype, copy=True)
        else:  # broadcast contribution still needs the full buffer
            self.grad = np.zeros_like(self.value)
            self.grad += g

    def __repr__(self):
        return f"Node(op={self.op}, shape={self.value.shape})"


class Parameter(Node):
    """A trainable leaf with a persistent, pre-allocated gradient buffer."""

    __slots__ = ("name",)

    def __init__(self, value, name: str):
        super().__init__(np.array(value, copy=True), needs_grad=True)
        self.grad = np.zeros_like(self.value)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name}, shape={self.value.shape})"


def constant(value) -> Node:
    return Node(value, needs_grad=False)


def backward(root: Node) -> None:
    """Propagate d(root)/d(node) into every reachable node's grad.

    root must be scalar-valued. Parameter gradients accumulate across calls
    (zero_grad between steps unless accumulation is intended); interior node
    gradients are reset per pass so repeating backward on one graph adds
    exactly one more gradient contribution.
    """
    if root.value.size != 1:
        raise ContractError(f"backward root must be scalar, got shape {root.value.shape}")
    order: list[Node] = []
    seen = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen and p.needs_grad:
                stack.append((p, False))
    for node in order:
        if not isinstance(node, Parameter):
            node.grad = None
    root.accumulate(np.ones_like(root.value))
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def zero_grad(params) -> None:
    for p in params:
        if p.grad is None:
            p.grad = np.zeros_like(p.value)
        else:
            p.grad[...] = 0


@dataclass
class GradCheckRow:
    name: str
    max_rel_err: float
    analytic: float  # analytic gradient at the worst coordinate
    numeric: float  # central difference at the worst coordinate
    coords_checked: int


@dataclass
class GradCheckReport:
    rows: list[GradCheckRow] = field(default_factory=list)
    max_rel_err: float = 0.0
    passed: bool = True
    failure: str | None = None

    def worst(self) -> GradCheckRow | None:
        return max(self.rows, key=lambda r: r.max_rel_err) if self.rows else None


def _rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


def finite_diff_check(
    f,
    params,
    h: float = 1e-5,
    tol: float = 1e-4,
    max_coords_per_param: int | None = None,
) -> GradCheckReport:
    """Compare tape gradients of the scalar loss ``f()`` against central differences.

    f rebuilds its graph from the params' current values on every call and
    returns a scalar Node. Checks every coordinate of every parameter unless
    max_coords_per_param caps it; capped checks take the coordinates with the
    largest tape gradients, where central differences rise above float noise.
    A spurious large tape gradient still lands in that selection, and an
    all-zero tape gradient is still compared against the numeric value.
    Parameters should be extended precision for tight tolerances.
    """
    report = GradCheckReport()
    zero_grad(params)
    root = f()
    if not np.isfinite(root.value).all():
        report.passed = False
        report.failure = "loss is non-finite at the expansion point"
        return report
    backward(root)
    analytic = {id(p): p.grad.copy() for p in params}

    for p in params:
        flat = p.value.reshape(-1)
        n = flat.size
        if max_coords_per_param is not None and n > max_coords_per_param:
            mags = np.abs(analytic[id(p)].reshape(-1))
            coords = np.argsort(-mags, kind="stable")[:max_coords_per_param]
        else:
            coords = range(n)
        worst = (0.0, 0.0, 0.0)  # rel_err, analytic, numeric
        checked = 0
        for i in coords:
            orig = flat[i]

            def central(step):
                flat[i] = orig + step
                fp = f().value.item()
                flat[i] = orig - step
                fm = f().value.item()
                flat[i] = orig
                return (fp - fm) / (2 * step), fp, fm

            num, fp, fm = central(h)
            if not (np.isfinite(fp) and np.isfinite(fm)):
                report.passed = False
                report.failure = f"non-finite loss while perturbing {p.name}[{i}]"
                return report
            ana = float(analytic[id(p)].reshape(-1)[i])
            err = _rel_err(ana, num)
            # A kink (relu, max) inside the +-h window contaminates the
            # difference quotient; it sits at a fixed offset, so a smaller
            # step escapes it entirely. A wrong gradient fails at every step.
            for hk in (h / 10, h / 100):
                if err < tol:
                    break
                num2, _, _ = central(hk)
                err2 = _rel_err(ana, num2)
                if err2 < err:
                    num, err = num2, err2
            checked += 1
            if err > worst[0]:
                worst = (err, ana, num)
        report.rows.append(
            GradCheckRow(
                name=p.name,
                max_rel_err=worst[0],
                analytic=worst[1],
                numeric=worst[2],
                coords_checked=checked,
            )
        )
        report.max_rel_err = max(report.max_rel_err, worst[0])
    report.passed = report.max_rel_err < tol
    return report


def write_gradcheck_csv(path, reports: dict[str, GradCheckReport]) -> None:
    """One row per parameter tensor: check name, parameter, analytic, numeric, rel_err."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["check", "parameter", "analytic", "numeric", "rel_err", "coords", "pass"])
        for check, rep in reports.items():
            for row in rep.rows:
                w.writerow(
                    [
                        check,
                        row.name,
                        f"{row.analytic:.12g}",
                        f"{row.numeric:.12g}",
                        f"{row.max_rel_err:.6g}",
                        row.coords_checked,
                        int(row.max_rel_err < 1e-4),
                    ]
                )
