"""Variance-based global sensitivity: Saltelli sampling, first-order and total Sobol indices."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .campaign import QOI_NAMES, lhs_unit, scale_inputs
from .heat_source import BOUNDS, PARAM_NAMES

INTERACTION_LIMIT = 1.15


def next_power_of_two(n):
    if n < 1:
        raise ValueError("n_base must be >= 1")
    return 1 << (int(n) - 1).bit_length()


def _bounds_array(bounds):
    if isinstance(bounds, dict):
        bounds = [bounds[name] for name in PARAM_NAMES]
    arr = np.asarray(bounds, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError("bounds must be a sequence of (low, high) pairs")
    if not np.all(np.isfinite(arr)) or np.any(arr[:, 0] >= arr[:, 1]):
        raise ValueError(f"invalid bounds {arr.tolist()}")
    return arr


@dataclass
class SaltelliDesign:
    """Base matrices A and B plus the d radial blocks AB_i (A with column i from B)."""

    A: np.ndarray
    B: np.ndarray
    AB: np.ndarray     # (d, n_base, d)

    @property
    def n_base(self):
        return self.A.shape[0]

    @property
    def d(self):
        return self.A.shape[1]

    def matrix(self):
        """All evaluation points stacked as [A; B; AB_1; ...; AB_d]."""
        return np.concatenate([self.A, self.B, *self.AB])


def saltelli_sample(bounds, n_base, seed=0):
    """Radial Saltelli design over a box, ``(d + 2) * n_base`` points.

    ``n_base`` is rounded up to a power of two. A and B come from one Latin
    hypercube of width 2d so both are stratified in every column.
    """
    box = _bounds_array(bounds)
    n = next_power_of_two(n_base)
    d = len(box)
    unit = lhs_unit(n, 2 * d, np.random.default_rng(seed))
    span = box[:, 1] - box[:, 0]
    A = box[:, 0] + unit[:, :d] * span
    B = box[:, 0] + unit[:, d:] * span
    AB = np.repeat(A[None], d, axis=0)
    for i in range(d):
        AB[i, :, i] = B[:, i]
    return SaltelliDesign(A, B, AB)


@dataclass
class SobolResult:
    s1: np.ndarray          # (n_qoi, d)
    st: np.ndarray          # (n_qoi, d)
    n_base: int
    inputs: tuple
    qois: tuple

    def top_input(self, qoi, total=True):
        idx = self.qois.index(qoi)
        row = self.st[idx] if total else self.s1[idx]
        return self.inputs[int(np.argmax(row))]

    def rows(self):
        """Flat per-(QoI, input) rows for export."""
        out = []
        for q, qoi in enumerate(self.qois):
            for i, name in enumerate(self.inputs):
                out.append({"qoi": qoi, "input": name,
                            "S1": float(self.s1[q, i]), "ST": float(self.st[q, i])})
        return out


def sobol_indices(f, design, inputs=None, qois=None):
    """First-order (Saltelli 2010) and total (Jansen) indices.

    ``f`` maps an (N, d) array of points to (N,) or (N, n_qoi) outputs.
    """
    n, d = design.n_base, design.d
    y = np.asarray(f(design.matrix()), dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    if y.shape[0] != (d + 2) * n:
        raise ValueError("evaluator returned the wrong number of rows")
    # centring leaves both estimators' expectations unchanged but cuts the
    # variance of the first-order product term when the output mean is large
    y = y - np.concatenate([y[:n], y[n:2 * n]]).mean(axis=0)
    fa, fb = y[:n], y[n:2 * n]
    fab = y[2 * n:].reshape(d, n, -1)
    var = np.var(np.concatenate([fa, fb]), axis=0)
    if np.any(var <= 0):
        raise ValueError("output variance is zero; Sobol indices undefined")
    s1 = np.mean(fb[None] * (fab - fa[None]), axis=1) / var
    st = 0.5 * np.mean((fa[None] - fab) ** 2, axis=1) / var
    inputs = tuple(inputs) if inputs else tuple(f"x{i + 1}" for i in range(d))
    qois = tuple(qois) if qois else tuple(f"y{j + 1}" for j in range(y.shape[1]))
    return SobolResult(s1.T, st.T, n, inputs, qois)


@dataclass
class InteractionSummary:
    total_sum: dict
    negligible: dict


def interaction_check(result, limit=INTERACTION_LIMIT):
    """Sum of total indices per QoI; at or below ``limit`` means negligible interactions."""
    sums = {q: float(result.st[i].sum()) for i, q in enumerate(result.qois)}
    return InteractionSummary(sums, {q: s <= limit for q, s in sums.items()})


def rom_evaluator(model):
    """Wrap a trained model as ``f(physical inputs) -> (V_bead,max, T_mp,max)``."""
    from .training import predict_scalar

    bounds = model.bounds or BOUNDS

    def f(points):
        return predict_scalar(model, scale_inputs(points, bounds))

    return f


def rom_sobol(model, n_base=1024, seed=0):
    bounds = model.bounds or BOUNDS
    design = saltelli_sample(bounds, n_base, seed)
    return sobol_indices(rom_evaluator(model), design, PARAM_NAMES, QOI_NAMES)


def save_sobol(result, path, extra=None):
    header = {"format": "opforge-sobol", "n_base": result.n_base,
              "inputs": list(result.inputs), "qois": list(result.qois)}
    if extra:
        header.update(extra)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(header, separators=(",", ":")) + "\n")
        for row in result.rows():
            fh.write(json.dumps(row, separators=(",", ":")) + "\n")


def load_sobol(path):
    with open(path, encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        rows = [json.loads(line) for line in fh if line.strip()]
    inputs, qois = tuple(header["inputs"]), tuple(header["qois"])
    s1 = np.zeros((len(qois), len(inputs)))
    st = np.zeros_like(s1)
    for row in rows:
        q, i = qois.index(row["qoi"]), inputs.index(row["input"])
        s1[q, i], st[q, i] = row["S1"], row["ST"]
    return SobolResult(s1, st, header["n_base"], inputs, qois)
