"""Surrogate architectures: fully-connected DNN, unstacked DeepONet, 1-D FNO.

Each model is a config plus one flat float64 weight vector. The ``*_apply``
functions take the weights as a list of engine Tensors (so they can be
differentiated); the ``*_forward`` functions wrap them for plain numpy use.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .engine import ACTIVATIONS, Tensor, crop, pad_edge, spectral_conv1d, stack, tensor

FORMAT_VERSION = 1
N_INPUTS = 5
N_QOIS = 2
KINDS = ("dnn", "deeponet", "fno")


@dataclass
class DnnConfig:
    layer_widths: list = field(default_factory=lambda: [100, 150, 200, 150, 100])
    activation: str = "relu"

    def __post_init__(self):
        self.layer_widths = [int(w) for w in self.layer_widths]
        if not self.layer_widths or min(self.layer_widths) < 1:
            raise ValueError("DNN needs at least one hidden layer of width >= 1")
        _check_activation(self.activation)


@dataclass
class DeepOnetConfig:
    """Widths list every layer after the input; the last entry is the latent size."""

    branch_widths: list = field(default_factory=lambda: [130, 130, 130, 130])
    trunk_widths: list = field(default_factory=lambda: [130, 130, 130, 130])
    latent_dim: int = 130
    activation: str = "relu"

    def __post_init__(self):
        self.branch_widths = [int(w) for w in self.branch_widths]
        self.trunk_widths = [int(w) for w in self.trunk_widths]
        if not self.branch_widths or not self.trunk_widths:
            raise ValueError("branch and trunk need at least one layer")
        if self.branch_widths[-1] != self.latent_dim or self.trunk_widths[-1] != self.latent_dim:
            raise ValueError("branch and trunk must both end in latent_dim outputs")
        if min(self.branch_widths + self.trunk_widths) < 1:
            raise ValueError("layer widths must be >= 1")
        _check_activation(self.activation)

    @classmethod
    def from_layers(cls, neurons, branch_hidden, trunk_hidden, activation="relu"):
        """``neurons`` per hidden layer, latent size equal to ``neurons``."""
        return cls([neurons] * (branch_hidden + 1), [neurons] * (trunk_hidden + 1),
                   neurons, activation)


@dataclass
class FnoConfig:
    modes: int = 50
    width: int = 16
    n_layers: int = 4
    grid_len: int = 200
    proj_hidden: int = 32
    activation: str = "gelu"

    def __post_init__(self):
        if self.n_layers < 1:
            raise ValueError("FNO needs at least one Fourier layer")
        if not 1 <= self.modes <= self.grid_len // 2:
            raise ValueError(f"modes must lie in [1, {self.grid_len // 2}]")
        if self.width < 1 or self.proj_hidden < 1:
            raise ValueError("width and proj_hidden must be >= 1")
        _check_activation(self.activation)


CONFIG_TYPES = {"dnn": DnnConfig, "deeponet": DeepOnetConfig, "fno": FnoConfig}


def _check_activation(name):
    if name not in ACTIVATIONS:
        raise ValueError(f"unknown activation {name!r}; choose from {sorted(ACTIVATIONS)}")


def padded_length(n):
    """Next power of two at or above ``n`` (200 -> 256, 400 -> 512)."""
    return 1 << (int(n) - 1).bit_length()


# -- parameter layouts -----------------------------------------------------------

def _mlp_shapes(prefix, sizes):
    shapes = []
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        shapes += [(f"{prefix}W{i}", (a, b)), (f"{prefix}b{i}", (b,))]
    return shapes


def param_shapes(kind, cfg):
    """Ordered ``(name, shape)`` list defining the flat weight layout."""
    if kind == "dnn":
        return _mlp_shapes("", [N_INPUTS, *cfg.layer_widths, N_QOIS])
    if kind == "deeponet":
        shapes = []
        for q in range(N_QOIS):
            shapes += _mlp_shapes(f"q{q}.branch.", [N_INPUTS, *cfg.branch_widths])
            shapes += _mlp_shapes(f"q{q}.trunk.", [1, *cfg.trunk_widths])
            shapes.append((f"q{q}.bias", (1,)))
        return shapes
    if kind == "fno":
        w = cfg.width
        shapes = [("lift.W", (N_INPUTS + 1, w)), ("lift.b", (w,))]
        for layer in range(cfg.n_layers):
            shapes += [
                (f"layer{layer}.spec_re", (w, w, cfg.modes)),
                (f"layer{layer}.spec_im", (w, w, cfg.modes)),
                (f"layer{layer}.W", (w, w)),
                (f"layer{layer}.b", (w,)),
            ]
        shapes += [("proj.W0", (w, cfg.proj_hidden)), ("proj.b0", (cfg.proj_hidden,)),
                   ("proj.W1", (cfg.proj_hidden, N_QOIS)), ("proj.b1", (N_QOIS,))]
        return shapes
    raise ValueError(f"unknown model kind {kind!r}")


def param_count(kind, cfg):
    return int(sum(np.prod(s) for _, s in param_shapes(kind, cfg)))


def init_weights(kind, cfg, seed):
    """Uniform He-style fan-in init for dense weights, zero biases.

    Spectral weights follow the usual ``U(0,1) / (cin * cout)`` scale.
    """
    rng = np.random.default_rng(seed)
    parts = []
    for name, shape in param_shapes(kind, cfg):
        if ".spec_" in name:
            parts.append(rng.random(shape) / (shape[0] * shape[1]))
        elif len(shape) == 2:
            bound = np.sqrt(6.0 / shape[0])
            parts.append(rng.uniform(-bound, bound, shape))
        else:
            parts.append(np.zeros(shape))
    return np.concatenate([p.ravel() for p in parts])


def unflatten(kind, cfg, flat):
    flat = np.asarray(flat, dtype=np.float64)
    out, pos = [], 0
    for _, shape in param_shapes(kind, cfg):
        size = int(np.prod(shape))
        out.append(flat[pos:pos + size].reshape(shape))
        pos += size
    if pos != flat.size:
        raise ValueError(f"weight vector has {flat.size} entries, layout needs {pos}")
    return out


def flatten(arrays):
    return np.concatenate([np.asarray(a, dtype=np.float64).ravel() for a in arrays])


# -- differentiable forwards -----------------------------------------------------

def _mlp(x, params, act, final_linear=True):
    n = len(params) // 2
    for i in range(n):
        x = x @ params[2 * i] + params[2 * i + 1]
        if i < n - 1 or not final_linear:
            x = act(x)
    return x


def dnn_apply(cfg, params, x):
    """(B, 5) -> (B, 2)."""
    return _mlp(tensor(x), params, ACTIVATIONS[cfg.activation])


def deeponet_heads(cfg, params):
    """Split the flat parameter list into per-QoI (branch, trunk, bias) groups."""
    nb = 2 * len(cfg.branch_widths)
    nt = 2 * len(cfg.trunk_widths)
    per = nb + nt + 1
    groups = []
    for q in range(N_QOIS):
        chunk = params[q * per:(q + 1) * per]
        groups.append((chunk[:nb], chunk[nb:nb + nt], chunk[-1]))
    return groups


def deeponet_apply(cfg, params, x, times):
    """(B, 5) inputs and (n,) scaled times -> (B, n, 2).

    ``out_q(t_j) = sum_k branch_qk(x) * trunk_qk(t_j) + bias_q``.
    """
    times = np.asarray(times, dtype=float)
    if times.size == 0:
        raise ValueError("DeepONet needs at least one evaluation time")
    act = ACTIVATIONS[cfg.activation]
    x = tensor(x)
    t = tensor(times.reshape(-1, 1))
    outs = []
    for branch_p, trunk_p, bias in deeponet_heads(cfg, params):
        b = _mlp(x, branch_p, act)
        tr = _mlp(t, trunk_p, act)
        outs.append(b @ tr.T + bias)
    return stack(outs, axis=-1)


def fno_input(x, n_steps):
    """Repeat each scaled input over ``n_steps`` and append the time coordinate."""
    x = np.asarray(x, dtype=float)
    b = x.shape[0]
    grid = np.arange(1, n_steps + 1) / n_steps
    rep = np.broadcast_to(x[:, None, :], (b, n_steps, x.shape[1]))
    return np.concatenate([rep, np.broadcast_to(grid[None, :, None], (b, n_steps, 1))], axis=-1)


def fourier_layer(q, spec_re, spec_im, w, b, act):
    """``act(q W + b + K q)`` with K the mode-truncated spectral convolution.

    ``q`` is (B, n, width). The series is edge-padded to the next power of
    two for the FFT and cropped back afterwards. Padding is split over both
    ends so the circular seam of the FFT falls inside the padding, away from
    the first and last time steps.
    """
    n = q.shape[1]
    pad = padded_length(n) - n
    before = pad // 2
    qp = pad_edge(q, (before, pad - before), axis=1) if pad else q
    k = spectral_conv1d(qp, spec_re, spec_im)
    if pad:
        k = crop(k, n, axis=1, start=before)
    return act(q @ w + b + k)


def fno_apply(cfg, params, x, n_steps=None):
    """(B, 5) -> (B, n_steps, 2); ``n_steps`` defaults to ``cfg.grid_len``."""
    n_steps = n_steps or cfg.grid_len
    act = ACTIVATIONS[cfg.activation]
    h = tensor(fno_input(x, n_steps))
    q = h @ params[0] + params[1]
    pos = 2
    for _ in range(cfg.n_layers):
        q = fourier_layer(q, *params[pos:pos + 4], act)
        pos += 4
    w0, b0, w1, b1 = params[pos:pos + 4]
    return act(q @ w0 + b0) @ w1 + b1


def apply(kind, cfg, params, x, times=None, n_steps=None):
    if kind == "dnn":
        return dnn_apply(cfg, params, x)
    if kind == "deeponet":
        return deeponet_apply(cfg, params, x, times)
    if kind == "fno":
        return fno_apply(cfg, params, x, n_steps)
    raise ValueError(f"unknown model kind {kind!r}")


# -- model container -------------------------------------------------------------

@dataclass
class RomModel:
    kind: str
    config: object
    weights: np.ndarray
    target: str = "scalar"          # what the model output represents: scalar | series
    bounds: dict = field(default_factory=dict)
    output_scaler: dict = field(default_factory=dict)
    n_steps: int = 200

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.target not in ("scalar", "series"):
            raise ValueError("target must be 'scalar' or 'series'")
        self.weights = np.asarray(self.weights, dtype=np.float64)
        expected = param_count(self.kind, self.config)
        if self.weights.size != expected:
            raise ValueError(f"{self.kind} config needs {expected} weights, got {self.weights.size}")

    @classmethod
    def initialize(cls, kind, config, seed=0, **kw):
        return cls(kind, config, init_weights(kind, config, seed), **kw)

    def params(self, requires_grad=False):
        return [Tensor(a, requires_grad) for a in unflatten(self.kind, self.config, self.weights)]

    def param_count(self):
        return self.weights.size


def dnn_forward(model, x):
    return dnn_apply(model.config, model.params(), np.atleast_2d(x)).numpy()


def deeponet_forward(model, x, times):
    return deeponet_apply(model.config, model.params(), np.atleast_2d(x), times).numpy()


def fno_forward(model, x, n_steps=None):
    return fno_apply(model.config, model.params(), np.atleast_2d(x), n_steps).numpy()


def scalar_heads(series):
    """Per-QoI maximum over the time axis: (..., n, q) -> (..., q)."""
    series = np.asarray(series, dtype=float)
    if series.ndim < 2 or series.shape[-2] == 0:
        raise ValueError("scalar_heads needs a non-empty (time, qoi) series")
    return series.max(axis=-2)


def predict_scaled(model, x, chunk=512):
    """Raw network output in scaled target units, batched over ``x``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    times = np.arange(1, model.n_steps + 1) / model.n_steps
    params = model.params()
    outs = []
    for start in range(0, len(x), chunk):
        xb = x[start:start + chunk]
        outs.append(apply(model.kind, model.config, params, xb, times, model.n_steps).numpy())
    return np.concatenate(outs)


# -- persistence -----------------------------------------------------------------

def save_model(model, path):
    """Single JSON document: header fields plus the flat weight list."""
    doc = {
        "format": "opforge-model",
        "format_version": FORMAT_VERSION,
        "kind": model.kind,
        "config": asdict(model.config),
        "target": model.target,
        "n_steps": model.n_steps,
        "bounds": {k: list(v) for k, v in model.bounds.items()},
        "output_scaler": model.output_scaler,
        "n_weights": int(model.weights.size),
        "weights": model.weights.tolist(),
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, separators=(",", ":"), allow_nan=False)
        fh.write("\n")


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != "opforge-model":
        raise ValueError(f"{path} is not a model file")
    if doc["format_version"] != FORMAT_VERSION:
        raise ValueError(f"unsupported model format {doc['format_version']}")
    cfg = CONFIG_TYPES[doc["kind"]](**doc["config"])
    return RomModel(
        kind=doc["kind"],
        config=cfg,
        weights=np.array(doc["weights"], dtype=np.float64),
        target=doc["target"],
        bounds={k: tuple(v) for k, v in doc["bounds"].items()},
        output_scaler=doc["output_scaler"],
        n_steps=doc["n_steps"],
    )
