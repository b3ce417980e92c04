"""Affine coupling flow with analytic Jacobians.

RealNVP-style stack (Dinh et al., 2016): each layer passes one coordinate
block through unchanged and applies an elementwise affine map to the other,
with log-scale and shift produced by small tanh MLPs of the untouched block.
Each layer's Jacobian is block-triangular with diagonal exp(s), so the
log-determinant is the sum of the clamped scale-net outputs and both
directions of the map are explicit. Layers alternate which block passes
through, otherwise half the coordinates would never be transformed.

The forward/inverse value paths are plain numpy; the same programs are also
recorded on an autograd tape for the two gradients the samplers and the
trainer need (parameter gradients of the likelihood, input gradient of the
model log-density).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Parameter

__all__ = [
    "CHECKPOINT_HEADER",
    "SCALE_CLAMP",
    "CheckpointError",
    "CouplingLayer",
    "FlowModel",
    "Mlp",
    "NonFiniteFlowError",
    "build_flow",
    "forward_on_tape",
    "inverse_on_tape",
    "load_checkpoint",
    "params_on_tape",
    "save_checkpoint",
]

LOG_TWO_PI = math.log(2.0 * math.pi)

# Scale-net outputs are clamped to +-SCALE_CLAMP before exponentiation, which
# bounds each layer's condition number at exp(2 * SCALE_CLAMP).
SCALE_CLAMP = 8.0

CHECKPOINT_HEADER = "NFSAILS-CKPT v1"


class NonFiniteFlowError(RuntimeError):
    """A layer produced a non-finite intermediate value."""

    def __init__(self, layer_index: int, direction: str):
        super().__init__(
            f"non-finite value leaving layer {layer_index} during {direction} pass"
        )
        self.layer_index = layer_index


class CheckpointError(RuntimeError):
    """Checkpoint file is malformed or has an unsupported version."""

    def __init__(self, message: str, expected: str | None = None, found: str | None = None):
        super().__init__(message)
        self.expected = expected
        self.found = found


@dataclass
class Mlp:
    """in -> hidden -> hidden -> out fully-connected net, tanh hidden units."""

    w1: Parameter
    b1: Parameter
    w2: Parameter
    b2: Parameter
    w3: Parameter
    b3: Parameter

    @classmethod
    def build(cls, in_dim: int, hidden: int, out_dim: int, rng: np.random.Generator) -> "Mlp":
        # Hidden layers get the usual uniform fan-in init; the output layer
        # starts at zero so a fresh flow is exactly the identity map.
        def uniform(fan_in, *shape):
            bound = 1.0 / math.sqrt(fan_in)
            return rng.uniform(-bound, bound, size=shape)

        return cls(
            w1=Parameter(uniform(in_dim, hidden, in_dim)),
            b1=Parameter(uniform(in_dim, hidden)),
            w2=Parameter(uniform(hidden, hidden, hidden)),
            b2=Parameter(uniform(hidden, hidden)),
            w3=Parameter(np.zeros((out_dim, hidden))),
            b3=Parameter(np.zeros(out_dim)),
        )

    def __call__(self, u: np.ndarray) -> np.ndarray:
        a = np.tanh(u @ self.w1.value.T + self.b1.value)
        a = np.tanh(a @ self.w2.value.T + self.b2.value)
        return a @ self.w3.value.T + self.b3.value

    def input_jacobian(self, u: np.ndarray) -> np.ndarray:
        """d(output)/d(input) at a single point, shape (out_dim, in_dim)."""
        a1 = np.tanh(u @ self.w1.value.T + self.b1.value)
        a2 = np.tanh(a1 @ self.w2.value.T + self.b2.value)
        j1 = (1.0 - a1 * a1)[:, None] * self.w1.value
        j2 = (1.0 - a2 * a2)[:, None] * (self.w2.value @ j1)
        return self.w3.value @ j2

    def parameters(self) -> list[Parameter]:
        return [self.w1, self.b1, self.w2, self.b2, self.w3, self.b3]


def _mlp_on_tape(param_vars: list[ag.Var], u: ag.Var) -> ag.Var:
    w1, b1, w2, b2, w3, b3 = param_vars
    a = ag.tanh(ag.add(ag.matvec(w1, u), b1))
    a = ag.tanh(ag.add(ag.matvec(w2, a), b2))
    return ag.add(ag.matvec(w3, a), b3)


@dataclass
class CouplingLayer:
    """One affine coupling bijection on R^dim.

    ``split_index`` coordinates pass through unchanged; with ``flip`` the
    pass-through block is the trailing one instead of the leading one.
    """

    split_index: int
    flip: bool
    scale_net: Mlp
    translate_net: Mlp
    dim: int

    def _ranges(self) -> tuple[tuple[int, int], tuple[int, int]]:
        """Column ranges (pass, transform) in the ambient coordinate order."""
        d = self.split_index
        if self.flip:
            return (self.dim - d, self.dim), (0, self.dim - d)
        return (0, d), (d, self.dim)

    def _split(self, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        (p0, p1), (t0, t1) = self._ranges()
        return u[..., p0:p1], u[..., t0:t1]

    def _join(self, u_pass: np.ndarray, u_trans: np.ndarray) -> np.ndarray:
        if self.flip:
            return np.concatenate([u_trans, u_pass], axis=-1)
        return np.concatenate([u_pass, u_trans], axis=-1)

    def forward(self, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Map u -> v; also return the per-point sum of clamped log-scales."""
        u_pass, u_trans = self._split(u)
        s = np.clip(self.scale_net(u_pass), -SCALE_CLAMP, SCALE_CLAMP)
        v_trans = u_trans * np.exp(s) + self.translate_net(u_pass)
        return self._join(u_pass, v_trans), s.sum(axis=-1)

    def inverse(self, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Map v -> u; also return the per-point inverse log-determinant."""
        v_pass, v_trans = self._split(v)
        s = np.clip(self.scale_net(v_pass), -SCALE_CLAMP, SCALE_CLAMP)
        u_trans = (v_trans - self.translate_net(v_pass)) * np.exp(-s)
        return self._join(v_pass, u_trans), -s.sum(axis=-1)

    def jacobian(self, u: np.ndarray) -> np.ndarray:
        """Dense dim x dim Jacobian of this layer at a single input point."""
        (p0, p1), (t0, t1) = self._ranges()
        pass_idx = np.arange(p0, p1)
        trans_idx = np.arange(t0, t1)
        u_pass, u_trans = self._split(u)
        raw = self.scale_net(u_pass)
        s = np.clip(raw, -SCALE_CLAMP, SCALE_CLAMP)
        inside = (raw > -SCALE_CLAMP) & (raw < SCALE_CLAMP)
        es = np.exp(s)
        js = inside[:, None] * self.scale_net.input_jacobian(u_pass)
        jt = self.translate_net.input_jacobian(u_pass)
        block = (u_trans * es)[:, None] * js + jt
        jac = np.zeros((self.dim, self.dim))
        jac[pass_idx, pass_idx] = 1.0
        jac[np.ix_(trans_idx, pass_idx)] = block
        jac[trans_idx, trans_idx] = es
        return jac

    def parameters(self) -> list[Parameter]:
        return self.scale_net.parameters() + self.translate_net.parameters()

    def named_arrays(self) -> list[tuple[str, np.ndarray]]:
        names = ["w1", "b1", "w2", "b2", "w3", "b3"]
        out = [(f"scale.{n}", p.value) for n, p in zip(names, self.scale_net.parameters())]
        out += [(f"translate.{n}", p.value) for n, p in zip(names, self.translate_net.parameters())]
        return out


def _gaussian_log_density(z: np.ndarray, dim: int):
    return -0.5 * dim * LOG_TWO_PI - 0.5 * np.sum(z * z, axis=-1)


@dataclass
class FlowModel:
    """Composition of coupling layers acting on R^dim.

    The model is immutable once training ends; all methods here are read-only
    and safe to call from many tasks concurrently (each gradient call builds
    its own private tape).
    """

    layers: list[CouplingLayer]
    dim: int

    def forward(self, z):
        """Push latent point(s) forward; returns (x, log |det J_f|).

        Accepts a single (dim,) point or an (n, dim) batch; log-determinants
        come back as a scalar or an (n,) vector accordingly.
        """
        u = np.asarray(z, dtype=np.float64)
        log_det = 0.0
        for i, layer in enumerate(self.layers):
            u, ds = layer.forward(u)
            if not np.all(np.isfinite(u)):
                raise NonFiniteFlowError(i, "forward")
            log_det = log_det + ds
        return u, log_det

    def inverse(self, x):
        """Pull data point(s) back; returns (z, log |det J_{f^-1}|)."""
        u = np.asarray(x, dtype=np.float64)
        log_det_inv = 0.0
        for i in range(len(self.layers) - 1, -1, -1):
            u, ds = self.layers[i].inverse(u)
            if not np.all(np.isfinite(u)):
                raise NonFiniteFlowError(i, "inverse")
            log_det_inv = log_det_inv + ds
        return u, log_det_inv

    def jacobian_matrix(self, z) -> np.ndarray:
        """Dense Jacobian of the full map at one latent point.

        Chain-rule product of per-layer blocks evaluated along the layer
        trajectory. Its determinant always agrees with the log-determinant
        accumulated by :meth:`forward`.
        """
        u = np.asarray(z, dtype=np.float64)
        jac = np.eye(self.dim)
        for layer in self.layers:
            jac = layer.jacobian(u) @ jac
            u, _ = layer.forward(u)
        return jac

    def pullback_log_density(self, z):
        """log q~_Z(z) = log q_Z(z) - log |det J_f(z)|.

        Equals the model log-density log q_X evaluated at f(z).
        """
        zz = np.asarray(z, dtype=np.float64)
        _, log_det = self.forward(zz)
        return _gaussian_log_density(zz, self.dim) - log_det

    def latent_score(self, z) -> np.ndarray:
        """Gradient of the data-space log-density at x = f(z).

        Differentiates x -> log q_Z(f^-1(x)) + log |det J_{f^-1}(x)| in
        reverse mode, which avoids forming or inverting any Jacobian; the
        result equals J_f^{-1}(z) applied to the pullback score.
        """
        x, _ = self.forward(np.asarray(z, dtype=np.float64))
        tape = ag.Tape()
        xv = tape.leaf(x)
        zv, log_det_inv = inverse_on_tape(tape, self, xv)
        log_qz = ag.shift(
            ag.scale(ag.sum_all(ag.mul(zv, zv)), -0.5), -0.5 * self.dim * LOG_TWO_PI
        )
        root = ag.add(log_qz, log_det_inv)
        adjoints = ag.backward(tape, root)
        return np.asarray(adjoints[xv.idx], dtype=np.float64)

    def pullback_score(self, z) -> np.ndarray:
        """Gradient of log q~_Z with respect to the latent point."""
        tape = ag.Tape()
        zv = tape.leaf(np.asarray(z, dtype=np.float64))
        _, log_det = forward_on_tape(tape, self, zv)
        log_qz = ag.shift(
            ag.scale(ag.sum_all(ag.mul(zv, zv)), -0.5), -0.5 * self.dim * LOG_TWO_PI
        )
        root = ag.add(log_qz, ag.scale(log_det, -1.0))
        adjoints = ag.backward(tape, root)
        return np.asarray(adjoints[zv.idx], dtype=np.float64)

    def parameters(self) -> list[Parameter]:
        out: list[Parameter] = []
        for layer in self.layers:
            out.extend(layer.parameters())
        return out


def build_flow(
    dim: int = 2,
    n_layers: int = 4,
    hidden: int = 16,
    split_index: int | None = None,
    rng: np.random.Generator | None = None,
) -> FlowModel:
    """Construct a stack of coupling layers starting at the identity map."""
    if split_index is None:
        split_index = dim // 2
    if not 1 <= split_index < dim:
        raise ValueError(f"split_index must satisfy 1 <= d < dim, got {split_index}")
    if rng is None:
        rng = np.random.default_rng(0)
    layers = []
    for i in range(n_layers):
        d = split_index
        layers.append(
            CouplingLayer(
                split_index=d,
                flip=bool(i % 2),
                scale_net=Mlp.build(d, hidden, dim - d, rng),
                translate_net=Mlp.build(d, hidden, dim - d, rng),
                dim=dim,
            )
        )
    return FlowModel(layers=layers, dim=dim)


# ---------------------------------------------------------------------------
# Tape programs. These mirror the numpy value paths primitive by primitive so
# recorded outputs match the eager ones bit for bit.
# ---------------------------------------------------------------------------


def params_on_tape(tape: ag.Tape, model: FlowModel) -> list[list[ag.Var]]:
    """Register every layer parameter as a tape leaf; order matches
    ``layer.parameters()`` (scale net first, then translate net)."""
    return [[tape.leaf(p) for p in layer.parameters()] for layer in model.layers]


def forward_on_tape(
    tape: ag.Tape,
    model: FlowModel,
    z: ag.Var,
    params: list[list[ag.Var]] | None = None,
) -> tuple[ag.Var, ag.Var]:
    """Record z -> f(z); returns (x, total log-determinant over the batch)."""
    if params is None:
        params = params_on_tape(tape, model)
    u = z
    total = None
    for layer, pv in zip(model.layers, params):
        (p0, p1), (t0, t1) = layer._ranges()
        u_pass = ag.slice_cols(u, p0, p1)
        u_trans = ag.slice_cols(u, t0, t1)
        s = ag.clip(_mlp_on_tape(pv[:6], u_pass), -SCALE_CLAMP, SCALE_CLAMP)
        v_trans = ag.add(ag.mul(u_trans, ag.exp(s)), _mlp_on_tape(pv[6:], u_pass))
        u = ag.concat(v_trans, u_pass) if layer.flip else ag.concat(u_pass, v_trans)
        ssum = ag.sum_all(s)
        total = ssum if total is None else ag.add(total, ssum)
    return u, total


def inverse_on_tape(
    tape: ag.Tape,
    model: FlowModel,
    x: ag.Var,
    params: list[list[ag.Var]] | None = None,
) -> tuple[ag.Var, ag.Var]:
    """Record x -> f^-1(x); returns (z, total inverse log-determinant)."""
    if params is None:
        params = params_on_tape(tape, model)
    u = x
    total = None
    for layer, pv in zip(reversed(model.layers), reversed(params)):
        (p0, p1), (t0, t1) = layer._ranges()
        v_pass = ag.slice_cols(u, p0, p1)
        v_trans = ag.slice_cols(u, t0, t1)
        s = ag.clip(_mlp_on_tape(pv[:6], v_pass), -SCALE_CLAMP, SCALE_CLAMP)
        u_trans = ag.mul(
            ag.add(v_trans, ag.scale(_mlp_on_tape(pv[6:], v_pass), -1.0)),
            ag.exp(ag.scale(s, -1.0)),
        )
        u = ag.concat(u_trans, v_pass) if layer.flip else ag.concat(v_pass, u_trans)
        neg = ag.scale(ag.sum_all(s), -1.0)
        total = neg if total is None else ag.add(total, neg)
    return u, total


# ---------------------------------------------------------------------------
# Checkpoint format: versioned plain text, 17 significant digits per value so
# load(save(model)) reproduces outputs bit-exactly.
# ---------------------------------------------------------------------------


def save_checkpoint(model: FlowModel, path) -> None:
    lines = [CHECKPOINT_HEADER, f"dim={model.dim}", f"layers={len(model.layers)}"]
    for layer in model.layers:
        lines.append(f"layer split_index={layer.split_index} flip={int(layer.flip)}")
        for name, arr in layer.named_arrays():
            mat = np.atleast_2d(arr)
            lines.append(f"array {name} {mat.shape[0]} {mat.shape[1]}")
            for row in mat:
                lines.append(" ".join(format(v, ".17g") for v in row))
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path) -> FlowModel:
    with open(path, "r", encoding="ascii") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or lines[0] != CHECKPOINT_HEADER:
        found = lines[0] if lines else "<empty file>"
        raise CheckpointError(
            f"checkpoint version mismatch: expected {CHECKPOINT_HEADER!r}, found {found!r}",
            expected=CHECKPOINT_HEADER,
            found=found,
        )
    try:
        dim = int(lines[1].split("=", 1)[1])
        n_layers = int(lines[2].split("=", 1)[1])
    except (IndexError, ValueError) as err:
        raise CheckpointError(f"malformed checkpoint header: {err}") from err

    pos = 3
    names = ["w1", "b1", "w2", "b2", "w3", "b3"]
    layers = []
    for _ in range(n_layers):
        fields = dict(tok.split("=") for tok in lines[pos].split()[1:])
        split_index = int(fields["split_index"])
        flip = bool(int(fields["flip"]))
        pos += 1
        arrays: dict[str, np.ndarray] = {}
        for _ in range(12):
            _, name, rows, cols = lines[pos].split()
            rows, cols = int(rows), int(cols)
            pos += 1
            data = np.array(
                [[float(v) for v in lines[pos + r].split()] for r in range(rows)]
            )
            pos += rows
            if data.shape != (rows, cols):
                raise CheckpointError(f"array {name}: expected {rows}x{cols} values")
            if name.split(".")[1].startswith("b"):
                data = data.reshape(cols)
            arrays[name] = data
        scale_net = Mlp(*[Parameter(arrays[f"scale.{n}"]) for n in names])
        translate_net = Mlp(*[Parameter(arrays[f"translate.{n}"]) for n in names])
        layers.append(
            CouplingLayer(
                split_index=split_index,
                flip=flip,
                scale_net=scale_net,
                translate_net=translate_net,
                dim=dim,
            )
        )
    return FlowModel(layers=layers, dim=dim)
