"""Feed-forward ReLU networks realizing the per-step Markov maps.

One independent network per time step is the default; a single
time-augmented network (input (t_n, x)) sits behind the ``time_input``
switch on :class:`MlpArch` for memory/quality trade-off studies.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import EAGER, Tape
from .errors import ParameterDomainError
from .stochastics import RngStream

INIT_SCHEMES = ("he-normal", "uniform-scaled")


@dataclass(frozen=True)
class MlpArch:
    """Shape of one Markov-map network: input_dim -> hidden... -> output_dim."""

    input_dim: int
    output_dim: int
    hidden: tuple = (20, 20, 20)
    time_input: bool = False

    def __post_init__(self):
        dims = (self.input_dim, self.output_dim) + tuple(self.hidden)
        if any(int(w) < 1 for w in dims):
            raise ParameterDomainError(f"all layer widths must be >= 1, got {dims}")

    @property
    def layer_dims(self) -> list:
        """(fan_in, fan_out) per affine layer, including the time feature if used."""
        d_in = self.input_dim + (1 if self.time_input else 0)
        widths = [d_in, *self.hidden, self.output_dim]
        return list(zip(widths[:-1], widths[1:]))

    @property
    def param_count(self) -> int:
        return sum(fi * fo + fo for fi, fo in self.layer_dims)


@dataclass
class MlpParams:
    """Per-layer weights (fan_out x fan_in) and biases for one network."""

    arch: MlpArch
    weights: list
    biases: list

    def __post_init__(self):
        dims = self.arch.layer_dims
        if len(self.weights) != len(dims) or len(self.biases) != len(dims):
            raise ParameterDomainError("layer count does not match architecture")
        for (fi, fo), w, b in zip(dims, self.weights, self.biases):
            if w.shape != (fo, fi) or b.shape != (fo,):
                raise ParameterDomainError(
                    f"layer shape mismatch: weights {w.shape}, bias {b.shape}, "
                    f"expected ({fo}, {fi}) and ({fo},)"
                )
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ParameterDomainError("network parameters must be finite")

    def copy(self) -> "MlpParams":
        return MlpParams(self.arch, [w.copy() for w in self.weights],
                         [b.copy() for b in self.biases])


def init_mlp(arch: MlpArch, rng: RngStream, scheme: str = "he-normal") -> MlpParams:
    """Random weights per ``scheme`` (biases zero), drawn from ``rng`` in layer order."""
    if scheme not in INIT_SCHEMES:
        raise ParameterDomainError(f"unknown init scheme {scheme!r}; use one of {INIT_SCHEMES}")
    weights, biases = [], []
    for fi, fo in arch.layer_dims:
        if scheme == "he-normal":
            w = rng.normals((fo, fi)) * np.sqrt(2.0 / fi)
        else:
            bound = np.sqrt(6.0 / fi)
            w = (rng.uniforms((fo, fi)) * 2.0 - 1.0) * bound
        weights.append(w)
        biases.append(np.zeros(fo))
    return MlpParams(arch, weights, biases)


def bind_mlp(tape: Tape, params: MlpParams, trainable: bool = True) -> list:
    """Parameter nodes for every layer, in canonical (W, b) per-layer order."""
    return [(tape.bind(w, trainable), tape.bind(b, trainable))
            for w, b in zip(params.weights, params.biases)]


def mlp_apply(params, x, tape: Tape):
    """Record affine-relu-...-affine on the tape; returns the output node id.

    ``params`` may be an :class:`MlpParams` (bound on the fly, memoized per
    tape) or a pre-bound list of (weight node, bias node) pairs.
    """
    layers = bind_mlp(tape, params) if isinstance(params, MlpParams) else params
    h = x
    for i, (w, b) in enumerate(layers):
        h = tape.affine(w, b, h)
        if i < len(layers) - 1:
            h = tape.relu(h)
    return h


def mlp_apply_eager(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Same composition as :func:`mlp_apply`, executed without a tape."""
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = EAGER.affine(w, b, h)
        if i < last:
            h = EAGER.relu(h)
    return h


@dataclass
class StepNets:
    """The trainable stack: one Markov-map network per time step plus y0.

    ``train_y0`` distinguishes the jointly-trained setting from the
    fixed-initial-value one, where y0 is a frozen constant excluded from
    the flat parameter vector.  With ``shared=True`` the stack holds a
    single time-augmented network applied at every step.
    """

    nets: list
    y0: float = 0.0
    train_y0: bool = True
    shared: bool = False

    def __post_init__(self):
        if not self.nets:
            raise ParameterDomainError("StepNets needs at least one network")
        if self.shared and (len(self.nets) != 1 or not self.arch.time_input):
            raise ParameterDomainError(
                "a shared stack holds exactly one network with time_input=True"
            )

    @property
    def n_nets(self) -> int:
        return len(self.nets)

    @property
    def arch(self) -> MlpArch:
        return self.nets[0].arch

    def copy(self) -> "StepNets":
        return StepNets([n.copy() for n in self.nets], self.y0, self.train_y0, self.shared)

    @classmethod
    def init(cls, arch: MlpArch, n_steps: int, seed: int, y0: float = 0.0,
             train_y0: bool = True, scheme: str = "he-normal",
             shared: bool = False) -> "StepNets":
        """Fresh stack with net n drawn from stream (seed, n)."""
        if n_steps < 1:
            raise ParameterDomainError(f"n_steps must be >= 1, got {n_steps}")
        nets = [init_mlp(arch, RngStream(seed, stream_id=n), scheme)
                for n in range(1 if shared else n_steps)]
        return cls(nets, float(y0), train_y0, shared)


@dataclass
class BoundStepNets:
    """Tape-side view of the network stack: node ids in flattening order.

    y0 is bound separately by the caller (it may be a constant)."""

    layers: list          # per net: list of (w_node, b_node)
    param_ids: list       # trainable node ids, ordered as in flatten_params
    param_shapes: list = field(default_factory=list)


def bind_step_nets(tape: Tape, nets: StepNets) -> BoundStepNets:
    """Bind every network as tape parameters.

    Binding is memoized per tape, so calling this (or recording rollouts
    that bind internally) repeatedly reuses the same parameter nodes and
    gradient contributions accumulate across shifted systems.
    """
    layers = [bind_mlp(tape, p, trainable=True) for p in nets.nets]
    ids, shapes = [], []
    for p, bound in zip(nets.nets, layers):
        for (wid, bid), w, b in zip(bound, p.weights, p.biases):
            ids.append(wid)
            shapes.append(w.shape)
            ids.append(bid)
            shapes.append(b.shape)
    return BoundStepNets(layers, ids, shapes)


def flatten_params(nets: StepNets):
    """Order-stable flat view of all trainable parameters.

    Returns the flat vector and an ``unflatten`` callable; the round trip
    reproduces the stack exactly.  y0 occupies the final slot when
    trainable and is absent otherwise.
    """
    pieces = []
    for p in nets.nets:
        for w, b in zip(p.weights, p.biases):
            pieces.append(w.ravel())
            pieces.append(b)
    if nets.train_y0:
        pieces.append(np.asarray([nets.y0], dtype=np.float64))
    flat = np.concatenate(pieces)
    arch, n_nets, train_y0 = nets.arch, nets.n_nets, nets.train_y0
    shared, frozen_y0 = nets.shared, nets.y0
    expected = n_nets * arch.param_count + (1 if train_y0 else 0)

    def unflatten(vec: np.ndarray) -> StepNets:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (expected,):
            raise ParameterDomainError(
                f"flat vector has length {vec.shape}, expected ({expected},)"
            )
        out, pos = [], 0
        for _ in range(n_nets):
            weights, biases = [], []
            for fi, fo in arch.layer_dims:
                weights.append(vec[pos:pos + fi * fo].reshape(fo, fi).copy())
                pos += fi * fo
                biases.append(vec[pos:pos + fo].copy())
                pos += fo
            out.append(MlpParams(arch, weights, biases))
        y0 = float(vec[pos]) if train_y0 else frozen_y0
        return StepNets(out, y0, train_y0, shared)

    return flat, unflatten


def save_checkpoint(nets: StepNets, prefix: str) -> None:
    """Write ``{prefix}.ckpt.json`` (header) and ``{prefix}.ckpt.bin`` (flat float64 LE)."""
    flat, _ = flatten_params(nets)
    header = {
        "format": "multifbsde-checkpoint-v1",
        "input_dim": nets.arch.input_dim,
        "output_dim": nets.arch.output_dim,
        "hidden": list(nets.arch.hidden),
        "time_input": nets.arch.time_input,
        "n_nets": nets.n_nets,
        "shared": nets.shared,
        "train_y0": nets.train_y0,
        "y0": nets.y0,
        "flat_length": int(flat.size),
        "dtype": "<f8",
    }
    with open(prefix + ".ckpt.json", "w", encoding="utf-8") as f:
        json.dump(header, f, indent=2, sort_keys=True)
        f.write("\n")
    flat.astype("<f8").tofile(prefix + ".ckpt.bin")


def load_checkpoint(prefix: str) -> StepNets:
    with open(prefix + ".ckpt.json", encoding="utf-8") as f:
        header = json.load(f)
    arch = MlpArch(header["input_dim"], header["output_dim"],
                   tuple(header["hidden"]), header.get("time_input", False))
    shared = header.get("shared", False)
    template = StepNets.init(arch, header["n_nets"], seed=0, y0=header["y0"],
                             train_y0=header["train_y0"], shared=shared)
    flat = np.fromfile(prefix + ".ckpt.bin", dtype="<f8")
    if flat.size != header["flat_length"]:
        raise ParameterDomainError(
            f"checkpoint payload has {flat.size} values, header says {header['flat_length']}"
        )
    _, unflatten = flatten_params(template)
    nets = unflatten(flat)
    if not header["train_y0"]:
        nets = replace(nets, y0=float(header["y0"]))
    return nets


def augment_time(ops, x, t: float, d: int):
    """Build the (x, t) input of a time-augmented network from primitives.

    Embeds x into d+1 coordinates and adds t in the last one, so a shared
    network can consume time without a concatenation primitive.
    """
    embed = np.zeros((d + 1, d))
    embed[:d, :d] = np.eye(d)
    t_vec = np.zeros(d + 1)
    t_vec[d] = t
    return ops.add(ops.matvec(ops.constant(embed), x), ops.constant(t_vec))
