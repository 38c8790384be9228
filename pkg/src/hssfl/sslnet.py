"""Per-client non-contrastive self-supervised networks with manual backprop.

Each client owns an online branch (MLP encoder plus a single affine
predictor) and a target branch (encoder of identical shape, updated only by
exponential moving average, never by gradients). Training minimizes the
mean squared error between the online branch's output on one view and the
target branch's output on a second view, optionally plus a mu-weighted
proximal penalty coupling the client's representations of a shared
alignment batch to a fixed reference received from the server.

All models are updated functionally: operations return new ClientModel
values and never mutate their inputs, so models can be shared across
parallel workers safely.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import cka
from .errors import ConfigError, NumericalFailureError, DegenerateInputError, ShapeError
from .numkit import (
    Matrix,
    RngStream,
    as_matrix,
    load_matrix_csv,
    save_matrix_csv,
)

ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class MlpSpec:
    """Encoder shape: input width, hidden widths, representation width.

    The named activation applies to hidden layers; the output layer is
    always identity (affine).
    """

    layer_widths: Tuple[int, ...]
    activation: str = "relu"

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        if len(widths) < 2:
            raise ConfigError("layer_widths needs at least input and output entries")
        if any(w < 1 for w in widths):
            raise ConfigError(f"all layer widths must be >= 1, got {widths}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"activation must be one of {ACTIVATIONS}")
        object.__setattr__(self, "layer_widths", widths)

    @property
    def input_width(self) -> int:
        return self.layer_widths[0]

    @property
    def output_width(self) -> int:
        return self.layer_widths[-1]

    def to_dict(self) -> dict:
        return {"layer_widths": list(self.layer_widths), "activation": self.activation}

    @staticmethod
    def from_dict(d: dict) -> "MlpSpec":
        return MlpSpec(tuple(d["layer_widths"]), d["activation"])


@dataclass
class ClientModel:
    """Online encoder + predictor, EMA target encoder, momentum buffers."""

    spec: MlpSpec
    online_w: List[Matrix]
    online_b: List[np.ndarray]
    pred_w: Matrix
    pred_b: np.ndarray
    target_w: List[Matrix]
    target_b: List[np.ndarray]
    tau: float
    mom_w: List[Matrix] = field(default_factory=list)
    mom_b: List[np.ndarray] = field(default_factory=list)
    mom_pred_w: Optional[Matrix] = None
    mom_pred_b: Optional[np.ndarray] = None

    def copy(self) -> "ClientModel":
        return ClientModel(
            spec=self.spec,
            online_w=[w.copy() for w in self.online_w],
            online_b=[b.copy() for b in self.online_b],
            pred_w=self.pred_w.copy(),
            pred_b=self.pred_b.copy(),
            target_w=[w.copy() for w in self.target_w],
            target_b=[b.copy() for b in self.target_b],
            tau=self.tau,
            mom_w=[m.copy() for m in self.mom_w],
            mom_b=[m.copy() for m in self.mom_b],
            mom_pred_w=self.mom_pred_w.copy(),
            mom_pred_b=self.mom_pred_b.copy(),
        )

    @property
    def rep_width(self) -> int:
        return self.pred_w.shape[1]


@dataclass(frozen=True)
class ViewPair:
    v_prime: Matrix
    v_doubleprime: Matrix


@dataclass(frozen=True)
class AugmentConfig:
    noise_std: float = 0.0
    mask_prob: float = 0.0

    def __post_init__(self):
        if self.noise_std < 0:
            raise ConfigError(f"noise_std must be >= 0, got {self.noise_std}")
        if not (0.0 <= self.mask_prob < 1.0):
            raise ConfigError(f"mask_prob must be in [0, 1), got {self.mask_prob}")

    @property
    def is_identity(self) -> bool:
        return self.noise_std == 0.0 and self.mask_prob == 0.0


@dataclass
class ActivationTape:
    """Cached forward pass: inputs to each layer plus pre-activations."""

    inputs: List[Matrix]      # h_0 = batch, h_1, ..., h_{depth-1}
    pre_acts: List[Matrix]    # z_i per encoder layer
    enc_out: Matrix
    pred_out: Matrix


@dataclass
class StepResult:
    model: "ClientModel"
    loss_total: float
    loss_ssl: float
    loss_prox: float
    grad_norm: float


def init_client_model(
    spec: MlpSpec, predictor_width: int, tau: float, rng: RngStream
) -> ClientModel:
    """He-scaled Gaussian weights, zero biases; target starts as an exact copy
    of the online encoder. The predictor output width must equal the encoder
    output width so the regression target is well-formed."""
    if not (0.0 <= tau <= 1.0):
        raise ConfigError(f"tau must be in [0, 1], got {tau}")
    if predictor_width != spec.output_width:
        raise ConfigError(
            f"predictor width {predictor_width} must equal encoder output width "
            f"{spec.output_width}"
        )
    gen = rng.generator()
    online_w, online_b = [], []
    for fan_in, fan_out in zip(spec.layer_widths[:-1], spec.layer_widths[1:]):
        std = np.sqrt(2.0 / fan_in)
        online_w.append(gen.normal(0.0, std, size=(fan_in, fan_out)))
        online_b.append(np.zeros(fan_out))
    pred_w = gen.normal(0.0, np.sqrt(2.0 / spec.output_width),
                        size=(spec.output_width, predictor_width))
    pred_b = np.zeros(predictor_width)
    return ClientModel(
        spec=spec,
        online_w=online_w,
        online_b=online_b,
        pred_w=pred_w,
        pred_b=pred_b,
        target_w=[w.copy() for w in online_w],
        target_b=[b.copy() for b in online_b],
        tau=tau,
        mom_w=[np.zeros_like(w) for w in online_w],
        mom_b=[np.zeros_like(b) for b in online_b],
        mom_pred_w=np.zeros_like(pred_w),
        mom_pred_b=np.zeros_like(pred_b),
    )


def augment(batch: Matrix, cfg: AugmentConfig, rng: RngStream) -> ViewPair:
    """Two views: additive Gaussian noise then independent zero-masking.

    The views draw from independent sub-streams so repeated calls with the
    same stream reproduce the same pair.
    """
    batch = as_matrix(batch, "batch")

    def one_view(tag: str) -> Matrix:
        gen = rng.sub(tag).generator()
        view = batch + gen.normal(0.0, cfg.noise_std, size=batch.shape)
        if cfg.mask_prob > 0.0:
            view = np.where(gen.random(batch.shape) < cfg.mask_prob, 0.0, view)
        return view

    if cfg.is_identity:
        return ViewPair(batch.copy(), batch.copy())
    return ViewPair(one_view("view1"), one_view("view2"))


def _act(z: Matrix, activation: str) -> Matrix:
    if activation == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _act_grad(z: Matrix, h: Matrix, activation: str) -> Matrix:
    if activation == "relu":
        return (z > 0.0).astype(np.float64)
    return 1.0 - h * h


def _encoder_forward(
    weights: Sequence[Matrix],
    biases: Sequence[np.ndarray],
    activation: str,
    x: Matrix,
) -> Tuple[Matrix, List[Matrix], List[Matrix]]:
    inputs = [x]
    pre_acts = []
    h = x
    last = len(weights) - 1
    for i, (w, b) in enumerate(zip(weights, biases)):
        z = h @ w + b
        pre_acts.append(z)
        h = z if i == last else _act(z, activation)
        if i != last:
            inputs.append(h)
    return h, inputs, pre_acts


def forward_online(model: ClientModel, batch: Matrix) -> Tuple[Matrix, ActivationTape]:
    """Predictor output plus the cached activations needed for backprop."""
    batch = as_matrix(batch, "batch")
    if batch.shape[1] != model.spec.input_width:
        raise ShapeError(
            f"batch width {batch.shape[1]} != encoder input {model.spec.input_width}"
        )
    enc_out, inputs, pre_acts = _encoder_forward(
        model.online_w, model.online_b, model.spec.activation, batch
    )
    pred_out = enc_out @ model.pred_w + model.pred_b
    return pred_out, ActivationTape(inputs, pre_acts, enc_out, pred_out)


def forward_target(model: ClientModel, batch: Matrix) -> Matrix:
    """Target-encoder output; never contributes gradients."""
    batch = as_matrix(batch, "batch")
    if batch.shape[1] != model.spec.input_width:
        raise ShapeError(
            f"batch width {batch.shape[1]} != encoder input {model.spec.input_width}"
        )
    out, _, _ = _encoder_forward(
        model.target_w, model.target_b, model.spec.activation, batch
    )
    return out


def ssl_loss(pred: Matrix, target: Matrix, normalize: bool = False) -> float:
    """Mean over the batch of ||p_b - t_b||^2, optionally on L2-normalized rows."""
    loss, _ = _ssl_loss_grad(pred, target, normalize, want_grad=False)
    return loss


def _row_norms(m: Matrix) -> np.ndarray:
    return np.sqrt(np.sum(m * m, axis=1))


def _ssl_loss_grad(
    pred: Matrix, target: Matrix, normalize: bool, want_grad: bool = True
) -> Tuple[float, Optional[Matrix]]:
    pred = as_matrix(pred, "pred")
    target = as_matrix(target, "target")
    if pred.shape != target.shape:
        raise ShapeError(f"shapes differ: {pred.shape} vs {target.shape}")
    batch = pred.shape[0]
    if not normalize:
        diff = pred - target
        loss = float(np.sum(diff * diff)) / batch
        grad = (2.0 / batch) * diff if want_grad else None
        return loss, grad
    rp = _row_norms(pred)
    rt = _row_norms(target)
    if np.any(rp == 0.0) or np.any(rt == 0.0):
        raise DegenerateInputError("cannot L2-normalize a zero row")
    p_hat = pred / rp[:, None]
    t_hat = target / rt[:, None]
    diff = p_hat - t_hat
    loss = float(np.sum(diff * diff)) / batch
    if not want_grad:
        return loss, None
    # d/dp ||p_hat - t_hat||^2 = (2/r) (I - p_hat p_hat^T)(p_hat - t_hat)
    proj = np.sum(p_hat * diff, axis=1)
    grad = (2.0 / batch) * (diff - p_hat * proj[:, None]) / rp[:, None]
    return loss, grad


def representations(
    model: ClientModel, rad: Matrix, clip_radius: Optional[float] = None
) -> Matrix:
    """Deterministic predictor output on the alignment rows, no augmentation.

    With clip_radius set, rows are radially clipped to that norm so the
    representation-norm bound holds by construction.
    """
    pred_out, _ = forward_online(model, rad)
    if clip_radius is None:
        return pred_out
    return _clip_rows(pred_out, clip_radius)[0]


def _clip_rows(m: Matrix, radius: float) -> Tuple[Matrix, np.ndarray, np.ndarray]:
    if radius <= 0:
        raise ConfigError(f"clip radius must be > 0, got {radius}")
    norms = _row_norms(m)
    over = norms > radius
    if not np.any(over):
        return m, over, norms
    scale = np.ones_like(norms)
    scale[over] = radius / norms[over]
    return m * scale[:, None], over, norms


def _clip_rows_backward(
    m_raw: Matrix, grad_clipped: Matrix, over: np.ndarray, norms: np.ndarray, radius: float
) -> Matrix:
    # Jacobian of r -> radius * x / ||x|| on clipped rows, identity elsewhere.
    if not np.any(over):
        return grad_clipped
    grad = grad_clipped.copy()
    idx = np.where(over)[0]
    x = m_raw[idx]
    g = grad_clipped[idx]
    r = norms[idx][:, None]
    dot = np.sum(x * g, axis=1, keepdims=True)
    grad[idx] = (radius / r) * (g - x * (dot / (r * r)))
    return grad


def _check_forward(pred: Matrix, target: Matrix) -> None:
    if not np.all(np.isfinite(pred)):
        raise NumericalFailureError("online forward")
    if not np.all(np.isfinite(target)):
        raise NumericalFailureError("target forward")


def _backprop(
    model: ClientModel, tape: ActivationTape, d_pred: Matrix
):
    """Gradients of a scalar loss through predictor and encoder, given
    dLoss/d(predictor output)."""
    g_pred_w = tape.enc_out.T @ d_pred
    g_pred_b = d_pred.sum(axis=0)
    dh = d_pred @ model.pred_w.T
    g_w = [None] * len(model.online_w)
    g_b = [None] * len(model.online_b)
    last = len(model.online_w) - 1
    for i in range(last, -1, -1):
        if i == last:
            dz = dh
        else:
            h_i = tape.inputs[i + 1]
            dz = dh * _act_grad(tape.pre_acts[i], h_i, model.spec.activation)
        g_w[i] = tape.inputs[i].T @ dz
        g_b[i] = dz.sum(axis=0)
        if i > 0:
            dh = dz @ model.online_w[i].T
    return g_w, g_b, g_pred_w, g_pred_b


def combined_loss(
    model: ClientModel,
    local_batch: Matrix,
    rad: Optional[Matrix],
    reference,
    mu: float,
    form,
    rng: RngStream,
    augment_cfg: AugmentConfig = AugmentConfig(),
    normalize: bool = False,
    clip_radius: Optional[float] = None,
    symmetrize: bool = False,
) -> Tuple[float, float, float]:
    """Forward-only evaluation of the combined objective.

    Returns (loss_total, loss_ssl, loss_prox); identical values to
    loss_and_grad with the backward pass skipped.
    """
    views = augment(local_batch, augment_cfg, rng.sub("aug"))
    pred, _ = forward_online(model, views.v_prime)
    target = forward_target(model, views.v_doubleprime)
    _check_forward(pred, target)
    loss_ssl, _ = _ssl_loss_grad(pred, target, normalize, want_grad=False)
    if symmetrize:
        pred2, _ = forward_online(model, views.v_doubleprime)
        target2 = forward_target(model, views.v_prime)
        _check_forward(pred2, target2)
        other, _ = _ssl_loss_grad(pred2, target2, normalize, want_grad=False)
        loss_ssl += other
    loss_prox = 0.0
    if mu > 0.0:
        if rad is None or reference is None:
            raise ConfigError("mu > 0 requires an alignment batch and a reference")
        phi = representations(model, rad, clip_radius=clip_radius)
        if not np.all(np.isfinite(phi)):
            raise NumericalFailureError("representations")
        try:
            loss_prox = cka.proximal_value(phi, reference, form, mu)
        except ShapeError as exc:
            if "non-finite" in str(exc):
                raise NumericalFailureError("proximal term", str(exc)) from None
            raise
    loss_total = loss_ssl + loss_prox
    if not np.isfinite(loss_total):
        raise NumericalFailureError("loss", f"ssl={loss_ssl} prox={loss_prox}")
    return loss_total, loss_ssl, loss_prox


def loss_and_grad(
    model: ClientModel,
    local_batch: Matrix,
    rad: Optional[Matrix],
    reference,
    mu: float,
    form,
    rng: RngStream,
    augment_cfg: AugmentConfig = AugmentConfig(),
    normalize: bool = False,
    clip_radius: Optional[float] = None,
    symmetrize: bool = False,
):
    """Losses and analytic gradients of the combined objective, no update.

    Returns (loss_total, loss_ssl, loss_prox, (g_w, g_b, g_pred_w, g_pred_b)).
    The proximal branch treats the reference as a constant and is skipped
    entirely when mu == 0 so that path is bit-identical to plain SSL. The
    one-directional regression loss is the default; ``symmetrize`` adds the
    view-swapped direction.
    """
    views = augment(local_batch, augment_cfg, rng.sub("aug"))
    pred, tape = forward_online(model, views.v_prime)
    target = forward_target(model, views.v_doubleprime)
    _check_forward(pred, target)
    loss_ssl, d_pred = _ssl_loss_grad(pred, target, normalize)
    g_w, g_b, g_pw, g_pb = _backprop(model, tape, d_pred)
    if symmetrize:
        pred2, tape2 = forward_online(model, views.v_doubleprime)
        target2 = forward_target(model, views.v_prime)
        _check_forward(pred2, target2)
        other, d_pred2 = _ssl_loss_grad(pred2, target2, normalize)
        loss_ssl += other
        sg_w, sg_b, sg_pw, sg_pb = _backprop(model, tape2, d_pred2)
        for i in range(len(g_w)):
            g_w[i] = g_w[i] + sg_w[i]
            g_b[i] = g_b[i] + sg_b[i]
        g_pw = g_pw + sg_pw
        g_pb = g_pb + sg_pb

    loss_prox = 0.0
    if mu > 0.0:
        if rad is None or reference is None:
            raise ConfigError("mu > 0 requires an alignment batch and a reference")
        phi_raw, rad_tape = forward_online(model, rad)
        if not np.all(np.isfinite(phi_raw)):
            raise NumericalFailureError("representations")
        if clip_radius is not None:
            phi, over, norms = _clip_rows(phi_raw, clip_radius)
        else:
            phi = phi_raw
        try:
            loss_prox = cka.proximal_value(phi, reference, form, mu)
            d_phi = cka.proximal_grad(phi, reference, form)
        except ShapeError as exc:
            if "non-finite" in str(exc):
                raise NumericalFailureError("proximal term", str(exc)) from None
            raise
        if clip_radius is not None:
            d_phi = _clip_rows_backward(phi_raw, d_phi, over, norms, clip_radius)
        pg_w, pg_b, pg_pw, pg_pb = _backprop(model, rad_tape, d_phi)
        for i in range(len(g_w)):
            g_w[i] = g_w[i] + mu * pg_w[i]
            g_b[i] = g_b[i] + mu * pg_b[i]
        g_pw = g_pw + mu * pg_pw
        g_pb = g_pb + mu * pg_pb

    loss_total = loss_ssl + loss_prox
    if not np.isfinite(loss_total):
        raise NumericalFailureError("loss", f"ssl={loss_ssl} prox={loss_prox}")
    for name, arrs in (("encoder gradient", g_w + g_b),
                       ("predictor gradient", [g_pw, g_pb])):
        for a in arrs:
            if not np.all(np.isfinite(a)):
                raise NumericalFailureError(name)
    return loss_total, loss_ssl, loss_prox, (g_w, g_b, g_pw, g_pb)


def flatten_grads(grads) -> np.ndarray:
    g_w, g_b, g_pw, g_pb = grads
    parts = []
    for w, b in zip(g_w, g_b):
        parts.append(w.ravel())
        parts.append(b.ravel())
    parts.append(g_pw.ravel())
    parts.append(g_pb.ravel())
    return np.concatenate(parts)


def flatten_params(model: ClientModel) -> np.ndarray:
    """Trainable parameters (online encoder + predictor) as one vector."""
    parts = []
    for w, b in zip(model.online_w, model.online_b):
        parts.append(w.ravel())
        parts.append(b.ravel())
    parts.append(model.pred_w.ravel())
    parts.append(model.pred_b.ravel())
    return np.concatenate(parts)


def set_params(model: ClientModel, vec: np.ndarray) -> ClientModel:
    """Inverse of flatten_params; returns a new model with the given
    trainable parameters (target and buffers unchanged)."""
    out = model.copy()
    pos = 0
    for i in range(len(out.online_w)):
        for attr, arrs in (("online_w", out.online_w), ("online_b", out.online_b)):
            a = arrs[i]
            n = a.size
            arrs[i] = vec[pos:pos + n].reshape(a.shape).copy()
            pos += n
    n = out.pred_w.size
    out.pred_w = vec[pos:pos + n].reshape(out.pred_w.shape).copy()
    pos += n
    n = out.pred_b.size
    out.pred_b = vec[pos:pos + n].reshape(out.pred_b.shape).copy()
    pos += n
    if pos != vec.size:
        raise ShapeError(f"parameter vector length {vec.size} != expected {pos}")
    return out


def combined_step(
    model: ClientModel,
    local_batch: Matrix,
    rad: Optional[Matrix],
    reference,
    mu: float,
    form,
    eta: float,
    momentum: float,
    rng: RngStream,
    augment_cfg: AugmentConfig = AugmentConfig(),
    normalize: bool = False,
    clip_radius: Optional[float] = None,
    symmetrize: bool = False,
) -> StepResult:
    """One SGD-with-momentum step on the online branch.

    The target branch is untouched. Reported losses and the gradient norm
    are the pre-step values.
    """
    if mu < 0:
        raise ConfigError(f"mu must be >= 0, got {mu}")
    if eta < 0:
        raise ConfigError(f"eta must be >= 0, got {eta}")
    loss_total, loss_ssl, loss_prox, grads = loss_and_grad(
        model, local_batch, rad, reference, mu, form, rng,
        augment_cfg=augment_cfg, normalize=normalize, clip_radius=clip_radius,
        symmetrize=symmetrize,
    )
    g_w, g_b, g_pw, g_pb = grads
    grad_norm = float(np.linalg.norm(flatten_grads(grads)))

    out = model.copy()
    for i in range(len(out.online_w)):
        out.mom_w[i] = momentum * out.mom_w[i] + g_w[i]
        out.mom_b[i] = momentum * out.mom_b[i] + g_b[i]
        out.online_w[i] = out.online_w[i] - eta * out.mom_w[i]
        out.online_b[i] = out.online_b[i] - eta * out.mom_b[i]
    out.mom_pred_w = momentum * out.mom_pred_w + g_pw
    out.mom_pred_b = momentum * out.mom_pred_b + g_pb
    out.pred_w = out.pred_w - eta * out.mom_pred_w
    out.pred_b = out.pred_b - eta * out.mom_pred_b
    return StepResult(out, loss_total, loss_ssl, loss_prox, grad_norm)


def ema_update(model: ClientModel, tau: Optional[float] = None) -> ClientModel:
    """Target <- tau * target + (1 - tau) * online, per weight tensor."""
    tau = model.tau if tau is None else tau
    if not (0.0 <= tau <= 1.0):
        raise ConfigError(f"tau must be in [0, 1], got {tau}")
    out = model.copy()
    out.target_w = [tau * t + (1.0 - tau) * o for t, o in zip(out.target_w, out.online_w)]
    out.target_b = [tau * t + (1.0 - tau) * o for t, o in zip(out.target_b, out.online_b)]
    return out


def save_model(model: ClientModel, directory: str, round_index: Optional[int] = None) -> None:
    """Checkpoint: one CSV per tensor plus a JSON manifest."""
    os.makedirs(directory, exist_ok=True)
    for i, (w, b) in enumerate(zip(model.online_w, model.online_b)):
        save_matrix_csv(w, os.path.join(directory, f"online_w{i}.csv"))
        save_matrix_csv(b[None, :], os.path.join(directory, f"online_b{i}.csv"))
    for i, (w, b) in enumerate(zip(model.target_w, model.target_b)):
        save_matrix_csv(w, os.path.join(directory, f"target_w{i}.csv"))
        save_matrix_csv(b[None, :], os.path.join(directory, f"target_b{i}.csv"))
    for i, (w, b) in enumerate(zip(model.mom_w, model.mom_b)):
        save_matrix_csv(w, os.path.join(directory, f"mom_w{i}.csv"))
        save_matrix_csv(b[None, :], os.path.join(directory, f"mom_b{i}.csv"))
    save_matrix_csv(model.pred_w, os.path.join(directory, "pred_w.csv"))
    save_matrix_csv(model.pred_b[None, :], os.path.join(directory, "pred_b.csv"))
    save_matrix_csv(model.mom_pred_w, os.path.join(directory, "mom_pred_w.csv"))
    save_matrix_csv(model.mom_pred_b[None, :], os.path.join(directory, "mom_pred_b.csv"))
    manifest = {
        "spec": model.spec.to_dict(),
        "tau": model.tau,
        "predictor_width": int(model.pred_w.shape[1]),
        "round": round_index,
    }
    with open(os.path.join(directory, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(directory: str) -> ClientModel:
    with open(os.path.join(directory, "manifest.json"), "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    spec = MlpSpec.from_dict(manifest["spec"])
    n_layers = len(spec.layer_widths) - 1

    def mat(name):
        return load_matrix_csv(os.path.join(directory, name + ".csv"))

    def vec(name):
        return mat(name).ravel()

    return ClientModel(
        spec=spec,
        online_w=[mat(f"online_w{i}") for i in range(n_layers)],
        online_b=[vec(f"online_b{i}") for i in range(n_layers)],
        pred_w=mat("pred_w"),
        pred_b=vec("pred_b"),
        target_w=[mat(f"target_w{i}") for i in range(n_layers)],
        target_b=[vec(f"target_b{i}") for i in range(n_layers)],
        tau=float(manifest["tau"]),
        mom_w=[mat(f"mom_w{i}") for i in range(n_layers)],
        mom_b=[vec(f"mom_b{i}") for i in range(n_layers)],
        mom_pred_w=mat("mom_pred_w"),
        mom_pred_b=vec("mom_pred_b"),
    )
