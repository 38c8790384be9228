"""Server loop, client workers, simulated transport, and trace logging.

Each global round: the server broadcasts the alignment rows and the current
aggregated reference (kernel matrix by default, representation matrix in
l2_rep mode), a sampled subset of clients runs local epochs against that
fixed reference, the clients report their fresh alignment payloads, and the
server aggregates the new reference used in the next round. Unsampled
clients keep their last reported payload, so the weighted aggregate always
covers all clients.

Payloads cross a real serialization boundary (CSV text, byte counts
recorded) even though transport is in-process. All randomness flows through
value-like streams keyed by (seed, client, round, epoch, purpose), so runs
are bit-reproducible regardless of how many workers execute clients in
parallel. Wall-clock timings are collected separately from the round log and
never serialized with it, keeping logs byte-comparable across machines and
worker counts.
"""

from __future__ import annotations

import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import sslnet
from .cka import (
    GramMatrix,
    ProximalForm,
    aggregate_grams,
    aggregate_representations,
    gram_linear,
)
from .datahub import Dataset, PartitionPlan, RadSet, partition_iid, partition_noniid, sample_rad
from .errors import ConfigError, NumericalFailureError, ProtocolError
from .numkit import Matrix, RngStream, matrix_from_csv, matrix_to_csv
from .sslnet import AugmentConfig, ClientModel, MlpSpec

WEIGHT_SUM_TOL = 1e-9

KERNEL = "kernel"
REPRESENTATION = "representation"


@dataclass(frozen=True)
class FedConfig:
    num_clients: int
    rounds: int
    local_epochs: int
    eta: float
    momentum: float
    batch_size: int
    mu: float
    proximal_form: ProximalForm
    tau: float
    client_specs: Tuple[MlpSpec, ...]
    rad_size: int
    seed: int
    client_weights: Optional[Tuple[float, ...]] = None
    sample_size: Optional[int] = None
    partition: str = "noniid"
    payload: str = KERNEL
    noise_std: float = 0.0
    mask_prob: float = 0.0
    normalize_loss: bool = False
    clip_radius: Optional[float] = None
    theory_probes: bool = False
    symmetrize_loss: bool = False
    rad_shift: float = 0.0

    def __post_init__(self):
        if self.num_clients < 1:
            raise ConfigError("need at least one client")
        if self.rounds < 0:
            raise ConfigError("rounds must be >= 0")
        if self.local_epochs < 1:
            raise ConfigError("local_epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.mu < 0:
            raise ConfigError("mu must be >= 0")
        if not (0.0 <= self.tau <= 1.0):
            raise ConfigError("tau must be in [0, 1]")
        if len(self.client_specs) != self.num_clients:
            raise ConfigError(
                f"{len(self.client_specs)} client specs for {self.num_clients} clients"
            )
        object.__setattr__(self, "proximal_form", ProximalForm.parse(self.proximal_form))
        if self.partition not in ("iid", "noniid"):
            raise ConfigError(f"unknown partition mode {self.partition!r}")
        if self.payload not in (KERNEL, REPRESENTATION):
            raise ConfigError(f"unknown payload mode {self.payload!r}")
        if (self.proximal_form is ProximalForm.L2_REP) != (self.payload == REPRESENTATION):
            raise ConfigError(
                "l2_rep form requires representation payloads and vice versa"
            )
        weights = self.client_weights
        if weights is None:
            weights = tuple(1.0 / self.num_clients for _ in range(self.num_clients))
            object.__setattr__(self, "client_weights", weights)
        else:
            object.__setattr__(self, "client_weights", tuple(float(w) for w in weights))
            weights = self.client_weights
        if len(weights) != self.num_clients:
            raise ConfigError("client_weights length must equal num_clients")
        if any(w < 0 for w in weights):
            raise ConfigError("client weights must be nonnegative")
        if abs(sum(weights) - 1.0) > WEIGHT_SUM_TOL:
            raise ConfigError(f"client weights must sum to 1, got {sum(weights)!r}")
        sample = self.sample_size
        if sample is None:
            object.__setattr__(self, "sample_size", self.num_clients)
        elif not (1 <= sample <= self.num_clients):
            raise ConfigError(f"sample_size must be in [1, {self.num_clients}]")

    @property
    def augment_cfg(self) -> AugmentConfig:
        return AugmentConfig(self.noise_std, self.mask_prob)

    def to_dict(self) -> dict:
        return {
            "num_clients": self.num_clients,
            "rounds": self.rounds,
            "local_epochs": self.local_epochs,
            "eta": self.eta,
            "momentum": self.momentum,
            "batch_size": self.batch_size,
            "mu": self.mu,
            "proximal_form": self.proximal_form.value,
            "tau": self.tau,
            "client_specs": [s.to_dict() for s in self.client_specs],
            "rad_size": self.rad_size,
            "seed": self.seed,
            "client_weights": list(self.client_weights),
            "sample_size": self.sample_size,
            "partition": self.partition,
            "payload": self.payload,
            "noise_std": self.noise_std,
            "mask_prob": self.mask_prob,
            "normalize_loss": self.normalize_loss,
            "clip_radius": self.clip_radius,
            "theory_probes": self.theory_probes,
            "symmetrize_loss": self.symmetrize_loss,
            "rad_shift": self.rad_shift,
        }

    @staticmethod
    def from_dict(d: dict) -> "FedConfig":
        d = dict(d)
        d["client_specs"] = tuple(MlpSpec.from_dict(s) for s in d["client_specs"])
        d["client_weights"] = tuple(d["client_weights"]) if d.get("client_weights") else None
        d["proximal_form"] = ProximalForm.parse(d["proximal_form"])
        return FedConfig(**d)


Payload = Union[GramMatrix, Matrix]


@dataclass
class RoundMessage:
    direction: str  # "server->client" | "client->server"
    round: int
    client: int
    kind: str
    payload_bytes: int

    def to_dict(self) -> dict:
        return {
            "direction": self.direction,
            "round": self.round,
            "client": self.client,
            "kind": self.kind,
            "payload_bytes": self.payload_bytes,
        }


@dataclass
class RoundLog:
    """Per-round trace. ``timings`` is wall-clock only and is deliberately
    excluded from serialization and equality so logs stay byte-comparable."""

    records: List[dict] = field(default_factory=list)
    messages: List[RoundMessage] = field(default_factory=list)
    timings: Dict[Tuple[int, int], float] = field(default_factory=dict)

    def client_records(self) -> List[dict]:
        return [r for r in self.records if r["type"] == "client"]

    def server_records(self) -> List[dict]:
        return [r for r in self.records if r["type"] == "server"]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True, separators=(",", ":")) + "\n"
                       for r in self.records)

    @staticmethod
    def from_jsonl(text: str) -> "RoundLog":
        log = RoundLog()
        for line in text.splitlines():
            if line.strip():
                log.records.append(json.loads(line))
        return log


@dataclass
class ServerState:
    round: int
    rad: RadSet
    registry: Dict[int, Payload]
    reference: Optional[Payload] = None


@dataclass
class RunResult:
    config: FedConfig
    models: List[ClientModel]
    log: RoundLog
    rad: RadSet
    plan: PartitionPlan
    server: ServerState


def select_clients(
    num_clients: int, sample_size: int, round_index: int, rng: RngStream
) -> List[int]:
    """Uniform sample without replacement, ascending, fixed per (seed, round)."""
    if sample_size > num_clients:
        raise ConfigError(f"sample_size {sample_size} > num_clients {num_clients}")
    if sample_size == num_clients:
        return list(range(num_clients))
    gen = rng.child(round=round_index, purpose="select").generator()
    chosen = gen.choice(num_clients, size=sample_size, replace=False)
    return sorted(int(c) for c in chosen)


def server_aggregate(
    reports: Sequence[Tuple[int, Payload]],
    weights: Sequence[float],
    mode: str,
    registry: Dict[int, Payload],
) -> Payload:
    """Fold fresh reports into the registry, then aggregate over all clients.

    The registry holds every client's latest known payload; unsampled
    clients contribute their stale entries. Reduction order is fixed by
    client index, so arrival order cannot change the result.
    """
    seen = set()
    for client_id, payload in reports:
        if client_id in seen:
            raise ProtocolError(f"duplicate report from client {client_id}")
        seen.add(client_id)
        registry[client_id] = payload
    missing = [k for k in range(len(weights)) if k not in registry]
    if missing:
        raise ProtocolError(f"no payload known for client {missing[0]}")
    pairs = [(weights[k], registry[k]) for k in sorted(registry)]
    if mode == KERNEL:
        return aggregate_grams(pairs)
    return aggregate_representations(pairs)


def _serialize_payload(payload: Payload) -> str:
    if isinstance(payload, GramMatrix):
        return payload.to_csv()
    return matrix_to_csv(payload)


def _parse_payload(text: str, mode: str) -> Payload:
    if mode == KERNEL:
        return GramMatrix.from_csv(text)
    return matrix_from_csv(text)


def _epoch_batches(
    n_rows: int, batch_size: int, order_rng: RngStream
) -> List[np.ndarray]:
    order = order_rng.generator().permutation(n_rows)
    return [order[i:i + batch_size] for i in range(0, n_rows, batch_size)]


def local_training(
    model: ClientModel,
    shard: Matrix,
    rad: Matrix,
    reference: Optional[Payload],
    cfg: FedConfig,
    round_index: int,
    rng: RngStream,
    epoch_hook=None,
) -> dict:
    """E local epochs against a fixed reference: minibatch steps, then one
    EMA update per epoch. Returns the updated model with per-epoch mean
    losses and gradient norms. ``epoch_hook(epoch, model)``, when given, is
    called after each epoch; it must not mutate the model (used for theory
    probes, which draw from their own streams)."""
    epoch_losses: List[float] = []
    epoch_grad_norms: List[float] = []
    step_grad_norms: List[List[float]] = []
    for epoch in range(cfg.local_epochs):
        erng = rng.child(round=round_index, epoch=epoch)
        batches = _epoch_batches(shard.shape[0], cfg.batch_size, erng.sub("order"))
        losses, norms = [], []
        for b, idx in enumerate(batches):
            try:
                step = sslnet.combined_step(
                    model,
                    shard[idx],
                    rad,
                    reference,
                    cfg.mu,
                    cfg.proximal_form,
                    cfg.eta,
                    cfg.momentum,
                    erng.sub(f"step{b}"),
                    augment_cfg=cfg.augment_cfg,
                    normalize=cfg.normalize_loss,
                    clip_radius=cfg.clip_radius,
                    symmetrize=cfg.symmetrize_loss,
                )
            except NumericalFailureError as exc:
                raise NumericalFailureError(
                    exc.component, f"round {round_index} epoch {epoch} batch {b}"
                ) from exc
            model = step.model
            losses.append(step.loss_total)
            norms.append(step.grad_norm)
        model = sslnet.ema_update(model)
        epoch_losses.append(float(np.mean(losses)))
        epoch_grad_norms.append(float(np.mean(norms)))
        step_grad_norms.append(norms)
        if epoch_hook is not None:
            epoch_hook(epoch, model)
    return {
        "model": model,
        "epoch_losses": epoch_losses,
        "epoch_grad_norms": epoch_grad_norms,
        "step_grad_norms": step_grad_norms,
    }


def _client_payload(model: ClientModel, rad: Matrix, cfg: FedConfig) -> Tuple[Payload, Matrix]:
    phi = sslnet.representations(model, rad, clip_radius=cfg.clip_radius)
    if cfg.payload == KERNEL:
        return gram_linear(phi), phi
    return phi, phi


def _eval_losses(
    model: ClientModel,
    shard: Matrix,
    rad: Matrix,
    reference: Optional[Payload],
    cfg: FedConfig,
    rng: RngStream,
) -> Tuple[float, float, float]:
    return sslnet.combined_loss(
        model, shard, rad, reference, cfg.mu, cfg.proximal_form, rng,
        augment_cfg=cfg.augment_cfg, normalize=cfg.normalize_loss,
        clip_radius=cfg.clip_radius, symmetrize=cfg.symmetrize_loss,
    )


def _probe_checkpoint(
    model: ClientModel,
    shard: Matrix,
    rad: Matrix,
    reference: Optional[Payload],
    cfg: FedConfig,
    prng: RngStream,
) -> dict:
    total, _, _, grads = sslnet.loss_and_grad(
        model, shard, rad, reference, cfg.mu, cfg.proximal_form, prng,
        augment_cfg=cfg.augment_cfg, normalize=cfg.normalize_loss,
        clip_radius=cfg.clip_radius, symmetrize=cfg.symmetrize_loss,
    )
    phi = sslnet.representations(model, rad, clip_radius=cfg.clip_radius)
    return {
        "loss": total,
        "grad": sslnet.flatten_grads(grads),
        "params": sslnet.flatten_params(model),
        "phi": phi,
    }


def _probe_sigma2(
    model: ClientModel,
    shard: Matrix,
    rad: Matrix,
    reference: Optional[Payload],
    cfg: FedConfig,
    round_index: int,
    crng: RngStream,
) -> float:
    """Variance of minibatch gradients about their mean at the round start,
    over the same batch partition the first epoch will use."""
    erng = crng.child(round=round_index, epoch=0)
    batches = _epoch_batches(shard.shape[0], cfg.batch_size, erng.sub("order"))
    if len(batches) <= 1:
        return 0.0
    grads = []
    for b, idx in enumerate(batches):
        _, _, _, g = sslnet.loss_and_grad(
            model, shard[idx], rad, reference, cfg.mu, cfg.proximal_form,
            erng.sub(f"sigma{b}"), augment_cfg=cfg.augment_cfg,
            normalize=cfg.normalize_loss, clip_radius=cfg.clip_radius,
            symmetrize=cfg.symmetrize_loss,
        )
        grads.append(sslnet.flatten_grads(g))
    stack = np.stack(grads)
    mean = stack.mean(axis=0)
    return float(np.mean(np.sum((stack - mean) ** 2, axis=1)))


def _train_one_client(
    client_id: int,
    model: ClientModel,
    shard: Matrix,
    rad_csv: str,
    ref_csv: str,
    cfg: FedConfig,
    round_index: int,
) -> dict:
    """Full client-side work for one round; pure function, safe to run in
    any worker thread."""
    rad = matrix_from_csv(rad_csv)
    reference = _parse_payload(ref_csv, cfg.payload)
    crng = RngStream(cfg.seed, client=client_id)
    eval_rng = crng.child(round=round_index, purpose="eval")

    start = _eval_losses(model, shard, rad, reference, cfg, eval_rng)

    probe = None
    checkpoints: List[dict] = []
    hook = None
    sigma2 = 0.0
    if cfg.theory_probes:
        prng = crng.child(round=round_index, purpose="probe")
        checkpoints.append(_probe_checkpoint(model, shard, rad, reference, cfg, prng))
        sigma2 = _probe_sigma2(model, shard, rad, reference, cfg, round_index, crng)

        def hook(epoch: int, m: ClientModel) -> None:
            checkpoints.append(_probe_checkpoint(m, shard, rad, reference, cfg, prng))

    result = local_training(
        model, shard, rad, reference, cfg, round_index, crng, epoch_hook=hook
    )
    model = result["model"]
    end = _eval_losses(model, shard, rad, reference, cfg, eval_rng)
    payload, phi = _client_payload(model, rad, cfg)
    payload_csv = _serialize_payload(payload)
    rep_norm_max = float(np.max(np.sqrt(np.sum(phi * phi, axis=1))))

    if cfg.theory_probes:
        l1_ratios, l2_ratios = [], []
        for a in range(len(checkpoints)):
            for b in range(a + 1, len(checkpoints)):
                dw = float(np.linalg.norm(checkpoints[a]["params"] - checkpoints[b]["params"]))
                if dw == 0.0:
                    continue
                dg = float(np.linalg.norm(checkpoints[a]["grad"] - checkpoints[b]["grad"]))
                dphi = float(np.linalg.norm(checkpoints[a]["phi"] - checkpoints[b]["phi"]))
                l1_ratios.append(dg / dw)
                l2_ratios.append(dphi / dw)
        probe = {
            "losses": [c["loss"] for c in checkpoints],
            "grad_norms": [float(np.linalg.norm(c["grad"])) for c in checkpoints],
            "rep_norm_max": float(max(
                np.max(np.sqrt(np.sum(c["phi"] * c["phi"], axis=1))) for c in checkpoints
            )),
            "l1_ratios": l1_ratios,
            "l2_ratios": l2_ratios,
            "sigma2": sigma2,
        }

    return {
        "client": client_id,
        "model": model,
        "payload_csv": payload_csv,
        "record": {
            "type": "client",
            "round": round_index,
            "client": client_id,
            "loss_total_start": start[0],
            "loss_ssl_start": start[1],
            "loss_prox_start": start[2],
            "loss_total_end": end[0],
            "loss_ssl_end": end[1],
            "loss_prox_end": end[2],
            "epoch_losses": result["epoch_losses"],
            "epoch_grad_norms": result["epoch_grad_norms"],
            "rep_norm_max": rep_norm_max,
            "probe": probe,
        },
    }


def _swap_eval(
    client_id: int,
    model: ClientModel,
    shard: Matrix,
    rad_csv: str,
    new_ref_csv: str,
    cfg: FedConfig,
    round_index: int,
) -> Tuple[float, float, float]:
    rad = matrix_from_csv(rad_csv)
    reference = _parse_payload(new_ref_csv, cfg.payload)
    eval_rng = RngStream(cfg.seed, client=client_id).child(round=round_index, purpose="eval")
    return _eval_losses(model, shard, rad, reference, cfg, eval_rng)


def init_models(cfg: FedConfig) -> List[ClientModel]:
    models = []
    for k, spec in enumerate(cfg.client_specs):
        rng = RngStream(cfg.seed, client=k, purpose="init")
        models.append(sslnet.init_client_model(spec, spec.output_width, cfg.tau, rng))
    return models


def prepare_data(cfg: FedConfig, data: Dataset) -> Tuple[RadSet, PartitionPlan]:
    root = RngStream(cfg.seed)
    rad = sample_rad(data, cfg.rad_size, root.with_purpose("rad"))
    if cfg.rad_shift != 0.0:
        # constant offset: alignment rows come from a mean-shifted version
        # of the pool distribution, to probe sensitivity to the choice
        rad = RadSet(rad.features + cfg.rad_shift, source="pool+shift")
    if cfg.partition == "noniid":
        plan = partition_noniid(data, cfg.num_clients, root.with_purpose("partition"))
    else:
        plan = partition_iid(data, cfg.num_clients, root.with_purpose("partition"))
    return rad, plan


class _LogWriter:
    def __init__(self, path: Optional[str], append: bool):
        self.path = path
        if path and not append:
            open(path, "w").close()

    def write(self, records: Sequence[dict]) -> None:
        if not self.path:
            return
        with open(self.path, "a", encoding="utf-8") as fh:
            for r in records:
                fh.write(json.dumps(r, sort_keys=True, separators=(",", ":")) + "\n")


def _checkpoint_path(d: str, *parts: str) -> str:
    return os.path.join(d, *parts)


def _save_checkpoint(
    directory: str,
    round_index: int,
    models: Sequence[ClientModel],
    registry: Dict[int, Payload],
    cfg: FedConfig,
) -> None:
    os.makedirs(directory, exist_ok=True)
    for k, m in enumerate(models):
        sslnet.save_model(m, _checkpoint_path(directory, f"client_{k}"), round_index)
    for k, payload in registry.items():
        with open(_checkpoint_path(directory, f"payload_{k}.csv"), "w", encoding="utf-8") as fh:
            fh.write(_serialize_payload(payload))
    state = {"round": round_index, "config": cfg.to_dict()}
    tmp = _checkpoint_path(directory, "state.json.tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(state, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, _checkpoint_path(directory, "state.json"))


def load_checkpoint(directory: str, cfg: FedConfig) -> Tuple[int, List[ClientModel], Dict[int, Payload]]:
    with open(_checkpoint_path(directory, "state.json"), "r", encoding="utf-8") as fh:
        state = json.load(fh)
    if state["config"] != cfg.to_dict():
        raise ConfigError("checkpoint was produced by a different configuration")
    models = [sslnet.load_model(_checkpoint_path(directory, f"client_{k}"))
              for k in range(cfg.num_clients)]
    registry: Dict[int, Payload] = {}
    for k in range(cfg.num_clients):
        with open(_checkpoint_path(directory, f"payload_{k}.csv"), "r", encoding="utf-8") as fh:
            registry[k] = _parse_payload(fh.read(), cfg.payload)
    return state["round"], models, registry


def run_training(
    cfg: FedConfig,
    data: Dataset,
    workers: int = 1,
    log_path: Optional[str] = None,
    checkpoint_dir: Optional[str] = None,
    resume: bool = False,
    stop_after_round: Optional[int] = None,
) -> RunResult:
    """Execute the full protocol for cfg.rounds global rounds.

    With ``checkpoint_dir`` set, a resumable checkpoint is written after
    every completed round; ``resume=True`` continues from the last one.
    ``stop_after_round`` ends the loop early (used to exercise resume).
    """
    if workers < 1:
        raise ConfigError("workers must be >= 1")
    rad, plan = prepare_data(cfg, data)
    shards = [data.features[list(idx)] for idx in plan.client_indices]
    for k, shard in enumerate(shards):
        if shard.shape[0] == 0:
            raise ConfigError(f"client {k} received an empty shard")

    log = RoundLog()
    start_round = 0
    if resume:
        if not checkpoint_dir:
            raise ConfigError("resume requires a checkpoint directory")
        start_round, models, registry = load_checkpoint(checkpoint_dir, cfg)
    else:
        models = init_models(cfg)
        registry = {}
    writer = _LogWriter(log_path, append=resume)

    server = ServerState(round=start_round, rad=rad, registry=registry)
    if cfg.rounds == 0:
        return RunResult(cfg, models, log, rad, plan, server)

    rad_csv = matrix_to_csv(rad.features)
    rad_bytes = len(rad_csv.encode("utf-8"))

    def bootstrap() -> None:
        boot_bytes = []
        for k in range(cfg.num_clients):
            payload, _ = _client_payload(models[k], matrix_from_csv(rad_csv), cfg)
            text = _serialize_payload(payload)
            registry[k] = _parse_payload(text, cfg.payload)
            nbytes = len(text.encode("utf-8"))
            boot_bytes.append(nbytes)
            log.messages.append(RoundMessage("server->client", 0, k, "rad", rad_bytes))
            log.messages.append(RoundMessage("client->server", 0, k, cfg.payload, nbytes))
        record = {
            "type": "server",
            "round": 0,
            "selected": list(range(cfg.num_clients)),
            "bootstrap_payload_bytes": boot_bytes,
        }
        log.records.append(record)
        writer.write([record])

    if start_round == 0:
        bootstrap()

    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for t in range(start_round + 1, cfg.rounds + 1):
            weights = list(cfg.client_weights)
            reference = server_aggregate([], weights, cfg.payload, registry)
            ref_csv = _serialize_payload(reference)
            ref_bytes = len(ref_csv.encode("utf-8"))
            server.reference = reference

            selected = select_clients(
                cfg.num_clients, cfg.sample_size, t, RngStream(cfg.seed)
            )
            for k in selected:
                log.messages.append(RoundMessage("server->client", t, k, "rad", rad_bytes))
                log.messages.append(
                    RoundMessage("server->client", t, k, "reference", ref_bytes)
                )

            def task(k: int) -> dict:
                t0 = time.perf_counter()
                out = _train_one_client(k, models[k], shards[k], rad_csv, ref_csv, cfg, t)
                out["wall"] = time.perf_counter() - t0
                return out

            if pool is not None:
                outs = list(pool.map(task, selected))
            else:
                outs = [task(k) for k in selected]

            reports = []
            for out in sorted(outs, key=lambda o: o["client"]):
                k = out["client"]
                models[k] = out["model"]
                payload = _parse_payload(out["payload_csv"], cfg.payload)
                nbytes = len(out["payload_csv"].encode("utf-8"))
                reports.append((k, payload))
                out["record"]["downstream_bytes"] = rad_bytes + ref_bytes
                out["record"]["upstream_bytes"] = nbytes
                log.messages.append(RoundMessage("client->server", t, k, cfg.payload, nbytes))
                log.timings[(t, k)] = out["wall"]

            new_reference = server_aggregate(reports, weights, cfg.payload, registry)
            new_ref_csv = _serialize_payload(new_reference)

            def swap_task(out: dict) -> Tuple[float, float, float]:
                k = out["client"]
                return _swap_eval(k, models[k], shards[k], rad_csv, new_ref_csv, cfg, t)

            ordered = sorted(outs, key=lambda o: o["client"])
            if pool is not None:
                swaps = list(pool.map(swap_task, ordered))
            else:
                swaps = [swap_task(o) for o in ordered]

            new_records = []
            for out, swap in zip(ordered, swaps):
                rec = out["record"]
                rec["loss_total_swap"] = swap[0]
                rec["loss_ssl_swap"] = swap[1]
                rec["loss_prox_swap"] = swap[2]
                new_records.append(rec)
            ref_entries = new_reference.entries if isinstance(new_reference, GramMatrix) else new_reference
            server_record = {
                "type": "server",
                "round": t,
                "selected": selected,
                "reference_norm": float(np.linalg.norm(ref_entries)),
            }
            new_records.append(server_record)
            log.records.extend(new_records)
            writer.write(new_records)

            server.round = t
            server.reference = new_reference
            if checkpoint_dir:
                _save_checkpoint(checkpoint_dir, t, models, registry, cfg)
            if stop_after_round is not None and t >= stop_after_round:
                break
    finally:
        if pool is not None:
            pool.shutdown()

    return RunResult(cfg, models, log, rad, plan, server)


def standalone_training(
    cfg: FedConfig, data: Dataset, client_id: int
) -> ClientModel:
    """Local-only training for one client: same shard, same streams, no
    reference and no proximal branch. With mu == 0 the federated run must
    produce bit-identical weights to this path."""
    rad, plan = prepare_data(cfg, data)
    shard = data.features[list(plan.client_indices[client_id])]
    model = init_models(cfg)[client_id]
    crng = RngStream(cfg.seed, client=client_id)
    local_cfg = replace(cfg, mu=0.0,
                        proximal_form=ProximalForm.ONE_MINUS_CKA,
                        payload=KERNEL)
    for t in range(1, cfg.rounds + 1):
        result = local_training(model, shard, rad.features, None, local_cfg, t, crng)
        model = result["model"]
    return model
