"""Round loop: selection, broadcasts, prototypes, local training, aggregation.

Each round runs in fixed phases. (1) select clients; (2) broadcast the
global adapter; (3) selected clients upload prototypes; (4) the server
aggregates them and broadcasts per-class anchors; (5) clients train
locally on supervision plus anchor alignment; (6) clients upload top-k
sparse adapter updates; (7) the server aggregates element-wise. Private
backbones never leave their client; momentum is local to a round.

Everything is a pure function of the config: all randomness comes from
named streams derived from the master seed, and the stream names do not
depend on the ablation mode, so modes that coincide mathematically (for
example a dense-budget run and a run with top-k disabled) produce
identical traces. A round commits client and server state only after
every phase has finished, so a failed round changes nothing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import model
from ._kernels import BACKEND
from .config import ExperimentConfig, mode_forces_dense, mode_uses_anchors
from .data import (
    Dataset,
    Partition,
    PublicDataset,
    build_public,
    dirichlet_partition,
    gen_blobs,
)
from .model import AdapterParams, AnchorSet, BackboneParams, LabeledBatch, NetworkShape
from .prototypes import (
    AvailabilityIndicator,
    Prototype,
    PrototypeBundle,
    build_anchors,
    client_local_prototypes,
    client_public_prototypes,
    server_aggregate,
)
from .seeds import child_seed, stream
from .sparse import SparseAdapterUpdate, aggregate_masked, make_sparse_update, uplink_cost
from .trace import TraceWriter, write_metrics


@dataclass
class ClientState:
    """A client's private, round-persistent state."""

    client_id: int
    backbone: BackboneParams
    shard: Dataset


@dataclass
class ServerState:
    """The server's round-persistent state."""

    adapter: AdapterParams
    round_index: int = 0


@dataclass
class ExperimentEnv:
    """Derived, round-invariant pieces of one experiment."""

    shape: NetworkShape
    d: int
    train: Dataset
    test: Dataset
    public: PublicDataset
    partition: Partition
    indicator: AvailabilityIndicator
    k_budgets: list[int]
    lam: float
    uses_anchors: bool
    master_seed: int


@dataclass
class RoundTrace:
    """Everything one round transmitted, trained, and measured."""

    round_index: int
    selected: list[int]
    prototype_uploads: dict[int, list[Prototype]]
    bundle: PrototypeBundle | None
    anchors: AnchorSet
    update_clients: list[int]
    updates: list[SparseAdapterUpdate]
    trained_adapters: dict[int, np.ndarray]
    per_client_acc: list[float]
    mean_acc: float
    anchor_count: int
    uplink_values: int
    uplink_indices: int
    uplink_proto_scalars: int
    downlink_scalars: int


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    env: ExperimentEnv
    rounds: list[RoundTrace] = field(default_factory=list)
    final_adapter: AdapterParams | None = None
    clients: list[ClientState] = field(default_factory=list)


def build_env(config: ExperimentConfig) -> ExperimentEnv:
    """Generate the data, partition, and mode-resolved knobs for a config."""
    shape = config.network_shape()
    d = shape.adapter_size
    master = config.seed
    train = gen_blobs(
        config.num_classes,
        config.train_per_class,
        config.input_dim,
        config.center_radius,
        config.noise_std,
        child_seed(master, "data", "train"),
    )
    test = gen_blobs(
        config.num_classes,
        config.test_per_class,
        config.input_dim,
        config.center_radius,
        config.noise_std,
        child_seed(master, "data", "test"),
    )
    public = build_public(
        config.num_classes,
        config.input_dim,
        config.center_radius,
        config.noise_std,
        config.covered_classes(),
        config.public_per_class,
        child_seed(master, "data", "public"),
    )
    partition = dirichlet_partition(
        train, config.num_clients, config.alpha, child_seed(master, "data", "partition")
    )
    uses_anchors = mode_uses_anchors(config.mode)
    k_budgets = (
        [d] * config.num_clients if mode_forces_dense(config.mode) else config.resolve_k(d)
    )
    return ExperimentEnv(
        shape=shape,
        d=d,
        train=train,
        test=test,
        public=public,
        partition=partition,
        indicator=AvailabilityIndicator.from_public(public, config.num_classes),
        k_budgets=k_budgets,
        lam=config.lam if uses_anchors else 0.0,
        uses_anchors=uses_anchors,
        master_seed=master,
    )


def init_states(config: ExperimentConfig, env: ExperimentEnv) -> tuple[ServerState, list[ClientState]]:
    server = ServerState(
        adapter=model.init_adapter(env.shape, stream(env.master_seed, "init", "adapter"))
    )
    clients = [
        ClientState(
            client_id=k,
            backbone=model.init_backbone(env.shape, stream(env.master_seed, "init", "backbone", k)),
            shard=env.train.subset(env.partition.client_rows(k)),
        )
        for k in range(config.num_clients)
    ]
    return server, clients


def select_clients(config: ExperimentConfig, env: ExperimentEnv, round_index: int) -> list[int]:
    """Sample the round's participants without replacement, ids ascending."""
    n = config.num_clients
    count = max(1, round(config.client_fraction * n))
    if count >= n:
        return list(range(n))
    rng = stream(env.master_seed, "round", round_index, "select")
    return sorted(int(k) for k in rng.choice(n, size=count, replace=False))


def local_train(
    client: ClientState,
    adapter: AdapterParams,
    anchors: AnchorSet,
    config: ExperimentConfig,
    lam: float,
    rng: np.random.Generator,
) -> tuple[BackboneParams, AdapterParams]:
    """Run the client's local epochs; returns new parameters, mutates nothing.

    The velocity buffers start at zero every round: momentum is an
    optimizer detail of the local solve, not protocol state.
    """
    backbone = client.backbone.copy()
    adapter = adapter.copy()
    tensors = ["weight", "bias"]
    vel_b = {name: np.zeros_like(getattr(backbone, name)) for name in tensors}
    adapter_tensors = ["feature_weight", "feature_bias", "head_weight", "head_bias"]
    vel_a = {name: np.zeros_like(getattr(adapter, name)) for name in adapter_tensors}
    n = len(client.shard)
    for _ in range(config.local_epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            rows = order[start : start + config.batch_size]
            batch = LabeledBatch(client.shard.inputs[rows], client.shard.labels[rows])
            grad_b, grad_a = model.grad_total(batch, backbone, adapter, anchors, lam)
            # grad_total sums over the batch; lr is a per-sample rate, so the
            # optimizer consumes the batch mean.
            inv = 1.0 / len(rows)
            for name in tensors:
                new_p, new_v = model.sgd_step(
                    getattr(backbone, name),
                    getattr(grad_b, name) * inv,
                    vel_b[name],
                    config.lr,
                    config.momentum,
                    config.weight_decay,
                )
                setattr(backbone, name, new_p)
                vel_b[name] = new_v
            for name in adapter_tensors:
                new_p, new_v = model.sgd_step(
                    getattr(adapter, name),
                    getattr(grad_a, name) * inv,
                    vel_a[name],
                    config.lr,
                    config.momentum,
                    config.weight_decay,
                )
                setattr(adapter, name, new_p)
                vel_a[name] = new_v
    return backbone, adapter


def evaluate(
    clients: list[ClientState],
    adapter: AdapterParams,
    test: Dataset,
) -> tuple[float, list[float]]:
    """Top-1 accuracy per client (private backbone + shared adapter), and the mean."""
    accs = []
    for client in clients:
        scores = model.logits_batch(test.inputs, client.backbone, adapter)
        pred = np.argmax(scores, axis=1)  # ties resolve to the lowest class id
        accs.append(float(np.mean(pred == test.labels)))
    return float(np.mean(accs)), accs


def run_round(
    server: ServerState,
    clients: list[ClientState],
    config: ExperimentConfig,
    env: ExperimentEnv,
) -> tuple[ServerState, RoundTrace]:
    """One full protocol round. Commits state only after every phase succeeds."""
    t = server.round_index
    selected = select_clients(config, env, t)
    downlink = len(selected) * env.d  # adapter broadcast
    if t == 0 and env.uses_anchors and len(env.public) > 0:
        # public data ships once, to every client, priced at round 0
        downlink += config.num_clients * len(env.public) * (config.input_dim + 1)

    proto_uploads: dict[int, list[Prototype]] = {}
    proto_scalars = 0
    bundle: PrototypeBundle | None = None
    anchors = AnchorSet()
    if env.uses_anchors:
        for k in selected:
            protos = client_public_prototypes(
                env.public, clients[k].backbone, server.adapter
            ) + client_local_prototypes(
                clients[k].shard, env.indicator, clients[k].backbone, server.adapter
            )
            proto_uploads[k] = protos
            proto_scalars += sum(p.vector.shape[0] for p in protos)
        bundle = server_aggregate(proto_uploads, selected, env.indicator)
        anchors = build_anchors(bundle, env.indicator)
        downlink += len(selected) * len(anchors) * env.shape.embed_dim

    trained: dict[int, tuple[BackboneParams, AdapterParams]] = {}
    for k in selected:
        rng = stream(env.master_seed, "round", t, "client", k, "train")
        trained[k] = local_train(clients[k], server.adapter, anchors, config, env.lam, rng)

    global_flat = server.adapter.flatten()
    updates: list[SparseAdapterUpdate] = []
    trained_adapters: dict[int, np.ndarray] = {}
    up_values = up_indices = 0
    for k in selected:
        local_flat = trained[k][1].flatten()
        trained_adapters[k] = local_flat
        update = make_sparse_update(
            local_flat, global_flat, env.k_budgets[k], len(clients[k].shard)
        )
        updates.append(update)
        values_n, indices_n = uplink_cost(update)
        up_values += values_n
        up_indices += indices_n
    new_adapter = AdapterParams.from_flat(aggregate_masked(global_flat, updates), env.shape)

    candidates = [
        ClientState(c.client_id, trained[c.client_id][0], c.shard)
        if c.client_id in trained
        else c
        for c in clients
    ]
    mean_acc, per_client = evaluate(candidates, new_adapter, env.test)

    # all phases done: commit
    for k in selected:
        clients[k].backbone = trained[k][0]
    new_server = ServerState(adapter=new_adapter, round_index=t + 1)
    trace = RoundTrace(
        round_index=t,
        selected=selected,
        prototype_uploads=proto_uploads,
        bundle=bundle,
        anchors=anchors,
        update_clients=list(selected),
        updates=updates,
        trained_adapters=trained_adapters,
        per_client_acc=per_client,
        mean_acc=mean_acc,
        anchor_count=len(anchors),
        uplink_values=up_values,
        uplink_indices=up_indices,
        uplink_proto_scalars=proto_scalars,
        downlink_scalars=downlink,
    )
    return new_server, trace


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """All rounds of one experiment, deterministically from config.seed."""
    config.validate()
    env = build_env(config)
    server, clients = init_states(config, env)
    result = ExperimentResult(config=config, env=env, clients=clients)
    for _ in range(config.rounds):
        server, trace = run_round(server, clients, config, env)
        result.rounds.append(trace)
    result.final_adapter = server.adapter
    return result


ABLATION_MODES = ("full", "no_apud", "no_erpa", "neither")


def run_ablation(config: ExperimentConfig) -> list[tuple[str, ExperimentResult]]:
    """Run every mode from the same master seed (shared data and partition)."""
    results = []
    for mode in ABLATION_MODES:
        results.append((mode, run_experiment(config.with_overrides(mode=mode))))
    return results


def write_trace_file(path: str, result: ExperimentResult, backend: str = BACKEND) -> None:
    """Serialize a finished experiment to a JSON-lines trace."""
    config = result.config
    env = result.env
    totals = {"uplink_values": 0, "uplink_indices": 0, "uplink_proto_scalars": 0,
              "downlink_scalars": 0}
    with TraceWriter(path) as writer:
        writer.header(config.as_dict(), env.d, backend)
        for rt in result.rounds:
            if rt.round_index == 0 and env.uses_anchors and len(env.public) > 0:
                writer.public_shipment(
                    0,
                    config.num_clients,
                    len(env.public),
                    config.num_clients * len(env.public) * (config.input_dim + 1),
                )
            writer.adapter_broadcast(rt.round_index, rt.selected, env.d)
            for k in sorted(rt.prototype_uploads):
                for proto in rt.prototype_uploads[k]:
                    writer.prototype_upload(
                        rt.round_index, k, proto.class_id, proto.kind, proto.weight,
                        proto.vector,
                    )
            if rt.bundle is not None:
                for c in sorted(rt.anchors.anchors):
                    kind = "external_reference" if c in rt.bundle.external else "global"
                    writer.anchor_broadcast(
                        rt.round_index, c, kind, rt.anchors.anchors[c], len(rt.selected)
                    )
            for k, update in zip(rt.update_clients, rt.updates):
                writer.sparse_update(
                    rt.round_index, k, env.d, update.mask.selected, update.values,
                    update.sender_data_size,
                )
            writer.round_summary(
                rt.round_index, rt.selected, rt.anchor_count, rt.mean_acc,
                rt.per_client_acc, rt.uplink_values, rt.uplink_indices,
                rt.uplink_proto_scalars, rt.downlink_scalars,
            )
            totals["uplink_values"] += rt.uplink_values
            totals["uplink_indices"] += rt.uplink_indices
            totals["uplink_proto_scalars"] += rt.uplink_proto_scalars
            totals["downlink_scalars"] += rt.downlink_scalars
        writer.totals(len(result.rounds), **totals)


def write_metrics_file(path: str, result: ExperimentResult) -> None:
    rows = [
        {
            "round": rt.round_index,
            "mean_acc": rt.mean_acc,
            "uplink_values": rt.uplink_values,
            "uplink_indices": rt.uplink_indices,
            "uplink_proto_scalars": rt.uplink_proto_scalars,
            "downlink_scalars": rt.downlink_scalars,
        }
        for rt in result.rounds
    ]
    write_metrics(path, result.config.mode, rows)


def write_embeddings_file(path: str, result: ExperimentResult) -> None:
    """Per-client test-set embeddings under the final model, one row per sample."""
    env = result.env
    adapter = result.final_adapter
    m = env.shape.embed_dim
    with open(path, "w") as fh:
        fh.write("client_id,label," + ",".join(f"e{i}" for i in range(m)) + "\n")
        for client in result.clients:
            z = model.embed_batch(env.test.inputs, client.backbone, adapter)
            for row, label in zip(z, env.test.labels):
                fh.write(
                    f"{client.client_id},{int(label)},"
                    + ",".join(repr(float(v)) for v in row)
                    + "\n"
                )
