"""Run traces: JSON-lines records, integrity verification, metrics CSV.

A trace is one JSON object per line: a header, then per-round records in
protocol phase order, then a totals trailer. Records carry a ``seq``
counter as a logical timestamp (wall clocks would break the byte-identity
guarantee between repeated runs). Every transmitted payload appears with
an explicit scalar count so cost ledgers can be recomputed from records
alone.

Client-to-server record types have a fixed field whitelist; the privacy
scan rejects any extra field, which structurally rules out backbone
parameters and raw samples ever crossing the client boundary.
"""

from __future__ import annotations

import json
from typing import Any, Iterable, Sequence

import numpy as np

from .errors import TraceError

CLIENT_TO_SERVER_TYPES = ("prototype_upload", "sparse_update")

# exact field sets allowed in client-to-server records
PRIVACY_WHITELIST: dict[str, frozenset[str]] = {
    "prototype_upload": frozenset(
        ["type", "seq", "round", "client_id", "class_id", "kind", "weight", "vector"]
    ),
    "sparse_update": frozenset(
        ["type", "seq", "round", "client_id", "d", "k", "indices", "values", "data_size"]
    ),
}

# phase rank of each in-round record type, for order checking
_PHASE_RANK = {
    "public_shipment": 0,
    "adapter_broadcast": 1,
    "prototype_upload": 2,
    "anchor_broadcast": 3,
    "sparse_update": 4,
    "round_summary": 5,
}

_FORBIDDEN_KEY_PARTS = ("backbone", "input", "sample", "label")


def _floats(vec: Iterable[float]) -> list[float]:
    return [float(v) for v in vec]


def _ints(vec: Iterable[int]) -> list[int]:
    return [int(v) for v in vec]


class TraceWriter:
    """Writes trace records with monotonically increasing seq numbers."""

    def __init__(self, path: str):
        self._fh = open(path, "w")
        self._seq = 0

    def _emit(self, record: dict[str, Any]) -> None:
        record = {"type": record["type"], "seq": self._seq, **record}
        self._seq += 1
        self._fh.write(json.dumps(record, separators=(",", ":")) + "\n")

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "TraceWriter":
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()

    def header(self, config_dict: dict[str, Any], d: int, backend: str) -> None:
        self._emit(
            {
                "type": "header",
                "d": int(d),
                "kernel_backend": backend,
                "config": config_dict,
            }
        )

    def public_shipment(self, round_index: int, clients: int, rows: int, scalars: int) -> None:
        self._emit(
            {
                "type": "public_shipment",
                "round": int(round_index),
                "clients": int(clients),
                "rows": int(rows),
                "scalars": int(scalars),
            }
        )

    def adapter_broadcast(self, round_index: int, clients: Sequence[int], d: int) -> None:
        self._emit(
            {
                "type": "adapter_broadcast",
                "round": int(round_index),
                "clients": _ints(clients),
                "scalars": len(clients) * int(d),
            }
        )

    def prototype_upload(
        self,
        round_index: int,
        client_id: int,
        class_id: int,
        kind: str,
        weight: int,
        vector: np.ndarray,
    ) -> None:
        self._emit(
            {
                "type": "prototype_upload",
                "round": int(round_index),
                "client_id": int(client_id),
                "class_id": int(class_id),
                "kind": kind,
                "weight": int(weight),
                "vector": _floats(vector),
            }
        )

    def anchor_broadcast(
        self,
        round_index: int,
        class_id: int,
        kind: str,
        vector: np.ndarray,
        recipients: int,
    ) -> None:
        self._emit(
            {
                "type": "anchor_broadcast",
                "round": int(round_index),
                "class_id": int(class_id),
                "kind": kind,
                "vector": _floats(vector),
                "scalars": int(recipients) * len(vector),
            }
        )

    def sparse_update(
        self,
        round_index: int,
        client_id: int,
        d: int,
        indices: np.ndarray,
        values: np.ndarray,
        data_size: int,
    ) -> None:
        self._emit(
            {
                "type": "sparse_update",
                "round": int(round_index),
                "client_id": int(client_id),
                "d": int(d),
                "k": int(len(indices)),
                "indices": _ints(indices),
                "values": _floats(values),
                "data_size": int(data_size),
            }
        )

    def round_summary(
        self,
        round_index: int,
        selected: Sequence[int],
        anchor_count: int,
        mean_acc: float,
        per_client_acc: Sequence[float],
        uplink_values: int,
        uplink_indices: int,
        uplink_proto_scalars: int,
        downlink_scalars: int,
    ) -> None:
        self._emit(
            {
                "type": "round_summary",
                "round": int(round_index),
                "selected": _ints(selected),
                "anchor_count": int(anchor_count),
                "mean_acc": float(mean_acc),
                "per_client_acc": _floats(per_client_acc),
                "uplink_values": int(uplink_values),
                "uplink_indices": int(uplink_indices),
                "uplink_proto_scalars": int(uplink_proto_scalars),
                "downlink_scalars": int(downlink_scalars),
            }
        )

    def totals(
        self,
        rounds: int,
        uplink_values: int,
        uplink_indices: int,
        uplink_proto_scalars: int,
        downlink_scalars: int,
    ) -> None:
        self._emit(
            {
                "type": "totals",
                "rounds": int(rounds),
                "uplink_values": int(uplink_values),
                "uplink_indices": int(uplink_indices),
                "uplink_proto_scalars": int(uplink_proto_scalars),
                "downlink_scalars": int(downlink_scalars),
            }
        )


def read_trace(path: str) -> list[dict[str, Any]]:
    """Parse a trace file; malformed lines raise TraceError with the line number."""
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise TraceError(f"line {lineno}: not valid JSON ({exc.msg})") from None
    if not records:
        raise TraceError("trace is empty")
    return records


def scan_privacy(records: Sequence[dict[str, Any]]) -> list[str]:
    """Structural scan of client-to-server records; returns violation messages."""
    violations = []
    for rec in records:
        if rec.get("type") not in CLIENT_TO_SERVER_TYPES:
            continue
        allowed = PRIVACY_WHITELIST[rec["type"]]
        keys = set(rec)
        extra = keys - allowed
        missing = allowed - keys
        if extra:
            violations.append(
                f"seq {rec.get('seq')}: {rec['type']} carries non-whitelisted "
                f"fields {sorted(extra)}"
            )
        if missing:
            violations.append(
                f"seq {rec.get('seq')}: {rec['type']} is missing fields {sorted(missing)}"
            )
        for key in keys:
            if any(part in key.lower() for part in _FORBIDDEN_KEY_PARTS):
                violations.append(
                    f"seq {rec.get('seq')}: field name {key!r} suggests private payload"
                )
    return violations


def _fail(message: str) -> None:
    raise TraceError(message)


def verify_trace(path: str) -> dict[str, Any]:
    """Recompute every ledger and structural invariant of a trace file.

    Returns a small summary dict on success; raises TraceError naming the
    first offending record or round otherwise.
    """
    records = read_trace(path)
    if records[0].get("type") != "header":
        _fail("first record must be the header")
    if records[-1].get("type") != "totals":
        _fail("last record must be the totals trailer")
    header = records[0]
    totals = records[-1]
    d = header["d"]
    mode = header["config"]["mode"]
    embed_dim = header["config"]["embed_dim"]
    input_dim = header["config"]["input_dim"]

    last_seq = -1
    for rec in records:
        if "seq" not in rec or "type" not in rec:
            _fail(f"record without seq/type after seq {last_seq}")
        if rec["seq"] <= last_seq:
            _fail(f"seq {rec['seq']} does not increase after {last_seq}")
        last_seq = rec["seq"]

    body = records[1:-1]
    for rec in body:
        if rec["type"] not in _PHASE_RANK:
            _fail(f"seq {rec['seq']}: unknown record type {rec['type']!r}")
        if "round" not in rec:
            _fail(f"seq {rec['seq']}: in-round record lacks a round field")

    # rounds must be contiguous, each ending in exactly one summary
    by_round: dict[int, list[dict[str, Any]]] = {}
    for rec in body:
        by_round.setdefault(rec["round"], []).append(rec)
    round_ids = sorted(by_round)
    if round_ids != list(range(len(round_ids))):
        _fail(f"round indices {round_ids} are not contiguous from 0")
    order_of_round = [rec["round"] for rec in body]
    if order_of_round != sorted(order_of_round):
        _fail("records of different rounds interleave")

    sum_values = sum_indices = sum_proto = sum_down = 0
    for t in round_ids:
        group = by_round[t]
        ranks = [_PHASE_RANK[rec["type"]] for rec in group]
        if ranks != sorted(ranks):
            _fail(f"round {t}: records violate the protocol phase order")
        summaries = [rec for rec in group if rec["type"] == "round_summary"]
        if len(summaries) != 1:
            _fail(f"round {t}: expected exactly one round_summary, got {len(summaries)}")
        summary = summaries[0]
        selected = summary["selected"]

        broadcasts = [rec for rec in group if rec["type"] == "adapter_broadcast"]
        if len(broadcasts) != 1:
            _fail(f"round {t}: expected exactly one adapter_broadcast")
        if broadcasts[0]["clients"] != selected:
            _fail(f"round {t}: adapter_broadcast clients differ from summary selected")
        if broadcasts[0]["scalars"] != len(selected) * d:
            _fail(f"round {t}: adapter_broadcast scalars are not |selected|*d")

        down = broadcasts[0]["scalars"]
        for rec in group:
            if rec["type"] == "public_shipment":
                if t != 0:
                    _fail(f"round {t}: public data may only ship at round 0")
                if rec["scalars"] != rec["clients"] * rec["rows"] * (input_dim + 1):
                    _fail("round 0: public_shipment scalars mismatch its row count")
                down += rec["scalars"]
            elif rec["type"] == "anchor_broadcast":
                if rec["scalars"] != len(selected) * len(rec["vector"]):
                    _fail(f"round {t}: anchor_broadcast scalars mismatch recipients")
                if len(rec["vector"]) != embed_dim:
                    _fail(f"round {t}: anchor vector length is not embed_dim")
                down += rec["scalars"]

        anchors = [rec for rec in group if rec["type"] == "anchor_broadcast"]
        if len(anchors) != summary["anchor_count"]:
            _fail(
                f"round {t}: summary says {summary['anchor_count']} anchors, "
                f"trace holds {len(anchors)}"
            )

        protos = [rec for rec in group if rec["type"] == "prototype_upload"]
        proto_scalars = sum(len(rec["vector"]) for rec in protos)
        for rec in protos:
            if len(rec["vector"]) != embed_dim:
                _fail(f"round {t}: prototype vector length is not embed_dim")

        ups = [rec for rec in group if rec["type"] == "sparse_update"]
        up_values = up_indices = 0
        for rec in ups:
            idx = rec["indices"]
            if rec["d"] != d:
                _fail(f"round {t}: sparse_update d differs from header d")
            if rec["k"] != len(idx) or len(rec["values"]) != len(idx):
                _fail(f"round {t}: sparse_update k/indices/values lengths disagree")
            if any(i < 0 or i >= d for i in idx):
                _fail(f"round {t}: sparse_update index out of range")
            if any(b <= a for a, b in zip(idx, idx[1:])):
                _fail(f"round {t}: sparse_update indices not strictly increasing")
            up_values += len(rec["values"])
            up_indices += len(idx)

        for name, got, said in (
            ("uplink_values", up_values, summary["uplink_values"]),
            ("uplink_indices", up_indices, summary["uplink_indices"]),
            ("uplink_proto_scalars", proto_scalars, summary["uplink_proto_scalars"]),
            ("downlink_scalars", down, summary["downlink_scalars"]),
        ):
            if got != said:
                _fail(
                    f"round {t}: {name} mismatch: summary says {said}, "
                    f"records sum to {got}"
                )

        if mode in ("no_erpa", "neither"):
            if protos or anchors or any(r["type"] == "public_shipment" for r in group):
                _fail(f"round {t}: mode {mode} must not exchange prototypes")
        if mode in ("no_apud", "neither"):
            for rec in ups:
                if rec["k"] != d:
                    _fail(f"round {t}: mode {mode} requires dense updates, got k={rec['k']}")

        sum_values += up_values
        sum_indices += up_indices
        sum_proto += proto_scalars
        sum_down += down

    for name, got in (
        ("uplink_values", sum_values),
        ("uplink_indices", sum_indices),
        ("uplink_proto_scalars", sum_proto),
        ("downlink_scalars", sum_down),
    ):
        if totals.get(name) != got:
            _fail(f"totals: {name} mismatch: trailer says {totals.get(name)}, records sum to {got}")
    if totals.get("rounds") != len(round_ids):
        _fail(f"totals: trailer says {totals.get('rounds')} rounds, trace holds {len(round_ids)}")

    violations = scan_privacy(records)
    if violations:
        _fail("privacy: " + "; ".join(violations))

    return {
        "rounds": len(round_ids),
        "records": len(records),
        "uplink_values": sum_values,
        "uplink_indices": sum_indices,
        "uplink_proto_scalars": sum_proto,
        "downlink_scalars": sum_down,
    }


METRICS_HEADER = "round,mode,mean_acc,uplink_values,uplink_indices,uplink_proto_scalars,downlink_scalars"


def write_metrics(path: str, mode: str, rows: Sequence[dict[str, Any]]) -> None:
    """Write the per-round metrics CSV; floats use repr so they round-trip."""
    with open(path, "w") as fh:
        fh.write(METRICS_HEADER + "\n")
        for row in rows:
            fh.write(
                ",".join(
                    [
                        str(int(row["round"])),
                        mode,
                        repr(float(row["mean_acc"])),
                        str(int(row["uplink_values"])),
                        str(int(row["uplink_indices"])),
                        str(int(row["uplink_proto_scalars"])),
                        str(int(row["downlink_scalars"])),
                    ]
                )
                + "\n"
            )
