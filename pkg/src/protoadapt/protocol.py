"""Simulated multi-node execution with schema-restricted messages.

Each source domain lives on its own node holding a revocable data handle;
the target node holds only unlabeled target features. The sole
communication mechanism is a byte channel carrying serialized Messages,
and the Message schema has exactly four payloads — prototype summaries,
model parameters, named scalars, control signals — none of which can
represent a per-sample feature or label array. A Transcript records every
byte that crossed a boundary so the privacy claim is auditable after the
fact rather than assumed.

The nodes call the same stage functions as the in-process pipeline, so a
distributed run is a refactoring of `run_algorithm1`, not a second
implementation: same seed, same numbers.

Wire format (all little-endian; field-by-field docs in docs/wire-format.md):

Message header (43 bytes):
  magic b"SMMG", version u32, sender role u8 + index u64,
  receiver role u8 + index u64, sequence u64, payload tag u8,
  payload length u64, then the payload bytes.

Payloads:
  tag 1 PrototypeSummary: C u64, d u64, then per class
        class_id u64, count u64, mean d×f64, covariance d·d×f64.
  tag 2 ModelParameters: n_layers u64, then per encoder layer
        d_in u64, d_out u64, W f64s (row-major), b f64s; then classifier
        d_latent u64, n_classes u64, W f64s, b f64s.
  tag 3 ScalarReport: name length u16, name utf-8, value f64.
  tag 4 ControlSignal: kind length u16, kind utf-8.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .datasets import LabeledDataset
from .errors import ParseError, ProtoAdaptError
from .nets import ClassifierParams, EncoderParams, SourceModel
from .pipeline import (
    AdaptationReport,
    PrivateDataset,
    RunConfig,
    RunResult,
    compute_weights,
    source_stage,
    target_stage,
)
from .prototypes import ClassPrototypes

__all__ = [
    "NodeId",
    "PrototypeSummary",
    "ModelParameters",
    "ScalarReport",
    "ControlSignal",
    "Message",
    "TranscriptEntry",
    "Transcript",
    "serialize_message",
    "deserialize_message",
    "run_distributed",
    "plant_canary",
    "audit_privacy",
    "PrivacyReport",
    "save_ensemble",
    "load_ensemble",
]

MESSAGE_MAGIC = b"SMMG"
PROTOCOL_VERSION = 1
_MSG_HEADER = struct.Struct("<4sIBQBQQBQ")

TAG_PROTOTYPES = 1
TAG_MODEL = 2
TAG_SCALAR = 3
TAG_CONTROL = 4

_ROLES = ("source", "target")


# --------------------------------------------------------------------------
# Message types
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class NodeId:
    role: str  # "source" | "target"
    index: int = 0

    def __post_init__(self):
        if self.role not in _ROLES:
            raise ValueError(f"unknown role {self.role!r}")

    def __str__(self):
        return f"{self.role}[{self.index}]"


@dataclass
class PrototypeSummary:
    """Per-class Gaussian statistics — the only thing a source reveals
    about its data distribution."""

    labels: np.ndarray
    counts: np.ndarray
    means: np.ndarray
    covs: np.ndarray

    def __eq__(self, other):
        return (
            isinstance(other, PrototypeSummary)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.counts, other.counts)
            and np.array_equal(self.means, other.means)
            and np.array_equal(self.covs, other.covs)
        )


@dataclass
class ModelParameters:
    """Encoder and classifier tensors of one trained source model."""

    enc_weights: list
    enc_biases: list
    clf_weight: np.ndarray
    clf_bias: np.ndarray

    def __eq__(self, other):
        return (
            isinstance(other, ModelParameters)
            and len(self.enc_weights) == len(other.enc_weights)
            and all(np.array_equal(a, b) for a, b in zip(self.enc_weights, other.enc_weights))
            and all(np.array_equal(a, b) for a, b in zip(self.enc_biases, other.enc_biases))
            and np.array_equal(self.clf_weight, other.clf_weight)
            and np.array_equal(self.clf_bias, other.clf_bias)
        )


@dataclass(frozen=True)
class ScalarReport:
    name: str
    value: float


@dataclass(frozen=True)
class ControlSignal:
    kind: str  # "done" | "abort" | ...


_PAYLOAD_TAGS = {
    PrototypeSummary: TAG_PROTOTYPES,
    ModelParameters: TAG_MODEL,
    ScalarReport: TAG_SCALAR,
    ControlSignal: TAG_CONTROL,
}


@dataclass
class Message:
    sender: NodeId
    receiver: NodeId
    seq: int
    payload: object

    def __post_init__(self):
        if type(self.payload) not in _PAYLOAD_TAGS:
            raise TypeError(f"payload type {type(self.payload).__name__} is not in the schema")


# --------------------------------------------------------------------------
# Serialization
# --------------------------------------------------------------------------


def _f64_bytes(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def _pack_prototypes(p: PrototypeSummary) -> bytes:
    c, d = p.means.shape
    parts = [struct.pack("<QQ", c, d)]
    for i in range(c):
        parts.append(struct.pack("<QQ", int(p.labels[i]), int(p.counts[i])))
        parts.append(_f64_bytes(p.means[i]))
        parts.append(_f64_bytes(p.covs[i]))
    return b"".join(parts)


def _pack_model(m: ModelParameters) -> bytes:
    parts = [struct.pack("<Q", len(m.enc_weights))]
    for w, b in zip(m.enc_weights, m.enc_biases):
        parts.append(struct.pack("<QQ", w.shape[0], w.shape[1]))
        parts.append(_f64_bytes(w))
        parts.append(_f64_bytes(b))
    parts.append(struct.pack("<QQ", m.clf_weight.shape[0], m.clf_weight.shape[1]))
    parts.append(_f64_bytes(m.clf_weight))
    parts.append(_f64_bytes(m.clf_bias))
    return b"".join(parts)


def _pack_scalar(s: ScalarReport) -> bytes:
    name = s.name.encode("utf-8")
    if len(name) > 0xFFFF:
        raise ValueError("scalar name too long")
    return struct.pack("<H", len(name)) + name + struct.pack("<d", float(s.value))


def _pack_control(c: ControlSignal) -> bytes:
    kind = c.kind.encode("utf-8")
    if len(kind) > 0xFFFF:
        raise ValueError("control kind too long")
    return struct.pack("<H", len(kind)) + kind


class _Cursor:
    """Byte reader that reports the failing offset on truncation."""

    def __init__(self, buf: bytes, offset: int = 0):
        self.buf = buf
        self.offset = offset

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self.buf):
            raise ParseError(
                f"need {n} bytes but only {len(self.buf) - self.offset} remain", self.offset
            )
        out = self.buf[self.offset : self.offset + n]
        self.offset += n
        return out

    def unpack(self, fmt: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))

    def f64s(self, count: int, shape=None) -> np.ndarray:
        a = np.frombuffer(self.take(count * 8), dtype="<f8").astype(np.float64)
        return a.reshape(shape) if shape is not None else a


def _unpack_prototypes(cur: _Cursor) -> PrototypeSummary:
    c, d = cur.unpack("<QQ")
    labels = np.empty(c, dtype=np.int64)
    counts = np.empty(c, dtype=np.int64)
    means = np.empty((c, d))
    covs = np.empty((c, d, d))
    for i in range(c):
        labels[i], counts[i] = cur.unpack("<QQ")
        means[i] = cur.f64s(d)
        covs[i] = cur.f64s(d * d, (d, d))
    return PrototypeSummary(labels, counts, means, covs)


def _unpack_model(cur: _Cursor) -> ModelParameters:
    (n_layers,) = cur.unpack("<Q")
    ws, bs = [], []
    for _ in range(n_layers):
        d_in, d_out = cur.unpack("<QQ")
        ws.append(cur.f64s(d_in * d_out, (d_in, d_out)))
        bs.append(cur.f64s(d_out))
    d_latent, n_classes = cur.unpack("<QQ")
    cw = cur.f64s(d_latent * n_classes, (d_latent, n_classes))
    cb = cur.f64s(n_classes)
    return ModelParameters(ws, bs, cw, cb)


def _unpack_text(cur: _Cursor) -> str:
    (n,) = cur.unpack("<H")
    raw = cur.take(n)
    start = cur.offset - n
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"invalid utf-8 in text field: {exc}", start) from None


def serialize_message(msg: Message) -> bytes:
    tag = _PAYLOAD_TAGS[type(msg.payload)]
    if tag == TAG_PROTOTYPES:
        payload = _pack_prototypes(msg.payload)
    elif tag == TAG_MODEL:
        payload = _pack_model(msg.payload)
    elif tag == TAG_SCALAR:
        payload = _pack_scalar(msg.payload)
    else:
        payload = _pack_control(msg.payload)
    header = _MSG_HEADER.pack(
        MESSAGE_MAGIC,
        PROTOCOL_VERSION,
        _ROLES.index(msg.sender.role),
        msg.sender.index,
        _ROLES.index(msg.receiver.role),
        msg.receiver.index,
        msg.seq,
        tag,
        len(payload),
    )
    return header + payload


def deserialize_message(buf: bytes) -> Message:
    cur = _Cursor(buf)
    magic, version, s_role, s_idx, r_role, r_idx, seq, tag, length = cur.unpack(
        "<4sIBQBQQBQ"
    )
    if magic != MESSAGE_MAGIC:
        raise ParseError(f"bad magic {magic!r}", 0)
    if version != PROTOCOL_VERSION:
        raise ParseError(f"unsupported protocol version {version}", 4)
    if s_role > 1 or r_role > 1:
        raise ParseError("unknown node role", 8)
    if len(buf) - _MSG_HEADER.size != length:
        raise ParseError(
            f"payload length field says {length} but {len(buf) - _MSG_HEADER.size} bytes follow",
            _MSG_HEADER.size - 8,
        )
    if tag == TAG_PROTOTYPES:
        payload = _unpack_prototypes(cur)
    elif tag == TAG_MODEL:
        payload = _unpack_model(cur)
    elif tag == TAG_SCALAR:
        name = _unpack_text(cur)
        (value,) = cur.unpack("<d")
        payload = ScalarReport(name, value)
    elif tag == TAG_CONTROL:
        payload = ControlSignal(_unpack_text(cur))
    else:
        raise ParseError(f"unknown payload tag {tag}", _MSG_HEADER.size - 9)
    if cur.offset != len(buf):
        raise ParseError(f"{len(buf) - cur.offset} trailing bytes", cur.offset)
    return Message(
        sender=NodeId(_ROLES[s_role], s_idx),
        receiver=NodeId(_ROLES[r_role], r_idx),
        seq=seq,
        payload=payload,
    )


# --------------------------------------------------------------------------
# Transcript
# --------------------------------------------------------------------------


@dataclass
class TranscriptEntry:
    sender: NodeId
    receiver: NodeId
    seq: int
    tag: int
    raw: bytes  # full serialized message, byte-exact

    @property
    def n_bytes(self) -> int:
        return len(self.raw)


class Transcript:
    """Append-only, byte-exact log of every message that crossed a boundary."""

    def __init__(self):
        self.entries: list[TranscriptEntry] = []

    def log(self, msg: Message, raw: bytes) -> None:
        self.entries.append(
            TranscriptEntry(msg.sender, msg.receiver, msg.seq, _PAYLOAD_TAGS[type(msg.payload)], raw)
        )

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def bytes_by_sender(self) -> dict:
        out: dict = {}
        for e in self.entries:
            key = str(e.sender)
            out[key] = out.get(key, 0) + e.n_bytes
        return out

    def total_bytes(self) -> int:
        return sum(e.n_bytes for e in self.entries)

    def dump(self, path) -> None:
        """Newline-delimited log: index, endpoints, seq, tag, size, hex payload."""
        tag_names = {v: k.__name__ for k, v in _PAYLOAD_TAGS.items()}
        with open(path, "w") as fh:
            for i, e in enumerate(self.entries):
                fh.write(
                    f"{i}\t{e.sender}\t{e.receiver}\t{e.seq}\t"
                    f"{tag_names[e.tag]}\t{e.n_bytes}\t{e.raw.hex()}\n"
                )

    @classmethod
    def load(cls, path) -> "Transcript":
        """Rebuild a transcript from a dump file (the hex column is canonical).

        Payloads are NOT validated here — a transcript with a malformed or
        leaky entry must still load so the auditor can condemn it.
        """
        t = cls()
        with open(path) as fh:
            for lineno, line in enumerate(fh):
                line = line.rstrip("\n")
                if not line:
                    continue
                fields = line.split("\t")
                if len(fields) != 7:
                    raise ParseError(f"transcript line {lineno} has {len(fields)} fields", 0)
                try:
                    raw = bytes.fromhex(fields[6])
                except ValueError:
                    raise ParseError(f"transcript line {lineno}: bad hex payload", 0) from None
                try:
                    _, _, s_role, s_idx, r_role, r_idx, seq, tag, _ = _MSG_HEADER.unpack_from(
                        raw, 0
                    )
                    sender = NodeId(_ROLES[min(s_role, 1)], s_idx)
                    receiver = NodeId(_ROLES[min(r_role, 1)], r_idx)
                except struct.error:
                    sender = receiver = NodeId("source", 0)
                    seq, tag = lineno, 0
                t.entries.append(TranscriptEntry(sender, receiver, seq, tag, raw))
        return t


# --------------------------------------------------------------------------
# Nodes
# --------------------------------------------------------------------------


class _Mailbox:
    """Ordered, reliable, loss-free in-process channel carrying raw bytes."""

    def __init__(self):
        self._q: list[bytes] = []

    def put(self, raw: bytes) -> None:
        self._q.append(raw)

    def get(self) -> bytes:
        if not self._q:
            raise ProtoAdaptError("receive on empty channel")
        return self._q.pop(0)

    def __len__(self):
        return len(self._q)


class SourceNode:
    """One isolated source domain: trains locally, ships summaries only."""

    def __init__(self, index: int, data: PrivateDataset):
        self.id = NodeId("source", index)
        self._data = data
        self._seq = 0

    def _send(self, payload, outbox: _Mailbox, transcript: Transcript) -> None:
        msg = Message(self.id, NodeId("target"), self._seq, payload)
        self._seq += 1
        raw = serialize_message(msg)
        transcript.log(msg, raw)
        outbox.put(raw)

    def announce_label_space(self, outbox: _Mailbox, transcript: Transcript) -> None:
        local = int(self._data.y.max()) + 1 if self._data.y.size else 0
        self._send(ScalarReport("label_space", float(local)), outbox, transcript)

    def produce(
        self,
        inbox: _Mailbox,
        outbox: _Mailbox,
        transcript: Transcript,
        cfg: RunConfig,
        kill: bool = False,
    ) -> None:
        """Phase 2: train, summarize, release data, ship the results."""
        reply = deserialize_message(inbox.get()).payload
        if not isinstance(reply, ScalarReport) or reply.name != "n_classes":
            raise ProtoAdaptError("expected the shared label-space size")
        n_classes = int(reply.value)
        if kill:
            self._data.revoke()
            self._send(ControlSignal("abort"), outbox, transcript)
            return
        try:
            model, protos, summary = source_stage(self._data, self.id.index, n_classes, cfg)
        except ProtoAdaptError:
            self._data.revoke()
            self._send(ControlSignal("abort"), outbox, transcript)
            return
        self._send(
            ModelParameters(
                model.encoder.weights,
                model.encoder.biases,
                model.classifier.weight,
                model.classifier.bias,
            ),
            outbox,
            transcript,
        )
        self._send(
            PrototypeSummary(protos.labels, protos.counts, protos.means, protos.covs),
            outbox,
            transcript,
        )
        self._send(ScalarReport("source_risk", summary["source_risk"]), outbox, transcript)
        self._send(ScalarReport("d_source", summary["d_source"]), outbox, transcript)
        self._send(ScalarReport("n_samples", float(summary["n_samples"])), outbox, transcript)
        for e, (loss, acc) in enumerate(summary["train_trace"]):
            self._send(ScalarReport(f"train_loss_{e}", loss), outbox, transcript)
            self._send(ScalarReport(f"train_acc_{e}", acc), outbox, transcript)
        self._send(ControlSignal("done"), outbox, transcript)


class TargetNode:
    """Holds the unlabeled target; adapts received models against it."""

    def __init__(self, target_x: np.ndarray):
        self.id = NodeId("target")
        self.target_x = np.asarray(target_x, dtype=np.float64)
        self._seq = 0

    def _send(self, payload, k: int, outbox: _Mailbox, transcript: Transcript) -> None:
        msg = Message(self.id, NodeId("source", k), self._seq, payload)
        self._seq += 1
        raw = serialize_message(msg)
        transcript.log(msg, raw)
        outbox.put(raw)

    def decide_label_space(self, inboxes, outboxes, transcript, cfg: RunConfig) -> int:
        sizes = []
        for box in inboxes:
            payload = deserialize_message(box.get()).payload
            if not isinstance(payload, ScalarReport) or payload.name != "label_space":
                raise ProtoAdaptError("expected a label-space announcement")
            sizes.append(int(payload.value))
        n_classes = cfg.n_classes if cfg.n_classes is not None else max(sizes)
        if n_classes <= 0:
            raise ProtoAdaptError("no labels found across sources")
        for k, box in enumerate(outboxes):
            self._send(ScalarReport("n_classes", float(n_classes)), k, box, transcript)
        return n_classes

    def consume(self, k: int, inbox: _Mailbox):
        """Collect one source's shipment; None if the node aborted."""
        model = protos = None
        scalars: dict = {}
        train_trace: dict = {}
        while True:
            payload = deserialize_message(inbox.get()).payload
            if isinstance(payload, ControlSignal):
                if payload.kind == "abort":
                    return None
                if payload.kind == "done":
                    break
            elif isinstance(payload, ModelParameters):
                model = SourceModel(
                    EncoderParams(list(payload.enc_weights), list(payload.enc_biases)),
                    ClassifierParams(payload.clf_weight, payload.clf_bias),
                )
            elif isinstance(payload, PrototypeSummary):
                protos = ClassPrototypes(
                    payload.labels, payload.means, payload.covs, payload.counts
                )
            elif isinstance(payload, ScalarReport):
                if payload.name.startswith("train_"):
                    prefix, idx = payload.name.rsplit("_", 1)
                    train_trace.setdefault(int(idx), [None, None])[
                        0 if prefix == "train_loss" else 1
                    ] = payload.value
                else:
                    scalars[payload.name] = payload.value
        if model is None or protos is None:
            raise ProtoAdaptError(f"source {k} finished without sending its summaries")
        trace = [tuple(train_trace[i]) for i in sorted(train_trace)]
        summary = {
            "source_risk": scalars["source_risk"],
            "d_source": scalars["d_source"],
            "n_samples": int(scalars["n_samples"]),
            "train_trace": trace,
        }
        return model, protos, summary

    def adapt(self, shipments, cfg: RunConfig):
        """Run the shared target stage per surviving source, then combine."""
        models, records, excluded = [], [], []
        for k, shipment in shipments:
            if shipment is None:
                excluded.append((k, "node aborted"))
                continue
            model, protos, summary = shipment
            adapted, record = target_stage(model, protos, summary, k, self.target_x, cfg)
            models.append(adapted)
            records.append(record)
        for k, reason in excluded:
            warnings.warn(f"source {k} excluded: {reason}", stacklevel=2)
        if not records:
            raise ProtoAdaptError("every source node failed; nothing to combine")
        weights = compute_weights(
            np.array([r.d_target_final for r in records]),
            np.array([r.d_source for r in records]),
            cfg.weight_strategy,
            cfg.weight_eps,
        )
        report = AdaptationReport(records, weights, cfg.weight_strategy, excluded, private=True)
        n_classes = max(int(m.classifier.n_classes) for m in models)
        return RunResult(models, weights, report, n_classes)


def run_distributed(sources, target_x: np.ndarray, cfg: RunConfig, kill=()):
    """Execute the pipeline with per-source isolation; returns (result, transcript).

    ``kill`` lists source indices that crash mid-run (after the label-space
    handshake): they abort, are excluded from the ensemble, and the weights
    renormalize over the survivors — mirroring the in-process pipeline's
    partial-failure contract.
    """
    if len(sources) == 0:
        raise ValueError("need at least one source")
    kill = set(kill)
    transcript = Transcript()
    handles = [PrivateDataset(x, y) for x, y in sources]
    nodes = [SourceNode(k, h) for k, h in enumerate(handles)]
    target = TargetNode(target_x)
    up = [_Mailbox() for _ in nodes]  # source -> target
    down = [_Mailbox() for _ in nodes]  # target -> source

    for node, box in zip(nodes, up):
        node.announce_label_space(box, transcript)
    target.decide_label_space(up, down, transcript, cfg)
    for node, inbox, outbox in zip(nodes, down, up):
        node.produce(inbox, outbox, transcript, cfg, kill=node.id.index in kill)
    for h in handles:
        h.revoke()
    shipments = [(k, target.consume(k, box)) for k, box in enumerate(up)]
    result = target.adapt(shipments, cfg)
    return result, transcript


# --------------------------------------------------------------------------
# Privacy audit
# --------------------------------------------------------------------------


@dataclass
class PrivacyReport:
    passed: bool
    schema_ok: bool
    matches: list  # dicts: entry index, kind, dataset, row, byte offset
    n_entries: int
    bytes_by_sender: dict = field(default_factory=dict)

    def summary(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return (
            f"{verdict}: {self.n_entries} messages audited, "
            f"{len(self.matches)} sample-byte matches, "
            f"schema {'ok' if self.schema_ok else 'VIOLATED'}"
        )


def plant_canary(dataset: LabeledDataset, seed: int, tag: str = "canary"):
    """Append one sentinel row with an effectively unique 8·d-byte pattern.

    Returns (dataset_with_canary, canary_row). The row is an ordinary
    finite feature vector, so the pipeline treats it like any sample; the
    auditor later scans transcripts for its exact bytes.
    """
    gen = rngmod.stream(seed, "canary", tag, dataset.name)
    row = gen.uniform(-1e6, 1e6, size=dataset.d)
    x = np.vstack([dataset.x, row])
    if dataset.labeled:
        y = np.append(dataset.y, dataset.y[0])
    else:
        y = dataset.y
    return LabeledDataset(x, y, name=dataset.name), row


def audit_privacy(transcript: Transcript, datasets, canaries=()) -> PrivacyReport:
    """Scan every logged payload for sample bytes and schema violations.

    ``datasets`` are the LabeledDatasets that participated (their every row
    is a forbidden byte pattern); ``canaries`` are extra sentinel rows from
    `plant_canary`. PASS requires zero matches and a clean schema. Label
    arrays have no byte scan (small-integer patterns are ubiquitous); the
    schema check covers them, since no payload variant can carry an array
    of labels.
    """
    matches = []
    schema_ok = True
    patterns = [("canary", None, i, _f64_bytes(np.asarray(c))) for i, c in enumerate(canaries)]
    for ds in datasets:
        name = ds.name or f"dataset@{id(ds):x}"
        for i in range(ds.n):
            patterns.append(("row", name, i, _f64_bytes(ds.x[i])))
    for entry_index, entry in enumerate(transcript):
        try:
            deserialize_message(entry.raw)
        except ParseError:
            schema_ok = False
        for kind, ds_name, row, pattern in patterns:
            pos = entry.raw.find(pattern)
            if pos != -1:
                matches.append(
                    {
                        "entry": entry_index,
                        "kind": kind,
                        "dataset": ds_name,
                        "row": row,
                        "offset": pos,
                    }
                )
    return PrivacyReport(
        passed=schema_ok and not matches,
        schema_ok=schema_ok,
        matches=matches,
        n_entries=len(transcript),
        bytes_by_sender=transcript.bytes_by_sender(),
    )


# --------------------------------------------------------------------------
# Ensemble container
# --------------------------------------------------------------------------

ENSEMBLE_MAGIC = b"SMEN"
_ENS_HEADER = struct.Struct("<4sIQQ")  # magic, version, n_models, n_classes


def save_ensemble(result: RunResult, path) -> None:
    """Write weights plus per-model parameters; enough to predict later."""
    with open(path, "wb") as fh:
        fh.write(_ENS_HEADER.pack(ENSEMBLE_MAGIC, 1, len(result.models), result.n_classes))
        fh.write(_f64_bytes(np.asarray(result.weights)))
        for m in result.models:
            blob = _pack_model(
                ModelParameters(
                    m.encoder.weights, m.encoder.biases, m.classifier.weight, m.classifier.bias
                )
            )
            fh.write(struct.pack("<Q", len(blob)))
            fh.write(blob)


def load_ensemble(path):
    """Returns (models, weights, n_classes) from a saved ensemble file."""
    with open(path, "rb") as fh:
        blob = fh.read()
    cur = _Cursor(blob)
    magic, version, n_models, n_classes = cur.unpack("<4sIQQ")
    if magic != ENSEMBLE_MAGIC:
        raise ParseError(f"bad magic {magic!r}", 0)
    if version != 1:
        raise ParseError(f"unsupported ensemble version {version}", 4)
    weights = cur.f64s(n_models)
    models = []
    for _ in range(n_models):
        (size,) = cur.unpack("<Q")
        sub = _Cursor(cur.take(size))
        p = _unpack_model(sub)
        models.append(
            SourceModel(
                EncoderParams(p.enc_weights, p.enc_biases),
                ClassifierParams(p.clf_weight, p.clf_bias),
            )
        )
    if cur.offset != len(blob):
        raise ParseError(f"{len(blob) - cur.offset} trailing bytes", cur.offset)
    return models, weights, int(n_classes)
