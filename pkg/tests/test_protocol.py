"""Wire format, node choreography, privacy audit, and ensemble files."""

import struct
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from protoadapt.datasets import LabeledDataset
from protoadapt.errors import ParseError, ProtoAdaptError
from protoadapt.nets import TrainConfig
from protoadapt.pipeline import RunConfig, run_algorithm1
from protoadapt.protocol import (
    _MSG_HEADER,
    ControlSignal,
    Message,
    ModelParameters,
    NodeId,
    PrototypeSummary,
    ScalarReport,
    Transcript,
    TranscriptEntry,
    audit_privacy,
    deserialize_message,
    load_ensemble,
    plant_canary,
    run_distributed,
    save_ensemble,
    serialize_message,
)

SRC = NodeId("source", 0)
TGT = NodeId("target")


def roundtrip(payload):
    raw = serialize_message(Message(SRC, TGT, 3, payload))
    back = deserialize_message(raw)
    assert back.sender == SRC and back.receiver == TGT and back.seq == 3
    return back.payload, raw


# --------------------------------------------------------------------------
# Message round-trips
# --------------------------------------------------------------------------


class TestWireFormat:
    def test_header_is_43_bytes(self):
        assert _MSG_HEADER.size == 43

    def test_scalar_roundtrip(self):
        payload, _ = roundtrip(ScalarReport("d_source", 0.125))
        assert payload == ScalarReport("d_source", 0.125)

    def test_control_roundtrip(self):
        payload, _ = roundtrip(ControlSignal("done"))
        assert payload == ControlSignal("done")

    def test_prototypes_roundtrip(self):
        gen = np.random.default_rng(81)
        p = PrototypeSummary(
            labels=np.array([0, 2, 5], dtype=np.int64),
            counts=np.array([10, 20, 30], dtype=np.int64),
            means=gen.standard_normal((3, 4)),
            covs=gen.standard_normal((3, 4, 4)),
        )
        payload, _ = roundtrip(p)
        assert payload == p

    def test_model_roundtrip(self):
        gen = np.random.default_rng(82)
        m = ModelParameters(
            enc_weights=[gen.standard_normal((2, 5)), gen.standard_normal((5, 3))],
            enc_biases=[gen.standard_normal(5), gen.standard_normal(3)],
            clf_weight=gen.standard_normal((3, 4)),
            clf_bias=gen.standard_normal(4),
        )
        payload, _ = roundtrip(m)
        assert payload == m

    def test_prototype_payload_size_formula(self):
        # 16-byte count/dim header, then per class: id + count (16) plus
        # 8d mean bytes plus 8d^2 covariance bytes
        gen = np.random.default_rng(83)
        p = PrototypeSummary(
            labels=np.arange(3, dtype=np.int64),
            counts=np.full(3, 7, dtype=np.int64),
            means=gen.standard_normal((3, 4)),
            covs=gen.standard_normal((3, 4, 4)),
        )
        _, raw = roundtrip(p)
        payload_len = len(raw) - _MSG_HEADER.size
        assert payload_len == 16 + 3 * (16 + 8 * 4 + 8 * 4 * 4) == 544
        assert len(raw) == 587

    @given(
        name=st.text(max_size=40),
        value=st.floats(allow_nan=False, allow_infinity=True, width=64),
    )
    @settings(max_examples=60, deadline=None)
    def test_scalar_roundtrip_property(self, name, value):
        payload, _ = roundtrip(ScalarReport(name, value))
        assert payload.name == name
        assert payload.value == value

    def test_unknown_payload_type_rejected(self):
        with pytest.raises(TypeError):
            Message(SRC, TGT, 0, payload={"not": "allowed"})

    def test_bad_role_rejected(self):
        with pytest.raises(ValueError):
            NodeId("coordinator")


class TestDeserializeErrors:
    def _raw(self, payload=None):
        return serialize_message(Message(SRC, TGT, 0, payload or ScalarReport("x", 1.0)))

    def test_bad_magic(self):
        raw = b"XXXX" + self._raw()[4:]
        with pytest.raises(ParseError) as exc:
            deserialize_message(raw)
        assert exc.value.offset == 0

    def test_bad_version(self):
        raw = bytearray(self._raw())
        raw[4:8] = (9).to_bytes(4, "little")
        with pytest.raises(ParseError) as exc:
            deserialize_message(bytes(raw))
        assert exc.value.offset == 4

    def test_truncated_header(self):
        with pytest.raises(ParseError):
            deserialize_message(self._raw()[:20])

    def test_length_field_mismatch(self):
        with pytest.raises(ParseError) as exc:
            deserialize_message(self._raw() + b"\x00")
        assert exc.value.offset == _MSG_HEADER.size - 8

    def test_unknown_tag(self):
        header = _MSG_HEADER.pack(b"SMMG", 1, 0, 0, 1, 0, 0, 9, 0)
        with pytest.raises(ParseError, match="tag"):
            deserialize_message(header)

    def test_trailing_payload_bytes(self):
        good = self._raw()
        payload = good[_MSG_HEADER.size :] + b"ZZ"
        header = _MSG_HEADER.pack(b"SMMG", 1, 0, 0, 1, 0, 0, 3, len(payload))
        with pytest.raises(ParseError, match="trailing"):
            deserialize_message(header + payload)

    def test_invalid_utf8_name(self):
        bad_name = b"\xff\xfe\xfd"
        payload = struct.pack("<H", len(bad_name)) + bad_name + struct.pack("<d", 0.0)
        header = _MSG_HEADER.pack(b"SMMG", 1, 0, 0, 1, 0, 0, 3, len(payload))
        with pytest.raises(ParseError):
            deserialize_message(header + payload)


# --------------------------------------------------------------------------
# Transcript persistence
# --------------------------------------------------------------------------


class TestTranscript:
    def _filled(self):
        t = Transcript()
        for i, payload in enumerate(
            [ScalarReport("a", 1.0), ControlSignal("done"), ScalarReport("b", -2.5)]
        ):
            msg = Message(SRC, TGT, i, payload)
            t.log(msg, serialize_message(msg))
        return t

    def test_dump_load_roundtrip(self, tmp_path):
        t = self._filled()
        path = tmp_path / "t.log"
        t.dump(path)
        back = Transcript.load(path)
        assert len(back) == len(t)
        for a, b in zip(t, back):
            assert a.raw == b.raw
            assert a.sender == b.sender and a.receiver == b.receiver
            assert a.seq == b.seq and a.tag == b.tag

    def test_load_tolerates_malformed_payloads(self, tmp_path):
        # the auditor must be able to load a condemned transcript
        t = self._filled()
        t.entries.append(TranscriptEntry(SRC, TGT, 9, 3, b"\x01\x02garbage"))
        path = tmp_path / "leaky.log"
        t.dump(path)
        back = Transcript.load(path)
        assert len(back) == 4
        assert back.entries[-1].raw == b"\x01\x02garbage"

    def test_bytes_accounting(self):
        t = self._filled()
        per = t.bytes_by_sender()
        assert set(per) == {"source[0]"}
        assert per["source[0]"] == t.total_bytes() > 0

    def test_load_rejects_wrong_field_count(self, tmp_path):
        path = tmp_path / "bad.log"
        path.write_text("0\tonly\tthree\n")
        with pytest.raises(ParseError):
            Transcript.load(path)

    def test_load_rejects_bad_hex(self, tmp_path):
        path = tmp_path / "hex.log"
        path.write_text("0\tsource[0]\ttarget[0]\t0\tScalarReport\t4\tZZZZ\n")
        with pytest.raises(ParseError):
            Transcript.load(path)


# --------------------------------------------------------------------------
# Distributed run vs in-process run
# --------------------------------------------------------------------------

EPOCHS = 3


def _proto_cfg(**overrides):
    base = dict(
        hidden=(8,),
        latent_dim=4,
        train=TrainConfig(epochs=EPOCHS, batch_size=16, lr=5e-3),
        n_projections=20,
        adapt_steps=10,
        adapt_batch=32,
        adapt_lr=5e-3,
        distance_sets=2,
        eval_subsample=128,
        early_stop_min_steps=10**6,
        seed=21,
    )
    base.update(overrides)
    return RunConfig(**base)


def _make_domain(gen, shift, n=60):
    half = n // 2
    x = np.vstack([gen.standard_normal((half, 2)) + [3, 0],
                   gen.standard_normal((half, 2)) - [3, 0]]) + shift
    y = np.repeat([0, 1], half)
    return x, y


@pytest.fixture(scope="module")
def problem():
    gen = np.random.default_rng(80)
    sources = [_make_domain(gen, 0.0), _make_domain(gen, 0.4)]
    target_x, _ = _make_domain(gen, 0.6, n=50)
    return sources, target_x


@pytest.fixture(scope="module")
def dist_run(problem):
    sources, tx = problem
    return run_distributed(sources, tx, _proto_cfg())


class TestDistributedEquivalence:
    def test_identical_to_in_process_run(self, problem, dist_run):
        sources, tx = problem
        local = run_algorithm1(sources, tx, _proto_cfg())
        dist, _ = dist_run
        assert np.array_equal(local.weights, dist.weights)
        assert np.array_equal(local.predict_proba(tx), dist.predict_proba(tx))
        for lm, dm in zip(local.models, dist.models):
            for a, b in zip(lm.encoder.tensors(), dm.encoder.tensors()):
                assert np.array_equal(a, b)
        for lr_, dr in zip(local.report.records, dist.report.records):
            assert lr_.source_risk == dr.source_risk
            assert lr_.d_source == dr.d_source
            assert lr_.d_target_initial == dr.d_target_initial
            assert lr_.d_target_final == dr.d_target_final
            assert lr_.train_trace == dr.train_trace

    def test_message_count_formula(self, dist_run):
        # per source: announce + reply + model + prototypes + 3 scalars
        # + 2 per train-trace entry (epochs + 1) + done
        _, transcript = dist_run
        per_source = 8 + 2 * (EPOCHS + 1)
        assert len(transcript) == 2 * per_source

    def test_transcript_schema_clean(self, dist_run):
        _, transcript = dist_run
        for entry in transcript:
            deserialize_message(entry.raw)  # raises on any violation

    def test_killed_source_aborts_and_survivors_renormalize(self, problem):
        sources, tx = problem
        with pytest.warns(UserWarning, match="excluded"):
            result, transcript = run_distributed(
                [sources[0], sources[1], sources[0]], tx, _proto_cfg(), kill=(1,)
            )
        assert len(result.models) == 2
        assert result.report.excluded == [(1, "node aborted")]
        assert_allclose(result.weights.sum(), 1.0, atol=1e-12)
        aborts = [
            deserialize_message(e.raw).payload
            for e in transcript
            if e.sender == NodeId("source", 1) and e.tag == 4
        ]
        assert ControlSignal("abort") in aborts

    def test_all_sources_killed_raises(self, problem):
        sources, tx = problem
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            with pytest.raises(ProtoAdaptError):
                run_distributed(sources, tx, _proto_cfg(), kill=(0, 1))

    def test_traffic_volume_independent_of_dataset_size(self, problem):
        _, tx = problem
        gen = np.random.default_rng(85)
        small = [_make_domain(gen, 0.0, n=40)]
        big = [_make_domain(gen, 0.0, n=400)]
        _, t_small = run_distributed(small, tx, _proto_cfg())
        _, t_big = run_distributed(big, tx, _proto_cfg())
        assert t_small.total_bytes() == t_big.total_bytes()
        assert len(t_small) == len(t_big)


# --------------------------------------------------------------------------
# Privacy audit
# --------------------------------------------------------------------------


class TestAudit:
    def test_clean_run_passes_with_canaries(self, problem):
        sources, tx = problem
        planted, rows = [], []
        for i, (x, y) in enumerate(sources):
            ds = LabeledDataset(x, y, name=f"s{i}")
            with_canary, row = plant_canary(ds, seed=1)
            planted.append(with_canary)
            rows.append(row)
        _, transcript = run_distributed(
            [(d.x, d.y) for d in planted], tx, _proto_cfg()
        )
        report = audit_privacy(transcript, planted, canaries=rows)
        assert report.passed
        assert report.schema_ok
        assert report.matches == []
        assert report.n_entries == len(transcript)
        assert "PASS" in report.summary()

    def test_leaked_rows_inside_valid_message_detected(self, problem):
        # a schema-conformant model message whose weights ARE sample rows:
        # the byte scan must catch what the schema check cannot
        sources, tx = problem
        x0, y0 = sources[0]
        ds = LabeledDataset(x0, y0, name="victim")
        _, transcript = run_distributed(sources, tx, _proto_cfg())
        leak = ModelParameters(
            enc_weights=[np.ascontiguousarray(x0[:3])],
            enc_biases=[np.zeros(2)],
            clf_weight=np.zeros((2, 2)),
            clf_bias=np.zeros(2),
        )
        msg = Message(SRC, TGT, 999, leak)
        transcript.log(msg, serialize_message(msg))
        report = audit_privacy(transcript, [ds])
        assert not report.passed
        assert report.schema_ok  # the message itself is well-formed
        assert any(m["kind"] == "row" and m["dataset"] == "victim" for m in report.matches)
        assert "FAIL" in report.summary()

    def test_malformed_entry_flags_schema(self):
        t = Transcript()
        t.entries.append(TranscriptEntry(SRC, TGT, 0, 3, b"not a message at all"))
        report = audit_privacy(t, [])
        assert not report.passed
        assert not report.schema_ok

    def test_canary_leak_detected_by_pattern(self):
        ds = LabeledDataset(np.zeros((2, 2)), np.array([0, 1]), name="d")
        planted, row = plant_canary(ds, seed=2)
        # embed the canary bytes in an otherwise valid model message
        leak = ModelParameters(
            enc_weights=[row.reshape(1, 2)],
            enc_biases=[np.zeros(2)],
            clf_weight=np.zeros((2, 2)),
            clf_bias=np.zeros(2),
        )
        t = Transcript()
        msg = Message(SRC, TGT, 0, leak)
        t.log(msg, serialize_message(msg))
        report = audit_privacy(t, [], canaries=[row])
        assert not report.passed
        assert any(m["kind"] == "canary" for m in report.matches)

    def test_empty_transcript_passes(self):
        ds = LabeledDataset(np.ones((3, 2)), np.array([0, 1, 0]), name="d")
        report = audit_privacy(Transcript(), [ds])
        assert report.passed and report.n_entries == 0

    def test_plant_canary_extends_dataset(self):
        ds = LabeledDataset(np.zeros((5, 3)), np.arange(5), name="c")
        planted, row = plant_canary(ds, seed=3)
        assert planted.n == 6
        assert np.array_equal(planted.x[-1], row)
        assert row.shape == (3,)
        # deterministic in seed and name
        _, row2 = plant_canary(ds, seed=3)
        assert np.array_equal(row, row2)


# --------------------------------------------------------------------------
# Ensemble files
# --------------------------------------------------------------------------


class TestEnsembleFile:
    def test_save_load_predictions_identical(self, problem, dist_run, tmp_path):
        _, tx = problem
        result, _ = dist_run
        path = tmp_path / "ens.bin"
        save_ensemble(result, path)
        models, weights, n_classes = load_ensemble(path)
        assert np.array_equal(weights, result.weights)
        assert n_classes == result.n_classes
        from protoadapt.pipeline import predict_ensemble

        assert np.array_equal(
            predict_ensemble(models, weights, tx), result.predict_proba(tx)
        )

    def test_bad_magic_rejected(self, problem, dist_run, tmp_path):
        result, _ = dist_run
        path = tmp_path / "ens.bin"
        save_ensemble(result, path)
        blob = bytearray(path.read_bytes())
        blob[:4] = b"NOPE"
        path.write_bytes(bytes(blob))
        with pytest.raises(ParseError):
            load_ensemble(path)
