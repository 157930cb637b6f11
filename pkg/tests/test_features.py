import io
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from avjca.errors import ContractError, FormatError
from avjca.features import (
    SyntheticConfig,
    Trial,
    UtteranceFeatures,
    decode_features,
    encode_features,
    make_trials,
    parse_trials,
    read_features,
    read_scores,
    read_trials,
    sample_segments,
    synth_dataset,
    write_features,
    write_scores,
    write_trials,
)


def hand_encoded(records, modality_code=0):
    """AVFV bytes assembled field by field with struct, for comparison with the encoder."""
    out = b"AVFV" + struct.pack("<I", 1) + bytes([modality_code]) + struct.pack("<I", len(records))
    for uid, spk, values in records:
        for text in (uid, spk):
            raw = text.encode()
            out += struct.pack("<H", len(raw)) + raw
        d, L = values.shape
        out += struct.pack("<II", d, L)
        for l in range(L):
            for i in range(d):
                out += struct.pack("<f", values[i, l])
    return out


def record(uid="u1", spk="s1", modality="audio", values=((1.0,), (2.0,))):
    return UtteranceFeatures(uid, spk, modality, np.array(values, dtype=np.float64))


class TestAvfvWrite:
    def test_empty_file_is_header_only(self, tmp_path):
        path = tmp_path / "empty.avfv"
        assert write_features([], path) == 13
        assert path.read_bytes() == hand_encoded([])

    def test_single_record_carries_eight_value_bytes(self):
        data = encode_features([record()])
        header = 13 + 2 + 2 + 2 + 2 + 8
        assert len(data) - header == 8
        assert data[header:] == struct.pack("<ff", 1.0, 2.0)

    def test_matches_hand_layout_segment_major(self):
        values = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
        data = encode_features([UtteranceFeatures("a", "b", "visual", values)])
        assert data == hand_encoded([("a", "b", values)], modality_code=1)

    def test_mixed_modalities_rejected(self):
        with pytest.raises(ContractError):
            encode_features([record(modality="audio"), record(uid="u2", modality="visual")])

    def test_unwritable_destination_is_an_os_error(self, tmp_path):
        with pytest.raises(OSError):
            write_features([record()], tmp_path / "missing-dir" / "x.avfv")


class TestAvfvRead:
    def test_round_trip_file_object(self):
        recs = [record("u1", "s1", values=[[1.5, -2.0], [0.25, 3.0]]), record("ütt", "spk", values=[[7.0]])]
        buf = io.BytesIO()
        write_features(recs, buf)
        buf.seek(0)
        assert read_features(buf) == recs

    @settings(deadline=None, max_examples=50)
    @given(
        st.lists(
            arrays(np.float32, st.tuples(st.integers(1, 4), st.integers(1, 4)), elements=st.floats(-1e6, 1e6, width=32)),
            max_size=4,
        )
    )
    def test_write_read_identity(self, mats):
        recs = [UtteranceFeatures(f"u{k}", f"s{k % 2}", "visual", m.astype(np.float64)) for k, m in enumerate(mats)]
        back = decode_features(encode_features(recs))
        assert back == recs
        assert encode_features(back) == encode_features(recs)

    def test_bad_magic(self):
        data = b"XXXX" + encode_features([record()])[4:]
        with pytest.raises(FormatError, match="magic"):
            decode_features(data)

    def test_truncated_payload_names_record(self):
        values = np.arange(6, dtype=np.float64).reshape(2, 3)
        data = hand_encoded([("first", "s", np.ones((1, 1))), ("short", "s", values)])[:-4]
        with pytest.raises(FormatError, match=r"record 1 \(short\).*6 values but only 5"):
            decode_features(data)

    def test_non_finite_value(self):
        data = hand_encoded([("u", "s", np.array([[np.nan]]))])
        with pytest.raises(FormatError, match="non-finite"):
            decode_features(data)

    def test_wrong_version_and_modality(self):
        good = encode_features([record()])
        with pytest.raises(FormatError, match="version"):
            decode_features(good[:4] + struct.pack("<I", 2) + good[8:])
        with pytest.raises(FormatError, match="modality"):
            decode_features(good[:8] + bytes([7]) + good[9:])

    def test_trailing_bytes(self):
        with pytest.raises(FormatError, match="trailing"):
            decode_features(encode_features([record()]) + b"\0")

    def test_short_header(self):
        with pytest.raises(FormatError):
            decode_features(b"AVFV\1\0")


class TestSampleSegments:
    def test_identity_when_equal(self, rng):
        frames = rng.normal(size=(3, 5))
        np.testing.assert_array_equal(sample_segments(frames, 5), frames)

    @pytest.mark.parametrize("T, L, expected", [(10, 5, [0, 2, 4, 6, 8]), (7, 3, [0, 2, 4])])
    def test_source_columns(self, T, L, expected):
        frames = np.tile(np.arange(T), (2, 1))
        np.testing.assert_array_equal(sample_segments(frames, L)[0], expected)

    @given(st.integers(1, 60), st.data())
    def test_strictly_increasing(self, T, data):
        L = data.draw(st.integers(1, T))
        picked = sample_segments(np.arange(T)[None, :], L)[0]
        assert len(picked) == L
        assert np.all(np.diff(picked) > 0)

    def test_too_few_frames(self):
        with pytest.raises(ContractError):
            sample_segments(np.zeros((2, 3)), 4)


class TestSynthetic:
    def test_noise_free_utterances_share_columns(self):
        audio, visual, _ = synth_dataset(SyntheticConfig(speakers=3, utterances=4, L=5, noise=0.0))
        for recs in (audio, visual):
            by_spk = {}
            for r in recs:
                by_spk.setdefault(r.speaker_id, []).append(r.values)
            for mats in by_spk.values():
                for m in mats:
                    np.testing.assert_array_equal(m, mats[0])
                    np.testing.assert_array_equal(m, np.repeat(m[:, :1], 5, axis=1))

    def test_deterministic(self):
        cfg = SyntheticConfig(speakers=4, utterances=3, corrupt_audio=0.3, corrupt_visual=0.2, seed=9)
        first, second = synth_dataset(cfg), synth_dataset(cfg)
        assert encode_features(first[0]) == encode_features(second[0])
        assert encode_features(first[1]) == encode_features(second[1])
        assert first[2] == second[2]

    def test_seed_changes_output(self):
        a = synth_dataset(SyntheticConfig(speakers=2, utterances=2, seed=1))[0]
        b = synth_dataset(SyntheticConfig(speakers=2, utterances=2, seed=2))[0]
        assert encode_features(a) != encode_features(b)

    def test_record_counts(self):
        audio, visual, speaker_of = synth_dataset(SyntheticConfig(speakers=20, utterances=10))
        assert len(audio) == len(visual) == len(speaker_of) == 200
        assert [r.utt_id for r in audio] == [r.utt_id for r in visual]

    def test_corruption_counts_and_independence(self):
        cfg = SyntheticConfig(speakers=10, utterances=10, L=3, noise=0.0, corrupt_audio=0.3, corrupt_visual=0.3)
        audio, visual, _ = synth_dataset(cfg)
        # Uncorrupted noise-free records have identical columns.
        bad_a = {r.utt_id for r in audio if not np.array_equal(r.values, np.repeat(r.values[:, :1], 3, axis=1))}
        bad_v = {r.utt_id for r in visual if not np.array_equal(r.values, np.repeat(r.values[:, :1], 3, axis=1))}
        assert len(bad_a) == len(bad_v) == 30
        assert bad_a != bad_v

    def test_values_survive_avfv_exactly(self):
        audio, _, _ = synth_dataset(SyntheticConfig(speakers=2, utterances=2))
        assert decode_features(encode_features(audio)) == audio

    @pytest.mark.parametrize("field, value", [("noise", -0.1), ("corrupt_audio", 1.5), ("speakers", 0)])
    def test_invalid_config(self, field, value):
        with pytest.raises(ContractError):
            synth_dataset(SyntheticConfig(**{field: value}))

    def test_make_trials_pairs_held_out_utterances(self):
        audio, _, _ = synth_dataset(SyntheticConfig(speakers=3, utterances=5))
        trials = make_trials(audio, 2)
        assert len(trials) == 15  # C(6, 2)
        assert sum(t.label for t in trials) == 3
        used = {u for t in trials for u in (t.enroll, t.test)}
        assert used == {f"spk{s:03d}-utt{u:03d}" for s in range(3) for u in (3, 4)}


class TestTrialsAndScores:
    def test_parse_two_trials(self):
        assert parse_trials("1 a b\n0 a c\n") == [Trial(1, "a", "b"), Trial(0, "a", "c")]

    @pytest.mark.parametrize(
        "text, match",
        [("2 a b", "line 1: label"), ("1 a b\n1 a", "line 2"), ("1 a b\n0 a b\n", "line 2: duplicate")],
    )
    def test_parse_errors(self, text, match):
        with pytest.raises(FormatError, match=match):
            parse_trials(text)

    def test_trial_file_round_trip(self, tmp_path):
        trials = [Trial(1, "x", "y"), Trial(0, "x", "z")]
        path = tmp_path / "t.txt"
        write_trials(trials, path)
        assert path.read_bytes() == b"1 x y\n0 x z\n"
        assert read_trials(path) == trials

    def test_score_file_six_decimals(self, tmp_path):
        path = tmp_path / "s.txt"
        write_scores([("a", "b", 0.1234567), ("a", "c", -1.0)], path)
        assert path.read_text() == "a b 0.123457\na c -1.000000\n"
        assert read_scores(path) == [("a", "b", 0.123457), ("a", "c", -1.0)]

    def test_score_file_rejects_garbage(self):
        with pytest.raises(FormatError, match="line 1"):
            read_scores(io.BytesIO(b"a b nope\n"))
