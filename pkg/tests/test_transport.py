"""Frame codec, fragmentation arithmetic, ARQ behavior, simulator determinism."""

import math
from random import Random

import pytest
from hypothesis import given, settings, strategies as st

from tinyssi.transport import (
    DeliveryError,
    Frame,
    FrameError,
    HEADER_LEN,
    Messenger,
    PROFILES,
    RETRY_LIMIT,
    TransportError,
    fragment,
    make_ack,
    make_link,
    reassemble,
    send_reliable,
)


class TestFrameCodec:
    def test_header_layout_is_bit_exact(self):
        frame = Frame(flags=0x02, message_id=0x1234, frag_index=2, frag_count=3,
                      payload=b"xyz")
        raw = frame.encode()
        assert raw[0] == 0xD1
        assert raw[1] == 0x02
        assert raw[2:4] == b"\x12\x34"
        assert raw[4:6] == b"\x00\x02"
        assert raw[6:8] == b"\x00\x03"
        assert raw[8:] == b"xyz"
        assert Frame.decode(raw) == frame

    def test_bad_magic_rejected(self):
        raw = bytearray(Frame(0, 1, 0, 1, b"").encode())
        raw[0] = 0x55
        with pytest.raises(FrameError):
            Frame.decode(bytes(raw))

    def test_short_frame_rejected(self):
        with pytest.raises(FrameError):
            Frame.decode(b"\xd1\x00\x00")

    def test_ack_frame_carries_acknowledged_index(self):
        ack = make_ack(message_id=7, frag_index=513)
        assert ack.is_ack
        assert ack.payload == (513).to_bytes(2, "big")
        decoded = Frame.decode(ack.encode())
        assert decoded.is_ack
        assert int.from_bytes(decoded.payload, "big") == 513


class TestFragment:
    def test_500_bytes_over_lora_is_three_frames(self):
        frames = fragment(bytes(500), mtu=222, message_id=1)
        assert len(frames) == 3
        assert [len(f.payload) for f in frames] == [214, 214, 72]
        assert frames[-1].is_last and not frames[0].is_last

    def test_500_bytes_over_ble_is_three_frames(self):
        frames = fragment(bytes(500), mtu=244, message_id=1)
        assert len(frames) == 3  # capacity 236, ceil(500/236) == 3

    def test_exact_capacity_single_frame(self):
        frames = fragment(bytes(214), mtu=222, message_id=1)
        assert len(frames) == 1
        assert frames[0].is_last

    def test_one_byte_over_ble_single_frame(self):
        assert len(fragment(b"x", mtu=244, message_id=1)) == 1

    def test_mtu_too_small_rejected(self):
        with pytest.raises(TransportError):
            fragment(b"data", mtu=8, message_id=1)

    def test_empty_message_rejected(self):
        with pytest.raises(TransportError):
            fragment(b"", mtu=222, message_id=1)

    def test_fragment_count_overflow_rejected(self):
        with pytest.raises(TransportError):
            fragment(bytes(0x10000), mtu=9, message_id=1)  # 65536 one-byte chunks

    def test_decode_rejects_index_beyond_count(self):
        raw = bytearray(Frame(0, 1, 0, 2, b"a").encode())
        raw[4:6] = (5).to_bytes(2, "big")  # frag_index 5 of frag_count 2
        with pytest.raises(FrameError):
            Frame.decode(bytes(raw))

    def test_count_formula_exact(self):
        rng = Random(5)
        for _ in range(300):
            mtu = rng.choice([64, 222, 244, 1500])
            size = rng.randrange(1, 10_001)
            frames = fragment(bytes(size), mtu, 1)
            assert len(frames) == math.ceil(size / (mtu - HEADER_LEN))
            assert all(len(f.encode()) <= mtu for f in frames)


class TestReassemble:
    def test_shuffled_frames_reassemble(self):
        message = bytes(range(256)) * 4
        frames = fragment(message, mtu=64, message_id=9)
        Random(1).shuffle(frames)
        assert reassemble(frames) == message

    def test_missing_middle_fragment_incomplete(self):
        frames = fragment(bytes(600), mtu=222, message_id=1)
        assert reassemble([frames[0], frames[2]]) is None

    def test_duplicates_are_idempotent(self):
        message = b"hello world, fragmented"
        frames = fragment(message, mtu=16, message_id=1)
        assert reassemble(frames + frames) == message

    def test_inconsistent_frag_count_rejected(self):
        a = Frame(0, 1, 0, 2, b"aa")
        b = Frame(0, 1, 1, 3, b"bb")
        with pytest.raises(FrameError):
            reassemble([a, b])

    def test_mixed_message_ids_rejected(self):
        a = Frame(0, 1, 0, 2, b"aa")
        b = Frame(0, 2, 1, 2, b"bb")
        with pytest.raises(FrameError):
            reassemble([a, b])

    @settings(max_examples=200, deadline=None)
    @given(
        message=st.binary(min_size=1, max_size=4000),
        mtu=st.sampled_from([64, 222, 244, 1500]),
        shuffle_seed=st.integers(min_value=0, max_value=2**32 - 1),
    )
    def test_roundtrip_property(self, message, mtu, shuffle_seed):
        frames = fragment(message, mtu, message_id=3)
        Random(shuffle_seed).shuffle(frames)
        assert reassemble(frames) == message

    def test_roundtrip_exhaustive_lengths(self):
        rng = Random(11)
        cases = 0
        for mtu in (64, 222, 244, 1500):
            for _ in range(250):
                message = rng.randbytes(rng.randrange(1, 2500))
                frames = fragment(message, mtu, 1)
                rng.shuffle(frames)
                assert reassemble(frames) == message
                cases += 1
        assert cases == 1000

    def test_roundtrip_every_length_to_10k(self):
        payload = Random(13).randbytes(10_000)
        for mtu in (64, 222, 244, 1500):
            for size in range(1, 10_001):
                assert reassemble(fragment(payload[:size], mtu, 1)) == payload[:size]


class TestProfiles:
    def test_lora_mtu(self):
        assert PROFILES["lora"].mtu == 222

    def test_ble_mtu(self):
        assert PROFILES["ble"].mtu == 244

    def test_lossless_profile(self):
        profile = PROFILES["lossless"]
        assert profile.mtu == 65535
        assert profile.loss_probability == 0.0

    def test_unknown_profile_rejected(self):
        with pytest.raises(TransportError):
            make_link("zigbee")


class TestReliableDelivery:
    def test_lossless_no_retransmissions(self):
        link = make_link("lora", seed=1)
        report = send_reliable(link, ("A", "B"), bytes(500))
        assert report.retransmissions == 0
        assert report.fragments == 3
        assert report.frames_sent == 3

    def test_message_arrives_intact(self):
        link = make_link("ble", seed=2)
        sender = Messenger(link, "A")
        receiver = Messenger(link, "B")
        message = Random(3).randbytes(700)
        sender.send(message)
        assert receiver.receive() == message

    def test_total_loss_fails_after_retry_budget(self):
        link = make_link("lora", loss=1.0, seed=1)
        sender = Messenger(link, "A")
        Messenger(link, "B")
        with pytest.raises(DeliveryError):
            sender.send(b"doomed")
        data_frames = [e for e in link.trace if e.kind == "data"]
        assert len(data_frames) == 1 + RETRY_LIMIT
        assert all(e.frag_index == 0 for e in data_frames)

    def test_lossy_link_deterministic_reports(self):
        def run():
            link = make_link("lora", loss=0.1, seed=42)
            sender = Messenger(link, "A")
            receiver = Messenger(link, "B")
            report = sender.send(bytes(1000))
            return report, link.trace_lines(), receiver.receive()

        first_report, first_trace, first_msg = run()
        second_report, second_trace, second_msg = run()
        assert first_report == second_report
        assert first_trace == second_trace
        assert first_msg == second_msg == bytes(1000)

    def test_lossy_link_eventually_delivers(self):
        link = make_link("lora", loss=0.3, seed=7)
        sender = Messenger(link, "A")
        receiver = Messenger(link, "B")
        report = sender.send(bytes(600))
        assert receiver.receive() == bytes(600)
        assert report.retransmissions > 0

    def test_reordering_survived(self):
        link = make_link("ble", reorder=0.5, seed=5)
        sender = Messenger(link, "A")
        receiver = Messenger(link, "B")
        message = Random(9).randbytes(2000)
        sender.send(message)
        assert receiver.receive() == message

    def test_no_frame_exceeds_mtu(self):
        link = make_link("lora", loss=0.2, seed=12)
        sender = Messenger(link, "A")
        Messenger(link, "B")
        sender.send(bytes(3000))
        assert all(entry.length <= 222 for entry in link.trace)

    def test_oversized_frame_rejected_at_link_boundary(self):
        link = make_link("lora")
        with pytest.raises(TransportError):
            link.transmit("A", Frame(0, 1, 0, 1, bytes(500)))

    def test_duplicate_data_is_reacked_not_redelivered(self):
        link = make_link("ble", seed=4)
        sender = Messenger(link, "A")
        receiver = Messenger(link, "B")
        frames = fragment(b"only once", link.profile.mtu, 1)
        for _ in range(3):
            link.transmit("A", frames[0])
            for _ in range(4):
                link.tick()
        assert receiver.receive() == b"only once"
        assert receiver.receive() is None
        acks = [e for e in link.trace if e.kind == "ack"]
        assert len(acks) == 3


class TestCodecHook:
    def test_pluggable_codec_roundtrips(self):
        import zlib

        from tinyssi.transport import Codec

        class Deflate(Codec):
            def compress(self, data):
                return zlib.compress(data, 6)

            def decompress(self, data):
                return zlib.decompress(data)

        link = make_link("lora", seed=8)
        sender = Messenger(link, "A", codec=Deflate())
        receiver = Messenger(link, "B", codec=Deflate())
        message = b"A" * 2000  # compresses well below one LoRa frame
        report = sender.send(message)
        assert receiver.receive() == message
        assert report.fragments == 1

    def test_identity_codec_is_default(self):
        link = make_link("lora", seed=8)
        sender = Messenger(link, "A")
        receiver = Messenger(link, "B")
        sender.send(b"A" * 2000)
        assert receiver.receive() == b"A" * 2000
        assert len([e for e in link.trace if e.kind == "data"]) == 10


class TestTrace:
    def test_trace_line_format(self):
        link = make_link("lora", a="cam", b="lock", seed=1)
        sender = Messenger(link, "cam")
        Messenger(link, "lock")
        sender.send(bytes(300))
        line = link.trace_lines()[0]
        assert line.startswith("t=0 dir=cam→lock type=data id=1 idx=0/2 len=222 dropped=false")

    def test_bytes_on_wire_matches_trace_sum(self):
        link = make_link("lora", loss=0.15, seed=3)
        sender = Messenger(link, "A")
        Messenger(link, "B")
        sender.send(bytes(900))
        assert link.bytes_on_wire() == sum(e.length for e in link.trace)
