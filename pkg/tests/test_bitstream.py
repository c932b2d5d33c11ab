"""Container serialization: round trips, checksums, mutation fuzzing, bpp."""

import numpy as np
import pytest

from vgc import bitstream, codec
from vgc.bitstream import StreamHeader, bpp, bpp_report, read_stream, write_stream
from vgc.errors import ConfigMismatchError, DecodeError
from vgc.network import CodecConfig, build_codec
from vgc.quantizer import QuantSpec
from vgc.residual import ResidualHeader

from helpers import synthetic_image


def make_header(alpha_c=2, bits=4, enhancement=False, h=8, w=8):
    specs = [
        QuantSpec(bits, 0.125, 3, -0.375, (2**bits - 1) * 0.125 - 0.375)
        for _ in range(alpha_c)
    ]
    enh = ResidualHeader(-0.5, 0.5, 20) if enhancement else None
    return StreamHeader(
        height=h, width=w, pad_h=0, pad_w=0, bits=bits, alpha_c=alpha_c,
        config_hash=bytes(range(16)), specs=specs, enhancement=enh,
    )


class TestHeaderRoundTrip:
    def test_minimal_stream(self):
        h = make_header()
        data = write_stream(h, [b"abc", b"defgh"])
        back, payloads, enh = read_stream(data)
        assert back == h
        assert payloads == [b"abc", b"defgh"]
        assert enh is None

    def test_with_enhancement(self):
        h = make_header(enhancement=True)
        data = write_stream(h, [b"", b"xy"], b"resid")
        back, payloads, enh = read_stream(data)
        assert back.enhancement == h.enhancement
        assert enh == b"resid"

    def test_deterministic_bytes(self):
        h = make_header()
        assert write_stream(h, [b"a", b"b"]) == write_stream(h, [b"a", b"b"])

    def test_size_accounting(self):
        h = make_header(alpha_c=3)
        payloads = [b"a" * 5, b"b" * 9, b""]
        data = write_stream(h, payloads, None)
        header_len = len(write_stream(h, [b"", b"", b""])) - 3 * 8
        assert len(data) == header_len + sum(len(p) + 8 for p in payloads)

    def test_payload_count_checked(self):
        with pytest.raises(ValueError, match="payloads"):
            write_stream(make_header(alpha_c=2), [b"only-one"])

    def test_enhancement_pairing_checked(self):
        with pytest.raises(ValueError, match="pair"):
            write_stream(make_header(enhancement=True), [b"", b""], None)


class TestReadErrors:
    def test_bad_magic(self):
        data = write_stream(make_header(), [b"", b""])
        with pytest.raises(DecodeError, match="magic"):
            read_stream(b"XXXX" + data[4:])

    def test_bad_version(self):
        data = bytearray(write_stream(make_header(), [b"", b""]))
        data[4] = 99
        with pytest.raises(DecodeError, match="version"):
            read_stream(bytes(data))

    def test_truncation_reports_offset(self):
        data = write_stream(make_header(), [b"payload", b"more"])
        with pytest.raises(DecodeError, match="offset") as e:
            read_stream(data[:-3])
        assert e.value.offset is not None

    def test_trailing_garbage_rejected(self):
        data = write_stream(make_header(), [b"p", b"q"])
        with pytest.raises(DecodeError, match="trailing"):
            read_stream(data + b"\x00")

    def test_every_truncation_length_fails_cleanly(self):
        data = write_stream(make_header(enhancement=True), [b"abc", b"de"], b"r")
        for n in range(len(data)):
            with pytest.raises(DecodeError):
                read_stream(data[:n])


class TestMutationFuzz:
    def test_ten_thousand_mutations_never_silently_misdecode(self):
        rng = np.random.default_rng(0)
        h = make_header(alpha_c=3, enhancement=True)
        data = write_stream(h, [b"abcdef", bytes(range(32)), b""], b"residual!")
        n = len(data)
        detected = 0
        for trial in range(10_000):
            mutated = bytearray(data)
            kind = trial % 4
            if kind == 0:  # flip one byte
                i = int(rng.integers(n))
                mutated[i] ^= int(rng.integers(1, 256))
            elif kind == 1:  # corrupt a short range
                i = int(rng.integers(n - 4))
                for j in range(4):
                    mutated[i + j] ^= int(rng.integers(1, 256))
            elif kind == 2:  # truncate
                mutated = mutated[: int(rng.integers(n))]
            else:  # append garbage
                mutated = mutated + bytes(rng.integers(0, 256, size=3, dtype=np.uint8))
            try:
                read_stream(bytes(mutated))
            except DecodeError:
                detected += 1
                continue
            raise AssertionError(f"mutation {trial} decoded silently")
        assert detected == 10_000


class TestStructuredFuzz:
    def test_random_valid_streams_round_trip(self):
        rng = np.random.default_rng(17)
        for trial in range(50):
            alpha_c = int(rng.integers(1, 9))
            bits = int(rng.integers(1, 9))
            qmax = 2**bits - 1
            specs = []
            for _ in range(alpha_c):
                if rng.random() < 0.2:
                    v = float(np.float32(rng.normal()))
                    specs.append(QuantSpec(bits, 0.0, 0, v, v))
                else:
                    lo = float(np.float32(rng.normal() - 2))
                    hi = float(np.float32(lo + rng.uniform(0.1, 5)))
                    specs.append(QuantSpec(
                        bits, (hi - lo) / qmax, int(rng.integers(0, qmax + 1)),
                        lo, hi,
                    ))
            enh = None
            if rng.random() < 0.5:
                enh = ResidualHeader(-1.0, 1.0, int(rng.integers(1, 52)))
            header = StreamHeader(
                height=int(rng.integers(1, 4000)),
                width=int(rng.integers(1, 4000)),
                pad_h=int(rng.integers(0, 8)), pad_w=int(rng.integers(0, 8)),
                bits=bits, alpha_c=alpha_c,
                config_hash=bytes(rng.integers(0, 256, 16, dtype=np.uint8)),
                specs=specs, enhancement=enh,
            )
            payloads = [
                bytes(rng.integers(0, 256, int(rng.integers(0, 200)),
                                   dtype=np.uint8))
                for _ in range(alpha_c)
            ]
            enh_payload = None
            if enh is not None:
                enh_payload = bytes(
                    rng.integers(0, 256, int(rng.integers(0, 500)),
                                 dtype=np.uint8)
                )
            data = write_stream(header, payloads, enh_payload)
            back, back_payloads, back_enh = read_stream(data)
            assert back == header
            assert back_payloads == payloads
            assert back_enh == enh_payload
            # rewrite of the parsed stream is byte-identical
            assert write_stream(back, back_payloads, back_enh) == data


class TestBpp:
    def test_arithmetic(self):
        assert bpp(b"\x00" * 1000, 100, 100) == pytest.approx(0.8)

    def test_split_sums_exactly(self):
        h = make_header(enhancement=True, h=10, w=10)
        data = write_stream(h, [b"abc", b"defg"], b"res" * 10)
        rep = bpp_report(data, 10, 10)
        assert rep["bpp_base"] + rep["bpp_enhancement"] == pytest.approx(rep["bpp"], abs=1e-12)
        assert rep["bpp_enhancement"] == pytest.approx(8.0 * (30 + 8) / 100)

    def test_no_enhancement_share_zero(self):
        data = write_stream(make_header(h=10, w=10), [b"abc", b"defg"])
        rep = bpp_report(data, 10, 10)
        assert rep["bpp_enhancement"] == 0.0
        assert rep["base_fraction"] == 1.0


@pytest.fixture(scope="module")
def tiny_codec():
    cfg = CodecConfig(alpha_c=4, hidden_width=4)
    return build_codec(cfg, seed=5)


class TestCodecPipeline:
    def test_round_trip_preserves_extents(self, tiny_codec):
        enc, dec = tiny_codec
        img = synthetic_image(0, 21, 37)  # not multiples of 8
        data = codec.encode_image(img, enc, dec, bits=4, qp=15)
        out = codec.decode_image(data, dec)
        assert out.shape == img.shape
        assert out.dtype == np.uint8

    def test_encode_deterministic(self, tiny_codec):
        enc, dec = tiny_codec
        img = synthetic_image(1, 16, 16)
        a = codec.encode_image(img, enc, dec, bits=3, qp=30)
        b = codec.encode_image(img, enc, dec, bits=3, qp=30)
        assert a == b

    def test_decode_deterministic(self, tiny_codec):
        enc, dec = tiny_codec
        img = synthetic_image(2, 24, 16)
        data = codec.encode_image(img, enc, dec, bits=5, qp=20)
        np.testing.assert_array_equal(
            codec.decode_image(data, dec), codec.decode_image(data, dec)
        )

    def test_no_enhancement_stream(self, tiny_codec):
        enc, dec = tiny_codec
        img = synthetic_image(3, 16, 16)
        data = codec.encode_image(img, enc, dec, bits=2, with_enhancement=False)
        header, _, enh = read_stream(data)
        assert header.enhancement is None and enh is None
        assert codec.decode_image(data, dec).shape == img.shape

    def test_config_mismatch_refused_with_hashes(self, tiny_codec):
        enc, dec = tiny_codec
        img = synthetic_image(4, 16, 16)
        data = codec.encode_image(img, enc, dec, bits=4, qp=25)
        _, other = build_codec(CodecConfig(alpha_c=4, hidden_width=8), seed=5)
        with pytest.raises(ConfigMismatchError) as e:
            codec.decode_image(data, other)
        assert other.config.digest().hex() in str(e.value)

    def test_rejects_tiny_images(self, tiny_codec):
        enc, dec = tiny_codec
        with pytest.raises(ValueError, match="at least"):
            codec.encode_image(np.zeros((4, 4, 3), np.uint8), enc, dec, bits=4)

    def test_encoder_and_decoder_dequantize_identically(self, tiny_codec):
        # the float32 extrema in the header are the single source of truth:
        # both sides must rebuild the exact same dequantized code map
        from vgc.entropy import decode_plane
        from vgc.quantizer import (
            QuantizedChannel,
            dequantize,
            derive_spec,
            quantize_deterministic,
        )

        enc, dec = tiny_codec
        img = synthetic_image(6, 24, 24)
        data = codec.encode_image(img, enc, dec, bits=6, with_enhancement=False)
        header, payloads, _ = read_stream(data)

        from vgc.images import to_unit

        x = to_unit(img, dtype=enc.dtype)[None]
        code = enc.forward(x)[0]
        for i, payload in enumerate(payloads):
            spec_enc = derive_spec(code[i], 6)
            deq_enc = dequantize(quantize_deterministic(code[i], spec_enc))
            plane = decode_plane(payload, code.shape[2], code.shape[1], 6)
            deq_dec = dequantize(
                QuantizedChannel(plane.symbols.astype(np.uint8), header.specs[i])
            )
            np.testing.assert_array_equal(deq_enc, deq_dec)

    def test_enhancement_reduces_error_at_fine_qp(self, tiny_codec):
        enc, dec = tiny_codec
        img = synthetic_image(5, 32, 32)
        coarse = codec.decode_image(
            codec.encode_image(img, enc, dec, bits=4, with_enhancement=False), dec
        )
        fine = codec.decode_image(
            codec.encode_image(img, enc, dec, bits=4, qp=2), dec
        )
        err_base = ((coarse.astype(float) - img) ** 2).mean()
        err_enh = ((fine.astype(float) - img) ** 2).mean()
        assert err_enh < err_base
