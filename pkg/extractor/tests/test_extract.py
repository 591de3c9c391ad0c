import json
import struct

import numpy as np
import numpy.testing as npt
import pytest
from PIL import Image

from embed_extract import (ExtractJob, ReferenceImageEncoder,
                           ReferenceTextEncoder, get_encoder, run_job,
                           resize_to_patch_multiple, write_embeddings)
from embed_extract.cli import main


def make_image(path, size=(30, 20), color=(120, 30, 200)):
    img = Image.new("RGB", size, color)
    img.save(path)
    return path


def image_manifest(tmp_path, n=2):
    lines = ["path"]
    for i in range(n):
        make_image(tmp_path / f"im{i}.png", color=(40 * i % 255, 80, 10 * i % 255))
        lines.append(f"im{i}.png")
    manifest = tmp_path / "images.csv"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


def text_manifest(tmp_path, texts):
    manifest = tmp_path / "texts.csv"
    with open(manifest, "w", newline="") as f:
        f.write("text\n")
        for t in texts:
            f.write('"' + t.replace('"', '""') + '"\n')
    return manifest


class TestResizeRule:
    def test_224_is_untouched(self):
        assert resize_to_patch_multiple(224, 224) == (224, 224)

    def test_nearest_multiple(self):
        assert resize_to_patch_multiple(30, 20) == (28, 14)
        assert resize_to_patch_multiple(22, 100) == (28, 98)

    def test_floor_at_14(self):
        assert resize_to_patch_multiple(3, 5) == (14, 14)

    def test_preprocess_shape_is_multiple_of_14(self):
        enc = ReferenceImageEncoder("ref-image")
        arr = enc.preprocess(Image.new("RGB", (33, 61)))
        assert arr.shape[0] % 14 == 0 and arr.shape[1] % 14 == 0

    def test_224_preprocess_is_identity_resize(self):
        enc = ReferenceImageEncoder("ref-image")
        rng = np.random.default_rng(0)
        raw = rng.integers(0, 256, size=(224, 224, 3), dtype=np.uint8)
        arr = enc.preprocess(Image.fromarray(raw))
        npt.assert_allclose(arr, raw / 255.0)


class TestFormatContract:
    def test_two_rows_header_and_payload(self, tmp_path):
        manifest = image_manifest(tmp_path, n=2)
        out = tmp_path / "img.mmpe"
        job = ExtractJob("image", str(manifest), "ref-image", str(out))
        report = run_job(job)
        raw = out.read_bytes()
        assert raw[:4] == b"MMPE"
        (dim,) = struct.unpack_from("<I", raw, 9)
        (count,) = struct.unpack_from("<Q", raw, 13)
        assert count == report.rows == 2
        header_len = 4 + 4 + 1 + 4 + 8
        for off in (header_len,):
            (nlen,) = struct.unpack_from("<H", raw, off)
            off2 = off + 2 + nlen
            (flen,) = struct.unpack_from("<H", raw, off2)
            payload = len(raw) - (off2 + 2 + flen)
        assert payload == 2 * dim * 4

    def test_loads_through_core_validator(self, tmp_path):
        mmpfn_encoders = pytest.importorskip("mmpfn.encoders")
        manifest = image_manifest(tmp_path, n=3)
        out = tmp_path / "img.mmpe"
        run_job(ExtractJob("image", str(manifest), "ref-image", str(out)))
        eset = mmpfn_encoders.load_embedding_file(str(out))
        assert eset.count == 3
        assert eset.modality == "image"
        assert eset.fingerprint == "ref-image:pre=v1"

    def test_writer_rejects_non_finite(self, tmp_path):
        with pytest.raises(ValueError, match="non-finite"):
            write_embeddings(tmp_path / "bad.mmpe",
                             np.array([[np.nan, 1.0]]), "image", "x")


class TestDeterminism:
    def test_image_rerun_is_byte_identical(self, tmp_path):
        manifest = image_manifest(tmp_path, n=2)
        out1, out2 = tmp_path / "a.mmpe", tmp_path / "b.mmpe"
        run_job(ExtractJob("image", str(manifest), "ref-image", str(out1)))
        run_job(ExtractJob("image", str(manifest), "ref-image", str(out2)))
        assert out1.read_bytes() == out2.read_bytes()
        assert (tmp_path / "a.mmpe.sidecar.json").read_bytes() == \
            (tmp_path / "b.mmpe.sidecar.json").read_bytes()

    def test_text_rerun_is_byte_identical(self, tmp_path):
        manifest = text_manifest(tmp_path, ["hello world", "second row"])
        out1, out2 = tmp_path / "a.mmpe", tmp_path / "b.mmpe"
        run_job(ExtractJob("text", str(manifest), "ref-text", str(out1)))
        run_job(ExtractJob("text", str(manifest), "ref-text", str(out2)))
        assert out1.read_bytes() == out2.read_bytes()

    def test_identical_rows_get_identical_vectors(self, tmp_path):
        mmpfn_encoders = pytest.importorskip("mmpfn.encoders")
        manifest = text_manifest(tmp_path, ["same text", "same text", "other"])
        out = tmp_path / "t.mmpe"
        run_job(ExtractJob("text", str(manifest), "ref-text", str(out)))
        vecs = mmpfn_encoders.load_embedding_file(str(out)).vectors.data
        npt.assert_array_equal(vecs[0], vecs[1])
        assert not np.array_equal(vecs[0], vecs[2])


class TestTextPreprocessing:
    def test_truncation_matches_512_token_prefix(self):
        enc = ReferenceTextEncoder("ref-text")
        words = [f"w{i}" for i in range(10_000)]
        full = enc.encode(" ".join(words))
        prefix = enc.encode(" ".join(words[:512]))
        npt.assert_array_equal(full, prefix)

    def test_513th_token_is_ignored(self):
        enc = ReferenceTextEncoder("ref-text")
        base = " ".join(f"w{i}" for i in range(512))
        npt.assert_array_equal(enc.encode(base),
                               enc.encode(base + " extra"))
        # but the 512th still matters
        assert not np.array_equal(
            enc.encode(base), enc.encode(" ".join(f"w{i}" for i in range(511))))

    def test_out_of_script_characters_removed(self):
        enc = ReferenceTextEncoder("ref-text")
        assert enc.strip_out_of_script("café 中文 ok") == "caf  ok"
        npt.assert_array_equal(enc.encode("hello☃ world"),
                               enc.encode("hello world"))

    def test_empty_text_is_valid_and_flagged(self, tmp_path):
        manifest = text_manifest(tmp_path, ["real text", "", "中文"])
        out = tmp_path / "t.mmpe"
        report = run_job(ExtractJob("text", str(manifest), "ref-text", str(out)))
        assert report.flagged_rows == [1, 2]
        sidecar = json.loads((tmp_path / "t.mmpe.sidecar.json").read_text())
        assert sidecar["flagged_rows"] == [1, 2]
        assert sidecar["rows"] == 3


class TestSidecar:
    def test_manifest_hash_and_rows(self, tmp_path):
        import hashlib

        manifest = image_manifest(tmp_path, n=2)
        out = tmp_path / "img.mmpe"
        run_job(ExtractJob("image", str(manifest), "ref-image", str(out)))
        sidecar = json.loads((tmp_path / "img.mmpe.sidecar.json").read_text())
        assert sidecar["rows"] == 2
        assert sidecar["manifest_sha256"] == \
            hashlib.sha256(manifest.read_bytes()).hexdigest()
        assert sidecar["fingerprint"] == "ref-image:pre=v1"


class TestErrors:
    def test_unreadable_image_aborts_with_row_index(self, tmp_path):
        make_image(tmp_path / "ok.png")
        (tmp_path / "broken.png").write_bytes(b"not an image")
        manifest = tmp_path / "m.csv"
        manifest.write_text("path\nok.png\nbroken.png\n")
        with pytest.raises(RuntimeError, match="row 1"):
            run_job(ExtractJob("image", str(manifest), "ref-image",
                               str(tmp_path / "o.mmpe")))

    def test_unknown_encoder(self, tmp_path):
        manifest = image_manifest(tmp_path, n=1)
        with pytest.raises(KeyError, match="no image encoder"):
            run_job(ExtractJob("image", str(manifest), "dinov2-giant",
                               str(tmp_path / "o.mmpe")))

    def test_missing_column(self, tmp_path):
        manifest = text_manifest(tmp_path, ["x"])
        with pytest.raises(ValueError, match="no column"):
            run_job(ExtractJob("text", str(manifest), "ref-text",
                               str(tmp_path / "o.mmpe"), column="summary"))

    def test_bad_modality_rejected(self):
        with pytest.raises(ValueError, match="modality"):
            ExtractJob("audio", "m.csv", "ref-image", "o.mmpe")


class TestCli:
    def test_roundtrip(self, tmp_path, capsys):
        manifest = text_manifest(tmp_path, ["one two", "three"])
        out = tmp_path / "t.mmpe"
        assert main(["--modality", "text", "--manifest", str(manifest),
                     "--encoder", "ref-text", "--out", str(out)]) == 0
        assert out.exists()
        assert "2 x text" in capsys.readouterr().out

    def test_error_exit_code(self, tmp_path, capsys):
        manifest = text_manifest(tmp_path, ["x"])
        assert main(["--modality", "text", "--manifest", str(manifest),
                     "--encoder", "nope", "--out", str(tmp_path / "o.mmpe")]) == 1
        assert "error:" in capsys.readouterr().err

    def test_custom_column(self, tmp_path):
        manifest = tmp_path / "m.csv"
        manifest.write_text("summary\nfirst row text\nsecond\n")
        out = tmp_path / "t.mmpe"
        assert main(["--modality", "text", "--manifest", str(manifest),
                     "--encoder", "ref-text", "--out", str(out),
                     "--column", "summary"]) == 0
