import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rapgs import formats
from rapgs.config import DECLARED_KEYS, RunConfig, load_config, parse_config_text
from rapgs.errors import FeatureFormatError, ValidationError
from rapgs.train import TrainConfig

from _builders import orbit_view

finite32 = st.floats(-1e6, 1e6, width=32, allow_nan=False)


class TestConfig:
    def test_defaults_mirror_training(self):
        cfg = load_config()
        base = TrainConfig()
        for k, v in base.__dict__.items():
            assert getattr(cfg, k) == v

    def test_precedence(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("# comment\nlambda_prune = 0.5\nk = 64\n\nseed = 3  # trailing\n")
        cfg = load_config(path, {"k": 32, "seed": None})
        assert cfg.lambda_prune == 0.5  # file over default
        assert cfg.k == 32  # flag over file
        assert cfg.seed == 3  # unset flag leaves the file value
        assert cfg.lambda_entropy == 0.25  # default

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("lamda_prune = 0.5\n")
        with pytest.raises(ValidationError, match="lamda_prune"):
            load_config(path)

    def test_bad_line(self):
        with pytest.raises(ValidationError, match=":2:"):
            parse_config_text("k = 4\nnonsense\n")

    def test_bad_value(self):
        with pytest.raises(ValidationError):
            parse_config_text("k = four")

    def test_tuple_and_validation(self):
        cfg = load_config(overrides={"background": "1, 1, 1", "ratios": "0.2 0.5"})
        assert cfg.background == (1.0, 1.0, 1.0) and cfg.ratios == (0.2, 0.5)
        with pytest.raises(ValidationError):
            load_config(overrides={"background": "1 1"})
        with pytest.raises(ValidationError):
            load_config(overrides={"threads": 0})

    def test_json_round_trip(self):
        cfg = RunConfig()
        doc = json.loads(json.dumps(cfg.to_json()))
        assert set(doc) == set(DECLARED_KEYS)
        assert load_config(overrides={k: (" ".join(map(str, v)) if isinstance(v, list) else v)
                                      for k, v in doc.items()}) == cfg


class TestBinaryFormats:
    def test_feature_header_layout(self, tmp_path):
        f = np.arange(30, dtype=np.float32).reshape(2, 15)
        p = tmp_path / "f.rapf"
        formats.write_features(p, f)
        raw = p.read_bytes()
        assert raw[:4] == b"RAPF"
        assert struct.unpack("<IQ", raw[4:16]) == (1, 2)
        assert len(raw) == 16 + 2 * 15 * 4
        assert np.frombuffer(raw[16:], "<f4")[17] == 17.0

    @settings(max_examples=30, deadline=None)
    @given(arrays(np.float32, st.tuples(st.integers(0, 20), st.just(15)), elements=finite32))
    def test_feature_round_trip(self, f):
        blob = formats.feature_bytes(f)
        assert formats.feature_bytes(np.frombuffer(blob[16:], "<f4").reshape(-1, 15)) == blob

    def test_feature_file_round_trip(self, tmp_path):
        f = np.random.default_rng(0).random((7, 15)).astype(np.float32)
        formats.write_features(tmp_path / "x", f)
        assert formats.read_features(tmp_path / "x").tobytes() == f.tobytes()

    @settings(max_examples=30, deadline=None)
    @given(arrays(np.float32, st.integers(0, 50), elements=st.floats(0, 1, width=32)))
    def test_score_round_trip(self, s):
        import tempfile
        from pathlib import Path

        with tempfile.TemporaryDirectory() as d:
            p = Path(d) / "s.raps"
            formats.write_scores(p, s)
            assert p.read_bytes()[:4] == b"RAPS"
            assert formats.read_scores(p).tobytes() == s.tobytes()

    def test_raw_image_round_trip(self, tmp_path):
        img = np.random.default_rng(1).random((5, 7, 3)).astype(np.float32)
        p = tmp_path / "i.rapi"
        formats.write_raw_image(p, img)
        raw = p.read_bytes()
        assert raw[:4] == b"RAPI" and struct.unpack("<II", raw[4:12]) == (5, 7)
        np.testing.assert_array_equal(formats.read_image(p), img.astype(np.float64))

    @pytest.mark.parametrize("reader,writer,value", [
        (formats.read_features, formats.write_scores, np.zeros(3)),
        (formats.read_scores, formats.write_features, np.zeros((1, 15))),
    ])
    def test_wrong_magic(self, tmp_path, reader, writer, value):
        writer(tmp_path / "x", value)
        with pytest.raises(FeatureFormatError, match="magic"):
            reader(tmp_path / "x")

    def test_truncated(self, tmp_path):
        formats.write_features(tmp_path / "x", np.zeros((3, 15)))
        data = (tmp_path / "x").read_bytes()
        (tmp_path / "y").write_bytes(data[:-4])
        (tmp_path / "z").write_bytes(data[:10])
        for name in "yz":
            with pytest.raises(FeatureFormatError):
                formats.read_features(tmp_path / name)

    def test_bad_version(self, tmp_path):
        (tmp_path / "x").write_bytes(struct.pack("<4sIQ", b"RAPS", 9, 0))
        with pytest.raises(FeatureFormatError, match="version"):
            formats.read_scores(tmp_path / "x")

    def test_feature_width_checked(self):
        with pytest.raises(ValidationError):
            formats.feature_bytes(np.zeros((2, 14)))

    def test_png_round_trip(self, tmp_path):
        img = np.random.default_rng(2).integers(0, 256, (6, 4, 3)) / 255.0
        formats.write_png(tmp_path / "a.png", img)
        np.testing.assert_allclose(formats.read_image(tmp_path / "a.png"), img, atol=1e-12)


class TestCamerasAndManifest:
    def test_camera_round_trip(self, tmp_path):
        img = np.random.default_rng(3).random((16, 16, 3)).astype(np.float32)
        view = orbit_view(16, eye=(1.0, -2.0, 1.5), name="cam7")
        formats.write_raw_image(tmp_path / "cam7.rapi", img)
        formats.write_cameras(tmp_path / "cams.json", [view], ["cam7.rapi"])
        (back,) = formats.read_cameras(tmp_path / "cams.json", tmp_path)
        assert back.name == "cam7" and (back.width, back.height) == (16, 16)
        np.testing.assert_array_equal(back.world_to_camera, view.world_to_camera)
        np.testing.assert_array_equal(back.gt_image, img)
        (bare,) = formats.read_cameras(tmp_path / "cams.json")
        assert bare.gt_image is None

    def test_camera_errors(self, tmp_path):
        (tmp_path / "a.json").write_text("{not json")
        (tmp_path / "b.json").write_text(json.dumps([{"width": 4}]))
        for name in ("a.json", "b.json"):
            with pytest.raises(ValidationError):
                formats.read_cameras(tmp_path / name)

    def test_manifest(self, tmp_path):
        (tmp_path / "m.txt").write_text("# scenes\na.ply cams.json imgs\n\n/abs/b.ply c.json d\n")
        entries = formats.read_manifest(tmp_path / "m.txt")
        assert entries[0] == (tmp_path / "a.ply", tmp_path / "cams.json", tmp_path / "imgs")
        assert str(entries[1][0]) == "/abs/b.ply"

    @pytest.mark.parametrize("text", ["", "# only comments\n", "a.ply cams.json\n"])
    def test_manifest_errors(self, tmp_path, text):
        (tmp_path / "m.txt").write_text(text)
        with pytest.raises(ValidationError):
            formats.read_manifest(tmp_path / "m.txt")


class TestTablesAndProvenance:
    def test_histogram_csv(self):
        text = formats.histogram_csv([3, 0, 7])
        assert text.splitlines()[0] == "bin,lo,hi,count"
        np.testing.assert_array_equal(formats.read_histogram_csv(text), [3, 0, 7])

    def test_provenance(self, tmp_path):
        src = tmp_path / "in.bin"
        src.write_bytes(b"abc")
        out = tmp_path / "out.raps"
        out.write_bytes(b"")
        side = formats.write_provenance(out, {"scene": src, "weights": None}, {"k": 8}, {"method": "rap"})
        doc = json.loads(side.read_text())
        assert side.name == "out.raps.prov.json"
        assert doc["inputs"]["scene"]["sha256"] == (
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        )
        assert "weights" not in doc["inputs"]
        assert doc["config"] == {"k": 8} and doc["method"] == "rap" and doc["tool"] == "rapgs"
