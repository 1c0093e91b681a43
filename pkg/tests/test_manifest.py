"""Unit tests for run manifests."""

import json

import pytest

from hazmix.manifest import RunManifest, sha256_file


class TestSha256:
    def test_known_digest(self, tmp_path):
        f = tmp_path / "x.txt"
        f.write_text("abc")
        assert sha256_file(f) == (
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        )


class TestRunManifest:
    def test_versions_autofilled(self):
        m = RunManifest(command="fit", config={"iters": 10}, seed=42)
        assert set(m.versions) >= {"hazmix", "python", "numpy", "scipy"}

    def test_env_overrides_captured(self, monkeypatch):
        monkeypatch.setenv("HAZMIX_SEED", "99")
        m = RunManifest(command="fit", config={}, seed=99)
        assert m.env_overrides == {"HAZMIX_SEED": "99"}

    def test_write_includes_inputs_and_outputs(self, tmp_path):
        data = tmp_path / "in.csv"
        data.write_text("a,b\n1,2\n")
        m = RunManifest(command="ingest", config={}, seed=None)
        m.add_input(data)
        m.add_output(tmp_path / "out.json")
        dest = tmp_path / "manifest.json"
        m.write(dest)
        obj = json.loads(dest.read_text())
        assert obj["command"] == "ingest"
        assert obj["inputs"][str(data)] == sha256_file(data)
        assert obj["outputs"] == [str(tmp_path / "out.json")]
        assert "written_at" in obj

    def test_missing_input_raises(self, tmp_path):
        m = RunManifest(command="fit", config={}, seed=1)
        with pytest.raises(FileNotFoundError):
            m.add_input(tmp_path / "ghost.csv")
