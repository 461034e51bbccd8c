import json

import numpy as np
import pytest

from tenet import cli
from tenet.data import read_manifest, read_wav, write_wav
from tenet.dsp import Waveform
from tenet.trainer import RunConfig, TrainConfig
from tenet.verify import tiny_model_config

SYNTH = """[synth]
duration_s = 0.3
snr_list_db = (0, 5)
noise_source = ("white", "pink")
splits = {"train": 4, "val": 2, "test": 2}
"""


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "synth.ini").write_text(SYNTH)
    assert cli.main(["synth-data", "--spec", str(root / "synth.ini"), "--out",
                     str(root / "data")]) == 0
    return root


@pytest.fixture(scope="module")
def trained(dataset):
    cfg = TrainConfig(model=tiny_model_config(),
                      train=RunConfig(batch_size=2, crop_len_s=0.25, epochs=1, encoder_width=8))
    cfg.save(dataset / "train.ini")
    data = dataset / "data"
    code = cli.main(["train", "--config", str(dataset / "train.ini"),
                     "--train", str(data / "train" / "manifest.csv"),
                     "--val", str(data / "val" / "manifest.csv"), "--out", str(dataset / "run")])
    assert code == 0
    return dataset


class TestSynthData:
    def test_layout(self, dataset):
        m = read_manifest(dataset / "data" / "train" / "manifest.csv")
        assert len(m) == 4 and not m.missing()
        assert read_wav(m.resolve(m.rows[0][1])).sample_rate == 16000

    def test_seed_override_changes_output(self, dataset, tmp_path):
        args = ["synth-data", "--spec", str(dataset / "synth.ini")]
        assert cli.main(args + ["--out", str(tmp_path / "a"), "--seed", "5"]) == 0
        a = (tmp_path / "a" / "test" / "noisy" / "test_00000.wav").read_bytes()
        b = (dataset / "data" / "test" / "noisy" / "test_00000.wav").read_bytes()
        assert a != b

    def test_bad_spec_is_usage_error(self, tmp_path):
        (tmp_path / "s.ini").write_text("[synth]\nduration = 1\n")
        assert cli.main(["synth-data", "--spec", str(tmp_path / "s.ini"),
                         "--out", str(tmp_path / "o")]) == 2


class TestPipeline:
    def test_run_dir(self, trained):
        run = trained / "run"
        for name in ("best.tnt", "runlog.jsonl", "config.ini"):
            assert (run / name).is_file()
        record = json.loads((run / "runlog.jsonl").read_text().splitlines()[0])
        assert record["epoch"] == 0

    def test_enhance_and_evaluate(self, trained, capsys):
        data = trained / "data" / "test"
        assert cli.main(["enhance", "--ckpt", str(trained / "run" / "best.tnt"),
                         "--in", str(data / "noisy"), "--out", str(trained / "enh")]) == 0
        out = read_wav(trained / "enh" / "test_00000.wav")
        assert len(out) == len(read_wav(data / "noisy" / "test_00000.wav"))
        assert cli.main(["evaluate", "--manifest", str(data / "manifest.csv"),
                         "--enhanced", str(trained / "enh"), "--json",
                         str(trained / "report.json")]) == 0
        assert "mean" in capsys.readouterr().out
        assert len(json.loads((trained / "report.json").read_text())["items"]) == 2

    def test_enhance_single_file(self, trained, tmp_path):
        src = tmp_path / "x.wav"
        write_wav(src, Waveform(0.1 * np.random.default_rng(0).standard_normal(5000)))
        assert cli.main(["enhance", "--ckpt", str(trained / "run" / "best.tnt"),
                         "--in", str(src), "--out", str(tmp_path / "y.wav")]) == 0
        assert len(read_wav(tmp_path / "y.wav")) == 5000


class TestExitCodes:
    def test_missing_input_is_io(self, tmp_path):
        assert cli.main(["enhance", "--ckpt", str(tmp_path / "none.tnt"), "--in",
                         str(tmp_path / "nope.wav"), "--out", str(tmp_path / "o.wav")]) == 3

    def test_bad_checkpoint_is_io(self, tmp_path):
        (tmp_path / "bad.tnt").write_bytes(b"junk")
        write_wav(tmp_path / "x.wav", Waveform(np.zeros(1000)))
        assert cli.main(["enhance", "--ckpt", str(tmp_path / "bad.tnt"), "--in",
                         str(tmp_path / "x.wav"), "--out", str(tmp_path / "o.wav")]) == 3

    def test_usage(self):
        assert cli.main(["train", "--config"]) == 2
        assert cli.main(["frobnicate"]) == 2

    def test_config_error_is_usage(self, tmp_path):
        (tmp_path / "c.ini").write_text("[bogus]\n")
        (tmp_path / "m.csv").write_text("id,noisy_path,clean_path\n")
        assert cli.main(["train", "--config", str(tmp_path / "c.ini"), "--train",
                         str(tmp_path / "m.csv"), "--val", str(tmp_path / "m.csv"),
                         "--out", str(tmp_path / "r")]) == 2

    def test_verify(self, capsys):
        assert cli.main(["verify", "--no-gradients"]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert all(line.startswith("[PASS]") for line in lines[:-1])
        assert lines[-1].endswith("checks passed")

    def test_verify_with_wav(self, tmp_path):
        write_wav(tmp_path / "s.wav", Waveform(0.2 * np.random.default_rng(1).standard_normal(8000)))
        assert cli.main(["verify", "--no-gradients", "--wav", str(tmp_path / "s.wav")]) == 0
