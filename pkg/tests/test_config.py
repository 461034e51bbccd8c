import pytest

from tenet import config as cfgio
from tenet.errors import ConfigurationError
from tenet.trainer import TrainConfig, toy_config


class TestParse:
    @pytest.mark.parametrize("raw,value", [("3", 3), ("1e-3", 1e-3), ("(0, 5)", (0, 5)),
                                           ("'hanning'", "hanning"), ("hanning", "hanning"),
                                           ("true", True), ("off", False), ("None", None),
                                           ("{'a': 1}", {"a": 1})])
    def test_values(self, raw, value):
        assert cfgio.parse_value(raw) == value

    def test_inline_comments(self, tmp_path):
        (tmp_path / "c.ini").write_text("[train]\nepochs = 4  # short run\n")
        assert cfgio.read_config(tmp_path / "c.ini") == {"train": {"epochs": 4}}

    def test_malformed(self, tmp_path):
        (tmp_path / "c.ini").write_text("epochs = 4\n")
        with pytest.raises(ConfigurationError):
            cfgio.read_config(tmp_path / "c.ini")


class TestTrainConfig:
    def test_round_trip(self, tmp_path):
        cfg = toy_config(epochs=3, seed=7)
        cfg.save(tmp_path / "t.ini")
        back = TrainConfig.from_file(tmp_path / "t.ini")
        assert back == cfg
        assert back.config_hash() == cfg.config_hash()

    def test_hash_tracks_values(self):
        assert toy_config(seed=1).config_hash() != toy_config(seed=2).config_hash()

    def test_partial_file_uses_defaults(self, tmp_path):
        (tmp_path / "t.ini").write_text("[train]\nepochs = 2\n")
        cfg = TrainConfig.from_file(tmp_path / "t.ini")
        assert cfg.train.epochs == 2
        assert cfg.model.dft_size == 512

    @pytest.mark.parametrize("text", ["[trian]\nepochs = 2\n", "[train]\nepoch = 2\n",
                                      "[model]\nnum_heads = 3\n", "[loss]\nalpha = -1\n"])
    def test_rejects(self, tmp_path, text):
        (tmp_path / "t.ini").write_text(text)
        with pytest.raises(ConfigurationError):
            TrainConfig.from_file(tmp_path / "t.ini")

    def test_ablation_variants(self):
        cfg = toy_config()
        assert cfg.with_ablation(time_reversal=False).effective_loss().gamma == 0.0
        assert cfg.effective_loss().gamma == 0.5
        masked = cfg.with_ablation(sample_masking=False)
        assert not masked.effective_augment().sample_masking
        assert masked.effective_augment().time_shifting
