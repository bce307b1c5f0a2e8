import pytest

from dynpred.config import RunConfig, format_config, load_config, parse_config, preset
from dynpred.encoder import EncoderConfig
from dynpred.errors import ConfigurationError


def test_empty_config_is_defaults():
    cfg = parse_config("")
    assert cfg == RunConfig()
    assert (cfg.lr, cfg.momentum, cfg.beta, cfg.batch) == (0.01, 0.0, 0.99, 16)


def test_format_parse_round_trip(tmp_path):
    cfg = RunConfig(task="gray-scott", codebank="512x128", use_local=False, decoder_channels="8,8,4", lr=0.5)
    path = tmp_path / "c.txt"
    path.write_text(format_config(cfg))
    assert load_config(path) == cfg


def test_parse_comments_and_types():
    cfg = parse_config("# header\nsize = B   # four blocks\nuse_codebank = no\nepochs=3\n")
    assert cfg.size == "B" and cfg.use_codebank is False and cfg.epochs == 3
    assert cfg.model_config().use_codebank is False


@pytest.mark.parametrize("text,line", [
    ("nope = 1", 1), ("size = S\nsize = B", 2), ("\nepochs = many", 2), ("use_local = maybe", 1),
    ("just words", 1),
])
def test_parse_errors_carry_line(text, line):
    with pytest.raises(ConfigurationError, match=f"line {line}"):
        parse_config(text)


@pytest.mark.parametrize("text", ["size = XL", "codebank = 64x8", "task = mnist", "decoder_depth = 9",
                                  "seq_len = 5", "lr = -1", "decoder_channels = 4,x,4"])
def test_invalid_values(text):
    with pytest.raises(ConfigurationError):
        parse_config(text).model_config()


def test_digest_tracks_architecture_only():
    base = RunConfig()
    assert base.digest() == RunConfig(lr=0.5, epochs=2, seed=9).digest()
    assert base.digest() != RunConfig(codebank="128x32").digest()
    assert base.digest() != RunConfig(size="B").digest()
    assert len(base.digest()) == 32


def test_presets_and_derived_configs():
    for size, blocks in (("S", 2), ("B", 4), ("L", 8)):
        assert EncoderConfig.preset(preset(size).size, 7).n_blocks == blocks
    mc = RunConfig(codebank="128x32", task="gray-scott").model_config()
    assert (mc.bank_size, mc.code_dim, mc.in_channels) == (128, 32, 2)
    assert RunConfig().split().train == 200
    assert RunConfig().train_config().lr == 0.01
