import pytest

from ispsim import config as C


def test_round_trip_text():
    cfg = C.RunConfig()
    cfg.sgd.learning_rate = 0.3
    cfg.stop.target_accuracy = 0.85
    cfg.stop.deadline_ms = None
    text = C.to_text(cfg)
    assert C.to_text(C.from_text(text)) == text
    assert C.from_text(text) == cfg


def test_text_format():
    text = C.to_text(C.RunConfig())
    assert text.splitlines()[0] == "algorithm = easgd"
    assert "nand.t_read_us = 75.0" in text
    assert "stop.target_accuracy = none" in text


def test_comments_and_types():
    cfg = C.from_text("# comment\nchannels = 8  # inline\nsgd.strict_downpour = yes\nstop.max_epochs = 3\n")
    assert cfg.channels == 8 and cfg.sgd.strict_downpour is True and cfg.stop.max_epochs == 3


@pytest.mark.parametrize("text,match", [
    ("channels 8", "line 1"), ("\nfoo = 1", "unknown config key"), ("bar.x = 1", "section"),
    ("channels = eight", "int"), ("sgd = 1", "unknown"), ("trace = maybe", "bool"),
])
def test_errors(text, match):
    with pytest.raises(C.ConfigFileError, match=match):
        C.from_text(text)


def test_load_with_overrides(tmp_path):
    f = tmp_path / "c.cfg"
    f.write_text("channels = 4\nsgd.tau = 4\n")
    cfg = C.load(f, [("sgd.tau", "16")])
    assert cfg.channels == 4 and cfg.sgd.tau == 16


def test_copy_is_independent():
    a = C.RunConfig()
    b = a.copy()
    b.sgd.tau = 9
    assert a.sgd.tau == 1
