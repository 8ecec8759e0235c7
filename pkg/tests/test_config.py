import pytest

from quantdiff.config import load_config, merge, parse_config_text
from quantdiff.errors import ConfigError


def test_parse_types_and_comments():
    cfg = parse_config_text("""
# comment
train.total_steps = 300   # inline
train.hidden = 64, 64
train.betas = (0.9, 0.99)
env.kind = precision_slot
tau.a = 2
""")
    assert cfg["train"] == {"total_steps": 300, "hidden": (64, 64), "betas": (0.9, 0.99)}
    assert cfg["env"]["kind"] == "precision_slot"
    assert cfg["tau"]["a"] == 2.0


@pytest.mark.parametrize("text,needle", [
    ("train.nope = 1", "unknown key 'train.nope'"),
    ("total_steps = 1", "no section"),
    ("train.total_steps: 1", "expected"),
    ("\n\ntrain.total_steps = many", "f.cfg:3"),
])
def test_diagnostics_carry_location(text, needle):
    with pytest.raises(ConfigError) as exc:
        parse_config_text(text, "f.cfg")
    assert needle in str(exc.value)


def test_flags_override_file():
    file_cfg = {"train": {"total_steps": 300, "seed": 1}}
    out = merge(file_cfg, {"train.total_steps": 50, "train.seed": None, "codec.bins": 16})
    assert out == {"train": {"total_steps": 50, "seed": 1}, "codec": {"bins": 16}}
    assert file_cfg["train"]["total_steps"] == 300
    with pytest.raises(ConfigError):
        merge({}, {"bogus.key": 1})


def test_load_missing_file(tmp_path):
    assert load_config(None) == {}
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.cfg")
