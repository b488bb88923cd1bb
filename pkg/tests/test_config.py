from __future__ import annotations

from dataclasses import dataclass

import pytest

from hound import config
from hound.config import ConfigError


@dataclass(frozen=True)
class Demo:
    gain: float = 1.0
    count: int = 3
    enabled: bool = True
    label: str = "x"
    pair: tuple[float, float] = (1.0, 2.0)

    def __post_init__(self):
        if self.count < 0:
            raise ValueError("count must be >= 0")


def test_parse_text():
    m = config.loads("# comment\ngain = 2.5\ncount = 4  # trailing\nenabled = off\nlabel = hello\npair = 3, 4.5\n")
    assert m == {"gain": 2.5, "count": 4, "enabled": False, "label": "hello", "pair": [3, 4.5]}


@pytest.mark.parametrize("text", ["gain 2", "1x = 3", "gain = 1\ngain = 2"])
def test_malformed(text):
    with pytest.raises(ConfigError):
        config.loads(text)


def test_dataclass_round_trip(tmp_path):
    d = Demo(gain=0.1 + 0.2, count=7, enabled=False, label="abc", pair=(0.25, -1e-17))
    config.dump_dataclass(d, tmp_path / "d.cfg")
    assert config.load_dataclass(Demo, tmp_path / "d.cfg") == d


def test_int_coerces_to_float_but_not_back():
    assert config.from_mapping(Demo, {"gain": 2}).gain == 2.0
    with pytest.raises(ConfigError):
        config.from_mapping(Demo, {"count": 2.5})
    with pytest.raises(ConfigError):
        config.from_mapping(Demo, {"enabled": 1})


def test_unknown_keys_and_validation_become_config_errors():
    with pytest.raises(ConfigError, match="unknown"):
        config.from_mapping(Demo, {"nope": 1})
    with pytest.raises(ConfigError):
        config.from_mapping(Demo, {"count": -1})


def test_nonfinite_refused():
    with pytest.raises(ConfigError):
        config.to_mapping(Demo(gain=float("inf")))
