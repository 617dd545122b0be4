import math

import numpy as np
import pytest

from trailerlq import ConfigError
from trailerlq.config import CERTIFICATION_KEYS, ToolkitConfig, load_config, parse_config
from trailerlq.kvfile import format_kv, format_value, parse_kv, write_atomic


def test_empty_file_gives_the_defaults():
    cfg = parse_config("")
    assert cfg == ToolkitConfig()
    assert cfg.geometry.lengths == (3.8, 2.8, 6.6, 0.72)
    assert np.allclose(np.diag(cfg.weights.Q), [0.05, 10, 8, 2])
    assert cfg.parameter_set.beta3_max == pytest.approx(math.radians(40))
    assert cfg.e0 == (-4.2, -0.1, 0.1, -0.3)
    assert load_config(None) == cfg


def test_values_comments_and_full_q():
    text = """
# geometry
L1_m = 4.0   # truck
Q_diag = 1 0 0 0  0 2 0 0  0 0 3 0  0 0 0 4
duration_s = 12.5
u_max = none
path = straight
n_verify_samples = 12
"""
    cfg = parse_config(text)
    assert cfg.L1_m == 4.0 and cfg.duration_s == 12.5 and cfg.u_max is None
    assert np.allclose(cfg.weights.Q, np.diag([1, 2, 3, 4]))
    assert cfg.path == "straight" and cfg.n_verify_samples == 12


def test_text_roundtrip():
    cfg = parse_config("eps_per_s = 0.002\nQ_diag = 0.1, 1, 2, 3\ns0_m = 50\n")
    assert parse_config(cfg.to_text()) == cfg


@pytest.mark.parametrize("text", [
    "bogus = 1\n",
    "L1_m = 1\nL1_m = 2\n",
    "[section]\nL1_m = 1\n",
    "L1_m = abc\n",
    "Q_diag = 1 2 3\n",
    "v3_mps = 0\n",
    "L2_m = -1\n",
    "beta3_max_deg = 95\n",
    "inflation = 1.5\n",
    "eps_per_s = -0.1\n",
    "mu_max = 0.5\n",
    "Q_diag = 1 -1 1 1\n",
    "R = 0\n",
    "just some words\n",
])
def test_rejected(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_unreadable_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.cfg")


def test_certification_digest_ignores_simulation_keys():
    a = ToolkitConfig()
    b = parse_config("e0_z3_m = 1.0\ndt_s = 0.02\n")
    c = parse_config("eps_per_s = 0.002\n")
    assert a.digest() != b.digest()
    assert a.certification_digest() == b.certification_digest()
    assert a.certification_digest() != c.certification_digest()
    assert set(CERTIFICATION_KEYS) <= set(ToolkitConfig.__dataclass_fields__)


def test_kv_format(tmp_path):
    items = {"a": 1.0 / 3.0, "b": np.array([1.5, -2.0]), "c": True, "d": None, "e": np.bool_(False),
             "f": "text"}
    text = format_kv(items, "title")
    kv = parse_kv(text)
    assert float(kv["a"]) == 1.0 / 3.0
    assert kv["c"] == "true" and kv["e"] == "false" and kv["d"] == "none"
    assert kv["f"] == "text"
    assert format_value(np.eye(2)) == "1 0 0 1"
    out = tmp_path / "x.txt"
    write_atomic(out, text)
    assert out.read_text() == text
    assert sorted(p.name for p in tmp_path.iterdir()) == ["x.txt"]
