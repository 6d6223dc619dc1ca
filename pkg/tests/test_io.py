import json

import numpy as np
import pytest

from absim.cli import main
from absim.errors import FormatError, SchemaError
from absim.io import (HEADER, field_bytes, load_config, parse_field, read_csv, read_field,
                      read_meta, write_csv, write_field)
from absim.quantum import GridSpec, WaveField


def base_config():
    return {
        "magnet": {"enclosing_radius": 3.0,
                   "components": [{"type": "torus", "center": [0, 0, 0], "axis": [0, 0, 1],
                                   "major_radius": 2.0, "minor_radius": 0.5}]},
        "fluxes": [1.5707963267948966],
        "packet": {"center": [0, 0, 0], "sigma": 0.6, "window": {"inner": 0.6, "outer": 1.35}},
        "grid": {"shape": [32, 32, 32], "extents": [12, 12, 12]},
        "velocities": [2, 4, 8],
    }


def some_field():
    rng = np.random.default_rng(11)
    g = GridSpec((4, 6, 8), (1.0, 2.0, 3.0), (0.1, -0.2, 0.3))
    return WaveField(g, rng.normal(size=g.shape) + 1j * rng.normal(size=g.shape))


def test_round_trip_is_bit_exact(tmp_path):
    f = some_field()
    write_field(tmp_path / "a.absf", f, {"classes": ["hole[+1]"]})
    back = read_field(tmp_path / "a.absf")
    assert back.grid == f.grid
    assert back.data.tobytes() == f.data.tobytes()
    assert read_meta(tmp_path / "a.absf") == {"classes": ["hole[+1]"]}


def test_truncated_file_reports_offset():
    buf = field_bytes(some_field())
    with pytest.raises(FormatError) as e:
        parse_field(buf[:-5])
    assert e.value.offset == len(buf) - 5
    with pytest.raises(FormatError) as e:
        parse_field(buf[:30])
    assert e.value.offset == 30


def test_bad_magic_and_version():
    buf = bytearray(field_bytes(some_field()))
    with pytest.raises(FormatError) as e:
        parse_field(b"XXXX" + bytes(buf[4:]))
    assert e.value.offset == 0
    buf[4] = 9
    with pytest.raises(FormatError) as e:
        parse_field(bytes(buf))
    assert e.value.offset == 4


def test_trailing_bytes_rejected():
    buf = field_bytes(some_field())
    with pytest.raises(FormatError) as e:
        parse_field(buf + b"\0")
    assert e.value.offset == len(buf)
    assert HEADER.size == 68


def test_csv_full_precision(tmp_path):
    x = 0.1 + 0.2
    write_csv(tmp_path / "t.csv", ["v", "err"], [(2, x)])
    head, rows = read_csv(tmp_path / "t.csv")
    assert head == ["v", "err"]
    assert float(rows[0][1]) == x


def test_config_loads(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(base_config()))
    cfg = load_config(p)
    assert cfg.velocities == [2.0, 4.0, 8.0]
    assert cfg.magnet.enclosing_radius == 3.0
    assert cfg.packets[0].window.outer == 1.35


@pytest.mark.parametrize("mutate, path", [
    (lambda d: d["magnet"].pop("enclosing_radius"), "magnet.enclosing_radius"),
    (lambda d: d["magnet"]["components"][0].pop("axis"), "magnet.components[0].axis"),
    (lambda d: d.__setitem__("fluxes", [1, 2]), "fluxes"),
    (lambda d: d.__setitem__("velocities", [4, 2, 8]), "velocities"),
    (lambda d: d["grid"].__setitem__("shape", [97, 32, 32]), "grid"),
    (lambda d: d.__setitem__("propagator", {"stencil_order": 3}), "propagator"),
    (lambda d: d.__setitem__("propagator", {"bogus": 1}), "propagator.bogus"),
    (lambda d: d["packet"].__setitem__("sigma", "wide"), "packet.sigma"),
])
def test_config_errors_name_the_field(mutate, path):
    doc = base_config()
    mutate(doc)
    with pytest.raises(SchemaError) as e:
        load_config(doc)
    assert e.value.path == path


def test_env_override():
    cfg = load_config(base_config(), {"ABSIM_SEED": "7", "ABSIM_VELOCITIES": "[1, 3, 5]"})
    assert cfg.seed == 7 and cfg.velocities == [1.0, 3.0, 5.0]


def test_cli_classify_and_exit_codes(tmp_path, capsys):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(base_config()))
    assert main(["classify", "--config", str(p), "--point", "0.2", "0", "-5"]) == 0
    assert json.loads(capsys.readouterr().out)["class"] == "hole[+1]"
    bad = base_config()
    del bad["magnet"]["enclosing_radius"]
    p.write_text(json.dumps(bad))
    assert main(["classify", "--config", str(p)]) == 2
    assert "enclosing_radius" in capsys.readouterr().err


def test_cli_guard_exit_code(tmp_path):
    doc = base_config()
    doc["grid"] = {"shape": [8, 8, 8], "extents": [12, 12, 12]}
    p = tmp_path / "c.json"
    p.write_text(json.dumps(doc))
    assert main(["ansatz", "--config", str(p), "--out", str(tmp_path)]) == 3
