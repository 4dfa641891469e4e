import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bars_lab import cli
from bars_lab.config import E_MISSING, E_SYNTAX, E_TYPE, E_UNKNOWN, E_VALUE, ConfigError, Key, dump, parse_text
from bars_lab.io import derive_seed, emit_csv, emit_json, read_csv, rows_to_csv

from .conftest import CONFIGS, FIXTURES

SCHEMA = {
    "run": {"name": Key("str"), "steps": Key("int", 10), "rate": Key("float", 0.5),
            "flags": Key("bool", False), "xs": Key("floats", [1.0, 2.0])},
}


def config_text(tmp_path, body):
    path = tmp_path / "c.cfg"
    path.write_text(body)
    return path


def test_defaults_and_dump():
    cfg = parse_text("[run]\nname = a\n", SCHEMA)
    assert cfg["run"] == {"name": "a", "steps": 10, "rate": 0.5, "flags": False, "xs": [1.0, 2.0]}
    text = dump(cfg, SCHEMA)
    assert text == "[run]\nflags = false\nname = a\nrate = 0.5\nsteps = 10\nxs = 1.0, 2.0\n"


@pytest.mark.parametrize("body, code, key", [
    ("[run]\nsteps = 3\n", E_MISSING, "name"),
    ("[run]\nname = a\nlamda_min = 1\n", E_UNKNOWN, "lamda_min"),
    ("[run]\nname = a\nsteps = three\n", E_TYPE, "steps"),
    ("[run]\nname = a\nname = b\n", E_SYNTAX, "name"),
    ("name = a\n", E_SYNTAX, "name"),
    ("[run]\nname\n", E_SYNTAX, None),
    ("[walk]\nname = a\n", E_UNKNOWN, "walk"),
])
def test_error_codes(body, code, key):
    with pytest.raises(ConfigError) as info:
        parse_text(body, SCHEMA, "x.cfg")
    assert info.value.code == code
    assert info.value.key == key
    assert key is None or key in str(info.value)


def test_unknown_key_names_key_and_line():
    with pytest.raises(ConfigError) as info:
        parse_text("[run]\nname = a\n\nlamda_min = 0.3\n", SCHEMA, "x.cfg")
    assert "'lamda_min'" in str(info.value)
    assert info.value.line == 4
    assert str(info.value).startswith("x.cfg:4:")


def test_choices_rejected_with_value_code():
    schema = {"s": {"mode": Key("str", "a", ("a", "b"))}}
    with pytest.raises(ConfigError) as info:
        parse_text("[s]\nmode = c\n", schema)
    assert info.value.code == E_VALUE


@settings(max_examples=60, deadline=None)
@given(st.text(st.characters(whitelist_categories=("L", "N")), min_size=1, max_size=8),
       st.integers(-10**6, 10**6), st.floats(allow_nan=False, allow_infinity=False),
       st.lists(st.floats(allow_nan=False, allow_infinity=False), max_size=4), st.booleans())
def test_parse_dump_parse_roundtrip(name, steps, rate, xs, flag):
    body = f"[run]\nname = {name}\nsteps = {steps}\nrate = {rate!r}\nflags = {'yes' if flag else 'off'}\n"
    if xs:
        body += "xs = " + ",".join(repr(x) for x in xs) + "\n"
    first = parse_text(body, SCHEMA)
    text = dump(first, SCHEMA)
    second = parse_text(text, SCHEMA)
    assert second.values == first.values
    assert dump(second, SCHEMA) == text


def test_experiment_configs_roundtrip():
    for path in sorted(CONFIGS.glob("*.cfg")):
        cfg = cli.parse_config(path)
        again = parse_text(cfg.normalized(), cli.experiment_schema)
        assert again.values == cfg.parsed.values, path.name


def test_derive_seed_is_stable():
    # first 8 bytes, little endian, of sha256(b"7\0bars\0" + b"0")
    assert derive_seed(7, "bars", 0) == 9882304882392934911
    assert derive_seed(7, "bars", 1) != derive_seed(7, "bars", 0)
    assert derive_seed(7, "bsde", 0) != derive_seed(7, "bars", 0)


def test_one_row_csv():
    text = rows_to_csv([{"a": 1, "b": 0.1}])
    assert text == "a,b\r\n1,0.1\r\n"


def test_csv_roundtrip_10k(tmp_path):
    import random

    rng = random.Random(4)
    rows = [{"i": i, "x": rng.random() * 10 ** rng.randint(-300, 300), "y": 0.1, "tag": f"r,{i}\""}
            for i in range(10_000)]
    path = tmp_path / "rows.csv"
    emit_csv(rows, path)
    back = read_csv(path)
    assert len(back) == len(rows)
    for a, b in zip(rows, back):
        assert int(b["i"]) == a["i"]
        assert float(b["x"]) == a["x"]
        assert float(b["y"]) == 0.1
        assert b["tag"] == a["tag"]


def test_csv_rejects_empty(tmp_path):
    with pytest.raises(ValueError):
        emit_csv([], tmp_path / "x.csv")


def test_json_sorted_and_nonfinite(tmp_path):
    path = tmp_path / "s.json"
    emit_json({"b": float("nan"), "a": 1}, path)
    text = path.read_text()
    assert text.index('"a"') < text.index('"b"')
    assert json.loads(text) == {"a": 1, "b": None}


def test_write_error_has_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError, match="file"):
        emit_json({"a": 1}, blocker / "sub" / "s.json")


# ---------------------------------------------------------------- CLI


def run(args):
    return cli.main([str(a) for a in args])


def test_cli_gamma2_and_determinism(tmp_path, capsys):
    cfg = CONFIGS / "gamma2.cfg"
    assert run(["gamma2", "--config", cfg, "--seed", 12, "--out", tmp_path / "a"]) == 0
    assert run(["gamma2", "--config", cfg, "--seed", 12, "--out", tmp_path / "b"]) == 0
    assert (tmp_path / "a" / "rows.csv").read_bytes() == (tmp_path / "b" / "rows.csv").read_bytes()
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert summary["claim"] == "gamma2-machinery"
    assert summary["verdict"] is True
    assert summary["schema_version"] == 1
    assert list(summary) == sorted(summary)
    rows = read_csv(tmp_path / "a" / "rows.csv")
    assert all(r["schema_version"] == "1" and r["seed"] == "12" for r in rows)
    assert "PASS" in capsys.readouterr().out


def test_cli_exit_codes(tmp_path):
    out = tmp_path / "o"
    assert run(["gamma2", "--config", tmp_path / "none.cfg", "--seed", 1, "--out", out]) == cli.EXIT_FIXTURE_MISSING
    missing = config_text(tmp_path, "[experiment]\nid = gamma2\nfixture = nope.fixture\n")
    assert run(["gamma2", "--config", missing, "--seed", 1, "--out", out]) == cli.EXIT_FIXTURE_MISSING
    unknown = config_text(tmp_path, "[experiment]\nid = gamma2\nfixture = x\n[params]\nlamda_min = 1\n")
    assert run(["gamma2", "--config", unknown, "--seed", 1, "--out", out]) == cli.EXIT_CONFIG
    wrong = config_text(tmp_path, f"[experiment]\nid = bars\nfixture = {FIXTURES / 'ou1d.fixture'}\n"
                                  "[params]\nj_star_prior = 1\n")
    assert run(["bars", "--config", wrong, "--seed", 1, "--out", out]) == cli.EXIT_INFEASIBLE
    assert json.loads((out / "summary.json").read_text())["status"] == "infeasible"
    mismatch = CONFIGS / "gamma2.cfg"
    assert run(["bars", "--config", mismatch, "--seed", 1, "--out", out]) == cli.EXIT_CONFIG


def test_cli_infeasible_scale(tmp_path):
    # a tiny J* prior leaves no admissible reward scale
    cfg = (CONFIGS / "bars.cfg").read_text().replace("170.97", "0.001")
    cfg = cfg.replace("../fixtures", str(FIXTURES))
    path = config_text(tmp_path, cfg)
    assert run(["bars", "--config", path, "--seed", 1, "--out", tmp_path / "o"]) == cli.EXIT_INFEASIBLE


def test_cli_assertion_failure_names_check(tmp_path):
    # a coarse two-dimension family whose gamma_2 slope is far above 1/2
    (tmp_path / "m.fixture").write_text("[fixture]\nid = coarse\nkind = metric\n[metric]\n"
                                        "dims = 2, 3\npoints_per_axis = 3\n")
    path = config_text(tmp_path, "[experiment]\nid = gamma2\nfixture = m.fixture\n")
    assert run(["gamma2", "--config", path, "--seed", 1, "--out", tmp_path / "o"]) == cli.EXIT_ASSERTION
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summary["verdict"] is False
    assert summary["failed_checks"] == ["dimension_slope"]


def test_cli_seed_must_be_u64(tmp_path):
    with pytest.raises(SystemExit):
        run(["gamma2", "--config", CONFIGS / "gamma2.cfg", "--seed", -1, "--out", tmp_path])
    with pytest.raises(SystemExit):
        run(["gamma2", "--config", CONFIGS / "gamma2.cfg", "--seed", 2**64, "--out", tmp_path])


def test_dump_config(capsys):
    assert run(["gamma2", "--config", CONFIGS / "gamma2.cfg", "--seed", 1, "--out", "/nonexistent", "--dump-config"]) == 0
    assert "tiny_spaces = 50" in capsys.readouterr().out
