import json

import numpy as np
import pytest

from leakscope import aes, metrics
from leakscope.cli import main

KEY_HEX = "2b7e151628aed2a6abf7158809cf4f3c"


def run_cli(*argv):
    return main(list(argv))


def test_obfuscate_roundtrip(capsys):
    assert run_cli("obfuscate", "deadbeef", "--keys", "1111,2222,3333,4444") == 0
    forward = capsys.readouterr().out.strip()
    assert forward == "018cc81b"
    assert run_cli("obfuscate", forward, "--keys", "1111,2222,3333,4444",
                   "--inverse") == 0
    assert capsys.readouterr().out.strip() == "deadbeef"


def test_obfuscate_zero_spec_override(tmp_path, capsys):
    # all-zero matrix: rounds only shuffle halves, zero maps to itself
    spec = {"version": "zero", "rows": ["00000000"] * 16, "const": "0000"}
    path = tmp_path / "zero.json"
    path.write_text(json.dumps(spec))
    assert run_cli("obfuscate", "00000000", "--keys", "1,2,3,4",
                   "--spec", str(path)) == 0
    assert capsys.readouterr().out.strip() == "00000000"


def test_obfuscate_bad_inputs(capsys):
    assert run_cli("obfuscate", "zzz", "--keys", "1,2,3,4") == 2
    assert "zzz" in capsys.readouterr().err
    assert run_cli("obfuscate", "12", "--keys", "1,2,3") == 2
    assert "k1,k2,k3,k4" in capsys.readouterr().err


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    cfg = out / "config"
    cfg.write_text("mode = param\nnoise_sigma = 1.0\nrounds = 10\n"
                   "rekey_interval_runs = 2\nseed = 44\n")
    code = run_cli("simulate", "--key", KEY_HEX, "--gen", "5",
                   "--config", str(cfg), "--out", str(out / "a"))
    assert code == 0
    return out


def test_simulate_artifacts_and_manifest(sim_dir):
    man = json.loads((sim_dir / "a" / "manifest.json").read_text())
    assert man["config"]["mode"] == "param"
    assert man["rekey_runs"] == [2, 4]
    assert man["key_hex"] == KEY_HEX
    pts = aes.read_blocks_hex(sim_dir / "a" / "plaintexts.txt")
    cts = aes.read_blocks_hex(sim_dir / "a" / "ciphertexts.txt")
    key = bytes.fromhex(KEY_HEX)
    assert all(aes.aes128_encrypt(p, key) == c for p, c in zip(pts, cts))


def test_simulate_reproducible_byte_for_byte(sim_dir):
    cfg = sim_dir / "config"
    assert run_cli("simulate", "--key", KEY_HEX, "--gen", "5",
                   "--config", str(cfg), "--out", str(sim_dir / "b")) == 0
    for name in ("traces.npz", "plaintexts.txt", "ciphertexts.txt"):
        assert (sim_dir / "a" / name).read_bytes() == (sim_dir / "b" / name).read_bytes()
    ma = json.loads((sim_dir / "a" / "manifest.json").read_text())
    mb = json.loads((sim_dir / "b" / "manifest.json").read_text())
    for doc, sub in ((ma, "a"), (mb, "b")):
        doc["artifacts"] = {k: v.replace(f"/{sub}/", "/X/")
                            for k, v in doc["artifacts"].items()}
        doc["plaintexts"] = doc["plaintexts"].replace(f"/{sub}/", "/X/")
    assert ma == mb


def test_manifest_schema(sim_dir):
    import jsonschema
    from importlib import resources

    schema = json.loads(
        resources.files("leakscope").joinpath("schemas/run_manifest.schema.json").read_text()
    )
    man = json.loads((sim_dir / "a" / "manifest.json").read_text())
    jsonschema.validate(man, schema)


LEAKY_VCD_HEADER = """\
$timescale 1ns $end
$scope module soc $end
$var wire 1 ! clk $end
$scope module leaky $end
$var wire 8 " word $end
$upscope $end
$scope module quiet $end
$var wire 8 # word $end
$upscope $end
$upscope $end
$enddefinitions $end
"""


def _fixture_vcd(value):
    body = [
        "#0", "$dumpvars", "0!", f"b{value:b} \"", "b1111111 #", "$end",
        "#10", "1!", "#15", "0!",
        "#20", "1!", "#25", "0!",
    ]
    return LEAKY_VCD_HEADER + "\n".join(body) + "\n"


def test_analyze_synthetic_two_module_fixture(tmp_path, capsys):
    rng = np.random.default_rng(12)
    values = rng.integers(0, 256, size=12)
    paths = []
    for i, v in enumerate(values):
        p = tmp_path / f"r{i}.vcd"
        p.write_text(_fixture_vcd(int(v)))
        paths.append(p)
    manifest = tmp_path / "runs.txt"
    manifest.write_text("".join(f"r{i}.vcd\n" for i in range(len(values))))
    oracle = metrics.OracleTrace(values=tuple(int(v) for v in values), width=8,
                                 label="direct")
    metrics.write_oracle_csv(tmp_path / "oracle.csv", oracle)
    out = tmp_path / "report.json"
    code = run_cli("analyze", "--runs", str(manifest), "--oracle",
                   str(tmp_path / "oracle.csv"), "--out", str(out),
                   "--floor-shuffles", "300")
    assert code == 0
    doc = json.loads(out.read_text())
    by_name = {tuple(m["module_path"]): m for m in doc["modules"]}
    assert by_name[("soc", "leaky")]["severity"] == "red"
    assert by_name[("soc", "leaky")]["svf"] == pytest.approx(1.0, abs=1e-9)
    assert by_name[("soc", "quiet")]["severity"] == "blue"
    assert by_name[("soc", "quiet")]["svf"] == 0.0
    assert doc["modules"][0]["module_path"] == ["soc", "leaky"]

    import jsonschema
    from importlib import resources

    schema = json.loads(
        resources.files("leakscope").joinpath("schemas/leakage_report.schema.json").read_text()
    )
    jsonschema.validate(doc, schema)


def test_analyze_window_and_threads(tmp_path):
    rng = np.random.default_rng(3)
    values = rng.integers(0, 256, size=8)
    for i, v in enumerate(values):
        (tmp_path / f"r{i}.vcd").write_text(_fixture_vcd(int(v)))
    manifest = tmp_path / "runs.txt"
    manifest.write_text("".join(f"r{i}.vcd\n" for i in range(len(values))))
    oracle = metrics.OracleTrace(values=tuple(int(v) for v in values), width=8,
                                 label="direct")
    metrics.write_oracle_csv(tmp_path / "oracle.csv", oracle)
    out = tmp_path / "report.json"
    code = run_cli("analyze", "--runs", str(manifest), "--oracle",
                   str(tmp_path / "oracle.csv"), "--out", str(out),
                   "--floor-shuffles", "50", "--window", "2:2", "--threads", "2")
    assert code == 0
    doc = json.loads(out.read_text())
    assert doc["window"] == [2, 2]
    # the fixture's value is constant from cycle 1 on; restricting to cycle 2
    # still sees it, and peak_cycle stays absolute
    by_name = {tuple(m["module_path"]): m for m in doc["modules"]}
    assert by_name[("soc", "leaky")]["peak_cycle"] == 2

    bad = run_cli("analyze", "--runs", str(manifest), "--oracle",
                  str(tmp_path / "oracle.csv"), "--out", str(out),
                  "--window", "nope")
    assert bad == 2


def test_analyze_oracle_count_mismatch(tmp_path, capsys):
    for i in range(2):
        (tmp_path / f"r{i}.vcd").write_text(_fixture_vcd(i))
    manifest = tmp_path / "runs.txt"
    manifest.write_text("r0.vcd\nr1.vcd\n")
    oracle = metrics.OracleTrace(values=(1, 2, 3), width=8, label="o")
    metrics.write_oracle_csv(tmp_path / "oracle.csv", oracle)
    code = run_cli("analyze", "--runs", str(manifest), "--oracle",
                   str(tmp_path / "oracle.csv"), "--out", str(tmp_path / "x.json"))
    assert code == 2
    err = capsys.readouterr().err
    assert "3 values" in err and "2 runs" in err


def test_dpa_on_simulated_traces(sim_dir, tmp_path, capsys):
    out = tmp_path / "dpa"
    code = run_cli("dpa", "--traces", str(sim_dir / "a" / "traces.npz"),
                   "--out", str(out), "--checkpoint", "3", "--target-byte", "0")
    assert code == 0
    doc = json.loads((out / "attack.json").read_text())
    assert "mtd" in doc and len(doc["ranks"]) == 256

    import jsonschema
    from importlib import resources

    schema = json.loads(
        resources.files("leakscope").joinpath("schemas/attack_result.schema.json").read_text()
    )
    jsonschema.validate(doc, schema)
    evo = (out / "evolution.csv").read_text().splitlines()
    assert evo[0] == "trace_count,guess,max_abs_rho"


def test_dpa_malformed_csv_names_row(tmp_path, capsys):
    bad = tmp_path / "traces.csv"
    bad.write_text("run_index,cycle,sample\n0,1,3.0\n0,two,4\n")
    pts = tmp_path / "pts.txt"
    aes.write_blocks_hex(pts, [bytes(16), bytes(16)])
    code = run_cli("dpa", "--traces", str(bad), "--plaintexts", str(pts),
                   "--out", str(tmp_path / "o"))
    assert code == 2
    assert "line 3" in capsys.readouterr().err


def test_ttest_from_class_csv(tmp_path, capsys):
    path = tmp_path / "classes.csv"
    rows = ["class,sample"]
    rng = np.random.default_rng(5)
    for label, mean in (("a", 0.0), ("b", 10.0)):
        for v in rng.normal(mean, 0.5, 40):
            rows.append(f"{label},{v}")
    path.write_text("\n".join(rows) + "\n")
    out = tmp_path / "t.csv"
    assert run_cli("ttest", "--classes", str(path), "--out", str(out)) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "class,a,b"
    t_ab = float(lines[1].split(",")[2])
    assert t_ab > 4.5


def test_bad_config_names_field(tmp_path, capsys):
    cfg = tmp_path / "cfg"
    cfg.write_text("noise_sigma = loud\n")
    code = run_cli("simulate", "--key", KEY_HEX, "--config", str(cfg),
                   "--out", str(tmp_path / "o"))
    assert code == 2
    assert "noise_sigma" in capsys.readouterr().err


def test_bad_key_is_usage_error(tmp_path, capsys):
    code = run_cli("simulate", "--key", "abc", "--out", str(tmp_path / "o"))
    assert code == 2
    assert "key" in capsys.readouterr().err
