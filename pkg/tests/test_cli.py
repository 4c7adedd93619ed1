import csv
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from decoqkd import attack


def run(*args, cwd=None):
    return subprocess.run(
        [sys.executable, "-m", "decoqkd", *map(str, args)],
        capture_output=True,
        text=True,
        cwd=cwd,
    )


def read_csv(text):
    rows = list(csv.DictReader(text.splitlines()))
    return [{k: float(v) for k, v in r.items()} for r in rows]


def test_qber_scan_finds_matched_setting():
    res = run("qber-scan", "--d-a", 0.4)
    assert res.returncode == 0
    rows = read_csv(res.stdout)
    assert len(rows) == 81
    assert "argmin d_b_mm=0.4 " in res.stderr


def test_qber_scan_untilted_rises_toward_quarter():
    rows = read_csv(run("qber-scan", "--d-a", 0, "--q0", 0, "--d-b-stop", 3.0, "--d-b-step", 0.05).stdout)
    q = np.array([r["qber_analytic"] for r in rows])
    # output is rounded to 12 digits, so the tail saturates at exactly 0.25
    assert np.all(np.diff(q) >= 0)
    assert np.all(np.diff(q[:40]) > 0)
    assert q[-1] == pytest.approx(0.25, abs=1e-9)


def test_qber_scan_monte_carlo_within_three_sigma():
    res = run("qber-scan", "--d-a", 0.2, "--d-b-step", 0.1, "--monte-carlo", 20000, "--seed", 17)
    rows = read_csv(res.stdout)
    inside = 0
    for r in rows:
        assert r["n_sifted"] >= 20000
        sigma = math.sqrt(r["qber_analytic"] * (1 - r["qber_analytic"]) / r["n_sifted"])
        inside += abs(r["qber_mc"] - r["qber_analytic"]) <= 3 * sigma + 1e-12
    assert inside >= 0.95 * len(rows)


def test_qber_scan_rejects_bad_range():
    res = run("qber-scan", "--d-a", 0, "--d-b-step", 0)
    assert res.returncode == 2
    assert len(res.stderr.strip().splitlines()) == 1
    assert run("qber-scan", "--d-a", 0, "--d-b-start", 1, "--d-b-stop", 0).returncode == 2


def test_renyi_table_limits():
    res = run("renyi", "--gamma0", 0, 1, "--qber-stop", 0.7, "--qber-step", 0.005)
    assert res.returncode == 0
    rows = read_csv(res.stdout)
    for r in rows:
        if r["infeasible"]:
            continue
        if r["gamma0"] == 1:
            s = math.sqrt(2 * r["qber"])
            assert r["I_hv_bits"] == pytest.approx(attack.renyi_hv(s), abs=1e-11)
            assert r["I_da_bits"] == pytest.approx(r["I_hv_bits"], abs=1e-11)
        else:
            assert r["I_da_bits"] == 0
            assert r["I_total_bits"] <= 0.5 + 1e-12
        assert r["below_11pct"] == (r["qber"] < 0.11)
    total0 = max(r["I_total_bits"] for r in rows if r["gamma0"] == 0 and not r["infeasible"])
    assert total0 == pytest.approx(0.5, abs=1e-3)
    assert any(r["infeasible"] for r in rows)


def test_simulate_bundled_configs(tmp_path):
    out = {}
    for name in ("baseline", "ideal", "attack_s04"):
        path = tmp_path / f"{name}.json"
        res = run("simulate", name, "-o", path)
        assert res.returncode == 0, res.stderr
        out[name] = json.loads(path.read_text())
    assert 0.035 <= out["baseline"]["qber_report"]["qber"] <= 0.045
    assert out["ideal"]["qber_report"]["qber"] == 0
    assert out["ideal"]["alice_key"] == out["ideal"]["bob_key"]
    rep = out["attack_s04"]["qber_report"]
    sigma = math.sqrt(0.08 * 0.92 / rep["total_hv"])
    assert abs(rep["qber_hv"] - 0.08) <= 3 * sigma
    assert set(out["attack_s04"]) >= {"config", "seed", "alice_key", "bob_key", "eve_key", "per_basis"}


def test_simulate_is_byte_reproducible(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    run("simulate", "attack_s04", "-o", a)
    run("simulate", "attack_s04", "-o", b)
    assert a.read_bytes() == b.read_bytes()


def test_simulate_config_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"n_rounds": 0, "noise": {"dark_count_prob": 2}}))
    res = run("simulate", bad)
    assert res.returncode == 2
    line = res.stderr.strip()
    assert "\n" not in line and "n_rounds" in line and "dark_count_prob" in line
    assert run("simulate", "no-such-config").returncode == 2


def test_simulate_without_seed_prints_drawn_seed(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"n_rounds": 100}))
    res = run("simulate", cfg, "-o", tmp_path / "r.json")
    assert res.returncode == 0
    seed = int(res.stderr.split("seed: ")[1].split()[0])
    assert json.loads((tmp_path / "r.json").read_text())["seed"] == seed


def test_timetag_pipeline_recovers_planted_key(tmp_path):
    t = tmp_path
    assert run("timetag", "gen", "--pairs", 3000, "--jitter", 0, "--seed", 3,
               "--alice", t / "a.csv", "--bob", t / "b.csv", "--truth", t / "truth.json").returncode == 0
    assert run("timetag", "g2", "--alice", t / "a.csv", "--bob", t / "b.csv", "-o", t / "h.csv").returncode == 0
    assert (t / "h.csv").read_text().startswith("lag_ticks,count_d12,count_d03,count_d13,count_d02\n")
    assert run("timetag", "fit", t / "h.csv", "-o", t / "w.json").returncode == 0
    res = run("timetag", "sift", "--alice", t / "a.csv", "--bob", t / "b.csv", "--window", t / "w.json",
              "--transcript", t / "public.csv", "--key-out", t / "key.json")
    assert res.returncode == 0
    truth = json.loads((t / "truth.json").read_text())
    key = json.loads((t / "key.json").read_text())
    assert key["alice_key"] == truth["alice_key"]
    assert key["bob_key"] == truth["bob_key"]
    lines = (t / "public.csv").read_text().splitlines()
    assert lines[0] == "index_a,t_a_ticks,index_b,t_b_ticks"
    assert all(cell.isdigit() for line in lines[1:] for cell in line.split(","))


def test_timetag_fit_failure_exit_code(tmp_path):
    t = tmp_path
    run("timetag", "gen", "--pairs", 0, "--dark-rate", 1e-3, "--duration", 100000, "--seed", 1,
        "--alice", t / "a.csv", "--bob", t / "b.csv")
    run("timetag", "g2", "--alice", t / "a.csv", "--bob", t / "b.csv", "-o", t / "h.csv")
    res = run("timetag", "fit", t / "h.csv")
    assert res.returncode == 3
    assert "fit failed" in res.stderr and len(res.stderr.strip().splitlines()) == 1


def test_timetag_gen_is_byte_reproducible(tmp_path):
    t = tmp_path
    for tag in ("1", "2"):
        run("timetag", "gen", "--pairs", 200, "--dark-rate", 1e-5, "--seed", 9,
            "--alice", t / f"a{tag}.csv", "--bob", t / f"b{tag}.csv")
    assert (t / "a1.csv").read_bytes() == (t / "a2.csv").read_bytes()
    assert (t / "b1.csv").read_bytes() == (t / "b2.csv").read_bytes()


def test_missing_subcommand_is_usage_error():
    assert run().returncode == 2
