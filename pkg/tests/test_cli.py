import json
import math
import os
import socket
import subprocess
import sys
import time

import numpy as np
import pytest

from pbitnqs import link
from pbitnqs.cli import main
from pbitnqs.link import decode_samples
from pbitnqs.rbm import load_checkpoint


def run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def test_exact_tfim12(tmp_path, capsys):
    report = tmp_path / "r.txt"
    t0 = time.perf_counter()
    code, out, _ = run(["exact", "--n", "12", "--j", "1", "--gamma", "1", "--pbc",
                        "--report", str(report)], capsys)
    assert code == 0 and time.perf_counter() - t0 < 10
    e0 = float(next(ln for ln in out.splitlines() if ln.startswith("E0:")).split()[1])
    assert abs(abs(e0) - 15.32256) < 1e-4
    assert report.read_text() == out


def test_exact_classical(tmp_path, capsys):
    code, out, _ = run(["exact", "--n", "12", "--j", "1", "--gamma", "0", "--pbc",
                        "--report", str(tmp_path / "r.txt")], capsys)
    assert code == 0 and "E0: -12.0000000000" in out


def test_exact_size_limit(tmp_path, capsys):
    code, _, err = run(["exact", "--n", "21", "--report", str(tmp_path / "r.txt")], capsys)
    assert code == 1 and "limit of 20" in err


def test_embed_tfim12(tmp_path, capsys):
    out_file = tmp_path / "emb.txt"
    code, out, _ = run(["embed", "--nv", "12", "--nh", "48", "--chimera", "12,3,4",
                        "--out", str(out_file)], capsys)
    assert code == 0
    assert "288 p-bits, chains 12×len12 + 48×len3" in out
    assert "576 on 576 intra-cell couplers" in out
    assert out_file.read_text().count("\nhidden ") == 48


def test_embed_identity(tmp_path, capsys):
    code, out, _ = run(["embed", "--nv", "4", "--nh", "4", "--chimera", "1,1,4",
                        "--out", str(tmp_path / "e.txt")], capsys)
    assert code == 0 and "8 p-bits, chains 4×len1 + 4×len1" in out


def test_embed_capacity_error(tmp_path, capsys):
    code, _, err = run(["embed", "--nv", "13", "--nh", "48", "--chimera", "12,3,4",
                        "--out", str(tmp_path / "e.txt")], capsys)
    assert code == 1 and "N*L=12" in err


def test_bad_flag_is_usage_error(capsys):
    with pytest.raises(SystemExit) as info:
        main(["embed", "--chimera", "1,2"])
    assert info.value.code == 1


def test_train_zero_epochs(tmp_path, capsys):
    out = tmp_path / "run"
    code, _, _ = run(["train", "--preset", "tfim12", "--epochs", "0", "--out", str(out)], capsys)
    assert code == 0
    assert (out / "history.csv").read_text().strip() == (
        "epoch,energy_mean,energy_stderr,grad_norm,broken_chain_rate,ess,sample_ms,train_ms")
    p = load_checkpoint(out / "params.rbm")
    assert (p.nv, p.nh) == (12, 48)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["n_spins"] == 12 and manifest["config"]["alpha"] == 4


def test_train_small_run_writes_outputs(tmp_path, capsys):
    out = tmp_path / "run"
    code, stdout, _ = run(["train", "--sampler", "exact-enum", "--set", "n_spins=6",
                           "--set", "alpha=2", "--epochs", "60", "--out", str(out)], capsys)
    assert code == 0
    assert "final variational energy" in stdout
    lines = (out / "history.csv").read_text().splitlines()
    assert len(lines) == 61
    svg = (out / "convergence.svg").read_text()
    assert svg.lstrip().startswith("<?xml") and "<svg" in svg


def test_config_file_and_unknown_keys(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("# test\nn_spins = 4\nalpha = 1\nepochs = 2\n")
    code, _, _ = run(["train", "--config", str(cfg), "--out", str(tmp_path / "a"), "--no-plot"], capsys)
    assert code == 0
    cfg.write_text("n_spins = 4\nlearnig_rate = 0.1\n")
    code, _, err = run(["train", "--config", str(cfg), "--out", str(tmp_path / "b")], capsys)
    assert code == 1 and "learnig_rate" in err and ":2:" in err
    code, _, err = run(["train", "--set", "epochs=abc", "--out", str(tmp_path / "c")], capsys)
    assert code == 1 and "epochs" in err


def test_manifest_rerun_is_byte_identical(tmp_path, capsys):
    first = tmp_path / "first"
    args = ["train", "--sampler", "inprocess-pbit", "--mode", "psi-reweight", "--set", "n_spins=8",
            "--set", "alpha=1", "--samples", "200", "--set", "burn_in=10", "--epochs", "4",
            "--no-timing", "--no-plot"]
    assert run(args + ["--out", str(first)], capsys)[0] == 0
    second = tmp_path / "second"
    code, _, _ = run(["train", "--manifest", str(first / "manifest.json"), "--no-plot",
                      "--out", str(second)], capsys)
    assert code == 0
    assert (first / "history.csv").read_bytes() == (second / "history.csv").read_bytes()
    assert (first / "params.rbm").read_bytes() == (second / "params.rbm").read_bytes()


def test_sample_zero_network(tmp_path, capsys):
    netfile = tmp_path / "net.txt"
    netfile.write_text("n 8\n")
    out = tmp_path / "s.bin"
    code, _, _ = run(["sample", "--network", str(netfile), "--samples", "10000",
                      "--out", str(out)], capsys)
    assert code == 0
    batch = decode_samples(out.read_bytes())
    assert batch.rows.shape == (10000, 8)
    assert np.all(np.abs(batch.rows.mean(axis=0)) < 4 / math.sqrt(10000))


def test_sample_malformed_network(tmp_path, capsys):
    netfile = tmp_path / "net.txt"
    netfile.write_text("n 4\ncoupler 0 1 0.5\ncoupler 1 two 0.5\n")
    code, _, err = run(["sample", "--network", str(netfile), "--out", str(tmp_path / "s")], capsys)
    assert code == 1 and "line 3" in err


def free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def wait_for(port, timeout=30):
    end = time.time() + timeout
    while time.time() < end:
        try:
            socket.create_connection(("127.0.0.1", port), timeout=1).close()
            return
        except OSError:
            time.sleep(0.1)
    raise TimeoutError(port)


def test_serve_and_train_over_loopback(tmp_path, capsys):
    port = free_port()
    env = {**os.environ, link.PORT_ENV: str(port)}
    proc = subprocess.Popen([sys.executable, "-m", "pbitnqs", "serve"], env=env,
                            stdout=subprocess.PIPE, stderr=subprocess.PIPE)
    try:
        wait_for(port)
        common = ["--mode", "psi-reweight", "--set", "n_spins=8", "--set", "alpha=1",
                  "--samples", "200", "--set", "burn_in=10", "--epochs", "3",
                  "--no-timing", "--no-plot"]
        code, _, _ = run(["train", "--sampler", "remote", "--endpoint", f"127.0.0.1:{port}",
                          *common, "--out", str(tmp_path / "remote")], capsys)
        assert code == 0
        code, _, _ = run(["train", "--sampler", "inprocess-pbit", *common,
                          "--out", str(tmp_path / "local")], capsys)
        assert code == 0
        assert ((tmp_path / "remote" / "history.csv").read_bytes()
                == (tmp_path / "local" / "history.csv").read_bytes())
    finally:
        proc.terminate()
        proc.wait(timeout=10)


def test_remote_unreachable_exit_code(tmp_path, capsys):
    code, _, err = run(["train", "--sampler", "remote", "--endpoint", f"127.0.0.1:{free_port()}",
                        "--set", "n_spins=4", "--set", "alpha=1", "--epochs", "1", "--no-plot",
                        "--out", str(tmp_path / "x")], capsys)
    assert code == 3
