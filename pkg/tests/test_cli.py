import json

import pytest

from decltx.cli import main
from decltx.consensus import ClusterConfig
from decltx.crypto import generate_keypair
from decltx.driver import prepare, sign_tx


def test_bench_size(capsys, tmp_path):
    assert main(["bench", "size", "--sizes", "400", "--factor", "0.002", "--compute", "none",
                 "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "ACCEPT_BID" in out and (tmp_path / "size.csv").exists()


def test_bench_cluster_cap(capsys):
    assert main(["bench", "cluster", "--nodes", "4,16"]) == 2
    assert "--allow-large" in capsys.readouterr().err


def test_bad_int_list():
    with pytest.raises(SystemExit):
        main(["bench", "size", "--sizes", "a,b"])


def test_store_roundtrip(tmp_path, capsys):
    data = tmp_path / "data"
    cfg = tmp_path / "cluster.yaml"
    cfg.write_text(f"nodes: 4\nseed: 5\ndata_dir: {data}\n")
    assert main(["node", "run", "--config", str(cfg), "--duration", "0.5"]) == 0
    capsys.readouterr()

    kp = generate_keypair("cli")
    tx = sign_tx(prepare("CREATE", {"capabilities": ["x"]}, kp), [kp])
    f = tmp_path / "tx.json"
    f.write_text(json.dumps(tx.to_dict()))
    assert main(["tx", "submit", str(f), "--config", str(cfg)]) == 0
    res = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert res == {"id": tx.id, "status": "committed", "error": None, "message": ""}

    assert main(["tx", "status", tx.id, "--config", str(cfg), "--node", "2"]) == 0
    st = json.loads(capsys.readouterr().out)
    assert st["status"] == "committed" and st["height"] >= 1
    assert main(["tx", "status", "0" * 64, "--data-dir", str(data)]) == 1
    capsys.readouterr()

    dump = tmp_path / "ledger.jsonl"
    assert main(["ledger", "export", "--data-dir", str(data), "-o", str(dump)]) == 0
    blocks = [json.loads(line) for line in dump.read_text().splitlines()]
    assert any(t["id"] == tx.id for b in blocks for t in b["txs"])

    # a second submission of the same file is acknowledged, not re-committed
    assert main(["tx", "submit", str(f), "--data-dir", str(data)]) == 0
    capsys.readouterr()
    assert main(["ledger", "export", "--data-dir", str(data), "-o", str(dump)]) == 0
    again = [json.loads(line) for line in dump.read_text().splitlines()]
    assert sum(t["id"] == tx.id for b in again for t in b["txs"]) == 1


def test_config_errors(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("nodes: 4\nwarp: 9\n")
    assert main(["node", "run", "--config", str(bad), "--data-dir", str(tmp_path)]) == 1
    assert "ConfigError" in capsys.readouterr().err


def test_config_file_json(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"nodes": 5, "block_interval_ms": 50}))
    cfg = ClusterConfig.from_file(p)
    assert cfg.nodes == 5 and cfg.block_interval == 0.05
