import json

import pytest

from cidlab import cli
from cidlab.data_io import load_dataset

GEN = ["--n-products", "6", "--n-steps", "4", "--trading-start", "-90"]
STORE = ["--soc-max", "5", "--c-max", "5", "--g-max", "5", "--soc-init", "2.5", "--soc-term", "2.5"]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    assert cli.main(["gen-data", "--days", "6", "--seed", "2", "--out", str(data)] + GEN) == 0
    cfg = root / "train.cfg"
    cfg.write_text("# tiny run\nepisodes = 3\nep = 2\nepochs = 3\nh_max = 2\nsplit = 0.5\n")
    model = root / "model.ckpt"
    assert cli.main(["--config", str(cfg), "train", "--data", str(data), "--out", str(model)] + STORE) == 0
    return root, data, model


def test_gen_data(workspace):
    root, data, _ = workspace
    assert len(load_dataset(data)) == 6
    layout = json.loads((data / "calendar.json").read_text())
    assert layout == {"n_products": 6, "n_steps": 4, "trading_start": -90, "trading_step": 15}


def test_train_meta(workspace):
    from cidlab.fitted_q import load_checkpoint
    _, _, model = workspace
    ens, meta = load_checkpoint(model)
    assert len(meta["train_days"]) == 3 and len(meta["test_days"]) == 3
    assert meta["trajectories"] == 9 and ens.h_max == 2


def test_backtest_and_report(workspace, capsys):
    root, data, model = workspace
    out = root / "rep"
    cli.main(["backtest", "--data", str(data), "--model", str(model), "--model", str(model), "--out", str(out)]
             + STORE)
    table = capsys.readouterr().out
    assert "FQ returns" in table and "sum" in table
    for name in ("fq_returns.csv", "ri_returns.csv", "report.csv", "ratios.hist"):
        assert (out / name).exists()
    cli.main(["report", "--fq", str(out / "fq_returns.csv"), "--ri", str(out / "ri_returns.csv")])
    assert capsys.readouterr().out.splitlines()[:8] == table.splitlines()[:8]


def test_report_is_reproducible(workspace, capsys):
    root, _, _ = workspace
    out = root / "rep2"
    cli.main(["report", "--fq", str(root / "rep" / "fq_returns.csv"), "--ri", str(root / "rep" / "ri_returns.csv"),
              "--out", str(out / "r.csv")])
    first = capsys.readouterr().out
    cli.main(["report", "--fq", str(root / "rep" / "fq_returns.csv"), "--ri", str(root / "rep" / "ri_returns.csv")])
    assert capsys.readouterr().out == first


@pytest.mark.parametrize("policy", ["ri", "idle", "model"])
def test_simulate(workspace, capsys, policy):
    _, data, model = workspace
    day = sorted(data.glob("day_*.csv"))[0]
    arg = f"model:{model}" if policy == "model" else policy
    cli.main(["simulate", "--day", str(day), "--policy", arg] + STORE)
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 5 and lines[-1].startswith("day=") and f"policy={arg}" in lines[-1]
    if policy == "idle":
        assert lines[-1].endswith("return=0.00")


def test_simulate_unknown_policy(workspace):
    _, data, _ = workspace
    day = sorted(data.glob("day_*.csv"))[0]
    with pytest.raises(SystemExit):
        cli.main(["simulate", "--day", str(day), "--policy", "random"])


def test_flags_override_config(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("days = 9\nseed = 4\n")
    args = cli.parse_args(["--config", str(cfg), "gen-data", "--days", "2"])
    assert args.days == 2 and args.seed == 4


def test_data_root_env(monkeypatch, tmp_path):
    monkeypatch.setenv("CIDLAB_DATA", str(tmp_path))
    assert cli.parse_args(["train"]).data == str(tmp_path)


def test_bad_config_line(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("days 9\n")
    with pytest.raises(SystemExit, match="c.cfg:1"):
        cli.parse_args(["--config", str(cfg), "gen-data"])
