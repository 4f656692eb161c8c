import csv
import math

import pytest

from cplxv import cli
from cplxv.solver import ConfigError


def cfg(tmp_path, **kw):
    base = dict(out=str(tmp_path / "out"))
    base.update(kw)
    return cli.ExperimentConfig(**base)


def read(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_parse_config_aliases_and_comments():
    c = cli.parse_config("n = 2  # dimension\nlambda = 0.5\nLambda = 2\nh_levels = 0.2, 0.1\n"
                         "catalog = quadratic, quartic\nradius = 1.0\n")
    assert (c.n, c.lam, c.Lam, c.h_levels, c.catalog, c.size) == (2, 0.5, 2.0, (0.2, 0.1), ("quadratic", "quartic"), 1.0)
    assert c.p_exp == 3.0
    with pytest.raises(ConfigError, match="unknown key"):
        cli.parse_config("colour = red\n")
    with pytest.raises(ConfigError, match="key = value"):
        cli.parse_config("n 2\n")


@pytest.mark.parametrize("kw,msg", [
    (dict(h_levels=(0.05, 0.1)), "decreasing"),
    (dict(catalog=("cubic_foo",)), "valid ids: affine"),
    (dict(checks=("nope",)), "valid checks"),
    (dict(lam=2.0, Lam=1.0), "lambda"),
    (dict(n=2, p_exp=2.0), "p_exp"),
    (dict(dt=1.0), "dt"),
])
def test_config_validation(tmp_path, kw, msg):
    with pytest.raises(ConfigError, match=msg):
        cfg(tmp_path, **kw)


def test_gen_counts(tmp_path):
    one = cli.cmd_gen(cfg(tmp_path, h_levels=(0.05,)))
    assert len(one) == 1
    four = cli.cmd_gen(cfg(tmp_path, catalog=("quadratic", "quartic"), h_levels=(0.1, 0.05)))
    assert len(four) == 4 and len(set(four)) == 4


def test_solve_rows_and_zero_instance(tmp_path):
    c = cfg(tmp_path, catalog=("quadratic", "zero"), h_levels=(0.1,))
    cli.cmd_gen(c)
    rows, ok = cli.cmd_solve(c)
    assert ok
    by = {r[0]: r for r in rows}
    assert by["zero"][2] <= 2 and by["zero"][4] == 0.0
    assert by["quadratic"][4] < 10 * 0.1 ** 2
    data = read(tmp_path / "out" / "solve.csv")
    assert [d["instance"] for d in data] == ["quadratic", "zero"] and all(d["status"] == "ok" for d in data)


def test_verify_examples(tmp_path):
    c = cfg(tmp_path, catalog=("quadratic",), h_levels=(0.05,))
    cli.cmd_gen(c)
    cli.cmd_solve(c)
    reps, ok = cli.cmd_verify(c, ("abp", "viscosity", "barrier"))
    assert ok
    names = [r.name for r in reps]
    assert names == ["abp:quadratic", "viscosity:quadratic", "barrier_q3", "barrier_bound", "barrier_sign"]
    assert math.isfinite(reps[0].empirical_constant) and reps[1].lhs == 0
    rows = read(tmp_path / "out" / "verify.csv")
    assert list(rows[0]) == list(cli.CSV_FIELDS) and all(r["pass"] == "1" for r in rows)


def test_verify_missing_inputs(tmp_path):
    c = cfg(tmp_path)
    with pytest.raises(cli.MissingInputError, match="run gen"):
        cli.cmd_verify(c, ("abp",))
    with pytest.raises(cli.MissingInputError):
        cli.cmd_solve(c)


def test_sweep_rejects_single_level(tmp_path):
    with pytest.raises(ConfigError, match="2 h levels"):
        cli.cmd_sweep(cfg(tmp_path, h_levels=(0.1,)))


def test_sweep_orders_and_holder_alpha(tmp_path):
    c = cfg(tmp_path, catalog=("quartic",), h_levels=(0.1, 0.05, 0.025), checks=("holder",))
    rows, ok = cli.cmd_sweep(c)
    assert ok
    err = [r for r in rows if r[1] == "error"]
    assert float(err[-1][5]) == pytest.approx(2.0, abs=0.1)
    alphas = [float(r[3]) for r in rows if r[1] == "holder_alpha"]
    assert len(alphas) == 3 and min(alphas) > 0.9


def test_sweep_deterministic_and_workers(tmp_path):
    texts = []
    for i, workers in enumerate((1, 1, 2)):
        c = cfg(tmp_path / str(i), catalog=("quadratic", "gaussian"), h_levels=(0.1, 0.05),
                checks=("abp", "holder", "csub"), seed=7)
        cli.cmd_sweep(c, workers=workers)
        texts.append((tmp_path / str(i) / "out" / "sweep.csv").read_bytes())
    assert texts[0] == texts[1] == texts[2]


def test_main_exit_codes(tmp_path, monkeypatch, capsys):
    out = str(tmp_path / "o")
    conf = tmp_path / "c.cfg"
    conf.write_text("h_levels = 0.1, 0.05\ncatalog = quadratic\nchecks = abp\n")
    assert cli.main(["verify", "--config", str(conf), "--out", out]) == 2
    assert "missing input" in capsys.readouterr().err
    assert cli.main(["sweep", "--config", str(conf), "--out", out]) == 0
    assert cli.main(["report", "--config", str(conf), "--out", out]) == 0
    assert "sweep.csv" in capsys.readouterr().out
    # a failing check turns into exit code 1
    strict = tmp_path / "s.cfg"
    strict.write_text("h_levels = 0.1, 0.05\ncatalog = quadratic\nchecks = abp\nc_cap = 1e-6\n")
    assert cli.main(["verify", "--config", str(strict), "--out", out]) == 1
    bad = tmp_path / "b.cfg"
    bad.write_text("catalog = cubic_foo\n")
    assert cli.main(["gen", "--config", str(bad), "--out", out]) == 2
    monkeypatch.setenv("CPLXV_LOG", "loud")
    assert cli.main(["gen", "--config", str(conf), "--out", out]) == 2


def test_report_without_csv(tmp_path):
    with pytest.raises(cli.MissingInputError):
        cli.cmd_report(cfg(tmp_path))
