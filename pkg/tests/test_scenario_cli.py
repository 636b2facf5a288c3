import csv
import json
import os

import pytest

from regfbm import cli, scenario
from regfbm.scenario import ScenarioParseError, ScenarioValidationError

NOISE = """\
kind = "noise-stats"
seed = 42
[noise]
hurst = [0.3, 0.1]
lambda = [1.0, 0.5]
[grid]
n_steps = 32
[mc]
paths = 400
batch = 150
[params]
times = [0.25, 1.0]
"""

ZERO_DRIFT = """\
kind = "girsanov"
seed = 3
[grid]
n_steps = 16
[mc]
paths = 50
batch = 20
[drift]
name = "zero"
"""


def _write(tmp_path, text, name="s.toml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


class TestParsing:
    def test_defaults_fill_every_key(self):
        tree = scenario.parse('kind = "averaging"')
        assert tree["params"] == scenario.PARAMS["averaging"]
        assert tree["grid"] == scenario.BASE["grid"]

    @pytest.mark.parametrize(
        "text",
        [
            'colour = "red"',
            '[grid]\nstep = 4',
            'kind = "girsanov"\n[params]\nsampler = "volterra"',
            'kind = "teleport"',
            '[drift]\nname = "cubic"',
            'seed = -1',
            '[grid]\nn_steps = 1.5',
            '[grid]\nn_steps = 0',
            '[mc]\npaths = true',
            'noise = 3',
        ],
    )
    def test_strict_validation(self, text):
        with pytest.raises(ScenarioValidationError):
            scenario.parse(text)

    def test_bad_toml(self):
        with pytest.raises(ScenarioParseError):
            scenario.parse("kind = ")

    def test_integers_promote_to_floats(self):
        tree = scenario.parse("[grid]\nhorizon = 2")
        assert tree["grid"]["horizon"] == 2.0 and isinstance(tree["grid"]["horizon"], float)

    def test_hash_depends_on_content(self):
        a = scenario.parse("seed = 1")
        assert scenario.scenario_hash(a) == scenario.scenario_hash(scenario.parse("seed = 1"))
        assert scenario.scenario_hash(a) != scenario.scenario_hash(scenario.parse("seed = 2"))


class TestCatalog:
    def test_nonempty(self):
        assert len(scenario.list_scenarios()) >= 10

    @pytest.mark.parametrize("criterion", range(1, 11))
    def test_every_criterion_has_a_template(self, criterion):
        name = scenario.CRITERIA[criterion]
        assert name in scenario.CATALOG

    @pytest.mark.parametrize("name", sorted(scenario.CATALOG))
    def test_templates_validate(self, name):
        tree = scenario.parse(scenario.template(name))
        assert tree["kind"] in scenario.KINDS

    def test_unknown_template(self):
        with pytest.raises(KeyError):
            scenario.template("nope")


class TestRun:
    def test_determinism_byte_identical(self, tmp_path):
        cfg = _write(tmp_path, NOISE)
        for out in ("a", "b"):
            assert cli.main(["run", "--config", cfg, "--out", str(tmp_path / out), "--quiet"]) == 0
        a = (tmp_path / "a" / "noise-stats.csv").read_bytes()
        assert a == (tmp_path / "b" / "noise-stats.csv").read_bytes()
        assert a.splitlines()[0] == b"statistic,t,mc,se,exact,z,pass"

    def test_seed_override_changes_output(self, tmp_path):
        cfg = _write(tmp_path, NOISE)
        cli.main(["run", "--config", cfg, "--out", str(tmp_path / "a"), "--quiet"])
        cli.main(["run", "--config", cfg, "--out", str(tmp_path / "b"), "--quiet", "--seed", "7"])
        assert (tmp_path / "a" / "noise-stats.csv").read_bytes() != (tmp_path / "b" / "noise-stats.csv").read_bytes()
        meta = json.loads((tmp_path / "b" / "noise-stats.json").read_text())
        assert meta["seed"] == 7

    def test_zero_drift_density_is_one(self, tmp_path):
        cfg = _write(tmp_path, ZERO_DRIFT)
        assert cli.main(["run", "--config", cfg, "--out", str(tmp_path), "--quiet"]) == 0
        with open(tmp_path / "girsanov.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 50
        assert all(r["xi"] == "1" for r in rows)

    def test_sidecar_fields(self, tmp_path):
        cfg = _write(tmp_path, NOISE)
        cli.main(["run", "--config", cfg, "--out", str(tmp_path), "--quiet"])
        meta = json.loads((tmp_path / "noise-stats.json").read_text())
        for key in ("scenario_hash", "seed", "wall_time_s", "module", "assertions"):
            assert key in meta
        assert meta["module"] == "regnoise"
        assert meta["scenario_hash"] == scenario.scenario_hash(scenario.load(cfg))
        assert all(isinstance(v, bool) for v in meta["assertions"].values())

    def test_kernel_identity_columns(self, tmp_path):
        text = 'kind = "kernel-identity"\n[params]\nhurst = [0.2]\nn_pairs = 3'
        cli.main(["run", "--config", _write(tmp_path, text), "--out", str(tmp_path), "--quiet"])
        with open(tmp_path / "kernel-identity.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["H", "t", "s", "quadrature", "closed_form", "rel_err"]
        assert len(rows) == 4

    def test_stem(self, tmp_path):
        text = NOISE + '[output]\nstem = "mine"\n'
        cli.main(["run", "--config", _write(tmp_path, text), "--out", str(tmp_path), "--quiet"])
        assert os.path.exists(tmp_path / "mine.csv") and os.path.exists(tmp_path / "mine.json")


class TestExitCodes:
    def _error(self, tmp_path):
        return json.loads((tmp_path / "out" / "error.json").read_text())

    def test_parse_error(self, tmp_path):
        cfg = _write(tmp_path, "kind = [")
        assert cli.main(["run", "--config", cfg, "--out", str(tmp_path / "out"), "--quiet"]) == 2
        assert self._error(tmp_path)["error"] == "ScenarioParseError"

    def test_missing_file(self, tmp_path):
        assert cli.main(["run", "--config", str(tmp_path / "none.toml"), "--out", str(tmp_path / "out")]) == 2

    def test_unknown_key(self, tmp_path):
        cfg = _write(tmp_path, NOISE + "[extra]\nx = 1\n")
        assert cli.main(["run", "--config", cfg, "--out", str(tmp_path / "out"), "--quiet"]) == 3
        rec = self._error(tmp_path)
        assert rec["exit_code"] == 3 and "extra" in rec["message"]

    def test_domain_error_is_validation(self, tmp_path):
        cfg = _write(tmp_path, 'kind = "lemmas"\n[params]\nwhich = ["nonsense"]')
        assert cli.main(["run", "--config", cfg, "--out", str(tmp_path / "out"), "--quiet"]) == 3

    def test_numeric_failure(self, tmp_path):
        text = 'kind = "girsanov"\n[grid]\nn_steps = 8\n[mc]\npaths = 4\nbatch = 4\n'
        text += '[drift]\nname = "linear"\ncoef = 1e308\n[params]\nx0 = 10.0\n'
        cfg = _write(tmp_path, text)
        with pytest.warns(RuntimeWarning):
            code = cli.main(["run", "--config", cfg, "--out", str(tmp_path / "out"), "--quiet"])
        assert code == 4
        assert self._error(tmp_path)["error"] == "NumericFailure"

    def test_seed_out_of_range(self, tmp_path):
        cfg = _write(tmp_path, NOISE)
        assert cli.main(["run", "--config", cfg, "--out", str(tmp_path / "out"), "--seed", str(2**64)]) == 3

    def test_negative_threads(self, tmp_path):
        cfg = _write(tmp_path, NOISE)
        assert cli.main(["run", "--config", cfg, "--out", str(tmp_path / "out"), "--threads", "-1"]) == 3


class TestCommands:
    def test_list(self, capsys):
        assert cli.main(["list"]) == 0
        out = capsys.readouterr().out
        for name in scenario.CATALOG:
            assert name in out

    def test_template_round_trip(self, capsys, tmp_path):
        assert cli.main(["template", "moment-bound"]) == 0
        text = capsys.readouterr().out
        assert scenario.parse(text) == scenario.parse(scenario.CATALOG["moment-bound"])

    def test_template_unknown(self, capsys):
        assert cli.main(["template", "nope"]) == 3

    def test_run_template(self, tmp_path):
        assert cli.main(["run", "--template", "averaging-duality", "--out", str(tmp_path), "--quiet"]) == 0
        meta = json.loads((tmp_path / "averaging.json").read_text())
        assert meta["passed"]
