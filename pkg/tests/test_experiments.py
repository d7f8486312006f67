import numpy as np
import pytest

from structsparse.harness import config as C
from structsparse.harness.experiments import (EXPERIMENTS, ExperimentReport, Table,
                                              experiment_config, run_experiment)

TINY_STRUCTURED = dict(m="16", n_groups="4", group_size="8", n_train="150", n_test="50",
                       depths="1,2", seeds="0", epochs="5")
TINY_ONLINE = dict(m="8", p="8", generator_atoms="6", regime_length="300", window="100",
                   step="50", heldout="200", offline_iters="2", regimes="2", k_nonzero="2")
TINY_MIN_OBJ = dict(protocol="min_objective", m="10", atoms_per_class="12", n_train="40",
                    n_test="20", seeds="0", epochs="2")
TINY_GROUP = dict(protocol="group_energy", m="20", n_groups="4", group_size="6", n_train="80",
                  n_test="20", pool="5", seeds="0", epochs="2",
                  methods="exact,discriminative,objective,regression,unstructured")


def _files(report, tmp_path):
    return {p.name: p.read_bytes() for p in report.write(tmp_path)}


class TestSynthStructured:
    def test_tiny_run(self, tmp_path):
        rep = run_experiment("synth_structured", overrides=TINY_STRUCTURED)
        t = rep.tables["code_error"]
        assert set(t.column("method")) == {"structured", "unstructured"}
        assert set(t.column("T")) == {1, 2}
        assert len(t.rows) == 2 * 2 * 2
        assert all(float(v) >= 0 for v in t.column("code_mse"))
        names = set(_files(rep, tmp_path))
        assert names == {"synth_structured_config.txt", "synth_structured_code_error.csv",
                         "synth_structured_timing.csv"}

    def test_byte_identical(self, tmp_path):
        a = _files(run_experiment("synth_structured", overrides=TINY_STRUCTURED), tmp_path / "a")
        b = _files(run_experiment("synth_structured", overrides=TINY_STRUCTURED), tmp_path / "b")
        for name in a:
            if not name.endswith("_timing.csv"):
                assert a[name] == b[name], name


class TestOnlineRegimes:
    def test_tiny_run(self, tmp_path):
        rep = run_experiment("online_regimes", overrides=TINY_ONLINE)
        w = rep.tables["windows"]
        assert w.header == ("window", "regime", "start", "stop", "mean_objective", "dict_updated")
        assert len(w.rows) == (600 - 100) // 50 + 1
        assert set(w.column("regime")) == {-1, 0, 1}
        s = rep.tables["summary"]
        assert s.column("regime") == [0, 1]
        files = _files(rep, tmp_path)
        assert files["online_regimes_windows.csv"].startswith(b"window,regime,start,stop,mean_objective")

    def test_byte_identical(self, tmp_path):
        a = _files(run_experiment("online_regimes", overrides=TINY_ONLINE), tmp_path / "a")
        b = _files(run_experiment("online_regimes", overrides=TINY_ONLINE), tmp_path / "b")
        assert {k: v for k, v in a.items() if "timing" not in k} == \
            {k: v for k, v in b.items() if "timing" not in k}


class TestClassifySynth:
    def test_min_objective(self):
        rep = run_experiment("classify_synth", overrides=TINY_MIN_OBJ)
        t = rep.tables["accuracy"]
        assert t.column("method") == ["exact", "encoder"]
        assert all(0 <= float(v) <= 1 for v in t.column("accuracy"))

    def test_group_energy(self, tmp_path):
        rep = run_experiment("classify_synth", overrides=TINY_GROUP)
        t = rep.tables["accuracy"]
        assert t.column("method") == ["exact", "discriminative", "objective", "regression",
                                      "unstructured"]
        a = _files(rep, tmp_path / "a")
        b = _files(run_experiment("classify_synth", overrides=TINY_GROUP), tmp_path / "b")
        assert a["classify_synth_accuracy.csv"] == b["classify_synth_accuracy.csv"]

    def test_protocol_schemas(self):
        assert experiment_config("classify_synth")["lam"] == 0.1
        assert experiment_config("classify_synth", {"protocol": "group_energy"})["lam"] == 0.2
        with pytest.raises(C.ConfigError, match="pool"):
            experiment_config("classify_synth", {"pool": "3"})

    def test_bad_method(self):
        with pytest.raises(C.ConfigError, match="methods"):
            run_experiment("classify_synth", overrides={**TINY_GROUP, "methods": "exact,magic"})


class TestConfig:
    def test_unknown_experiment(self):
        with pytest.raises(ValueError, match="unknown experiment"):
            run_experiment("bogus")

    def test_unknown_field(self):
        with pytest.raises(C.ConfigError, match="colour"):
            experiment_config("synth_structured", {"colour": "red"})

    @pytest.mark.parametrize("key,value", [("m", "zero"), ("m", "-3"), ("seeds", ""),
                                           ("active_fraction", "2")])
    def test_bad_value_names_field(self, key, value):
        with pytest.raises(C.ConfigError, match=key):
            experiment_config("synth_structured", {key: value})

    def test_config_file(self, tmp_path):
        path = tmp_path / "c.txt"
        path.write_text("# tiny\nm = 12\nseeds = 3, 4\n")
        cfg = experiment_config("synth_structured", C.gather(path, overrides={"m": "14"}))
        assert cfg["m"] == 14 and cfg["seeds"] == (3, 4)

    @pytest.mark.parametrize("name", sorted(EXPERIMENTS))
    def test_echo_round_trip(self, name):
        cfg = experiment_config(name)
        from structsparse.harness.io import parse_config
        assert experiment_config(name, parse_config(C.to_text(cfg))) == cfg

    def test_paper_defaults(self):
        on = experiment_config("online_regimes")
        assert (on["lam"], on["p"], on["T"], on["window"], on["step"]) == (1.0, 64, 4, 1000, 100)
        ge = experiment_config("classify_synth", {"protocol": "group_energy"})
        assert (ge["lam"], ge["mu"], ge["T"], ge["group_size"]) == (0.2, 0.05, 2, 50)
        mo = experiment_config("classify_synth")
        assert (mo["lam"], mo["T"]) == (0.1, 5)

    def test_overrides_parse(self):
        assert C.parse_overrides(["a=1", "b = x=y"]) == {"a": "1", "b": "x=y"}
        with pytest.raises(C.ConfigError):
            C.parse_overrides(["novalue"])


def test_table_formatting():
    t = Table(("a", "b"))
    t.add(np.int64(3), np.float64(0.1))
    assert t.text() == "a,b\n3,0.1\n"
    rep = ExperimentReport("x", {"k": 1}, {"t": t}, {"stage": 0.5}, (0,))
    assert rep.seeds == (0,)
