import math

import pytest

from fpld import cli


class TestConfigParsing:
    def test_values(self):
        text = """
        # comment
        top_level = 3

        [fig1]
        V = 256
        n = inf
        truth_scale = 0.25
        K_values = [2, 4, 8]
        label = "hello world"
        bare = word
        flag = true
        other = false
        empty = []
        """
        cfg = cli.parse_config_text(text)
        assert cfg[""] == {"top_level": 3}
        s = cfg["fig1"]
        assert s["V"] == 256 and isinstance(s["V"], int)
        assert s["n"] == math.inf
        assert s["truth_scale"] == 0.25
        assert s["K_values"] == [2, 4, 8]
        assert s["label"] == "hello world"
        assert s["bare"] == "word"
        assert s["flag"] is True and s["other"] is False
        assert s["empty"] == []

    def test_hyphen_keys_normalized(self):
        cfg = cli.parse_config_text("bits-at-K-sweep = 4")
        assert cfg[""] == {"bits_at_K_sweep": 4}

    def test_malformed_line(self):
        with pytest.raises(ValueError):
            cli.parse_config_text("just some words")

    def test_format_round_trip(self):
        values = dict(a=1, b=2.5, c="text", d=[1, 2.0, "x"], e=True, f=math.inf)
        text = "\n".join(f"{k} = {cli._format_value(v)}" for k, v in values.items())
        parsed = cli.parse_config_text(text)[""]
        assert parsed == {**values, "d": [1, 2.0, "x"]}


class TestBoundsCommand:
    def test_hand_value_printed(self, capsys):
        rc = cli.main(["bounds", "--K", "4", "--V", "256", "--bits-per-coord", "4", "--L", "1"])
        out = capsys.readouterr().out
        assert rc == 0
        assert "1.627604e-04" in out
        assert "illustrative" in out

    def test_missing_budget_is_usage_error(self, capsys):
        rc = cli.main(["bounds", "--K", "4"])
        assert rc == 2
        assert "usage error" in capsys.readouterr().err

    def test_unknown_flag_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            cli.main(["bounds", "--bogus", "1"])
        assert exc.value.code == 2

    def test_b_list_routes_to_heterogeneous(self, capsys):
        rc = cli.main(["bounds", "--K", "4", "--V", "256", "--B-list", "256,256,768,768"])
        assert rc == 0
        out = capsys.readouterr().out
        # het bandwidth term: (1/96) * (2 * 2**-2 + 2 * 2**-6)
        expected = (1 / 96) * (2 * 2.0 ** -2 + 2 * 2.0 ** -6)
        assert f"{expected:.6e}" in out

    def test_csv_output(self, tmp_path, capsys):
        path = tmp_path / "bounds.csv"
        rc = cli.main(["bounds", "--K", "4", "--V", "256", "--bits-per-coord", "4",
                       "--out", str(path)])
        assert rc == 0
        lines = path.read_text().splitlines()
        assert lines[0].startswith("statistical_term,probe_term,bandwidth_term")
        assert len(lines) == 2

    def test_invalid_parameter_exits_1(self, capsys):
        rc = cli.main(["bounds", "--K", "0", "--V", "256", "--bits-per-coord", "4"])
        assert rc == 1
        assert "error" in capsys.readouterr().err


class TestAllocateCommand:
    def test_reference_instance(self, capsys):
        rc = cli.main(["allocate", "--w", "1,1,16,16", "--Btot", "2048", "--V", "256"])
        assert rc == 0
        out = capsys.readouterr().out
        assert "256, 256, 768, 768" in out
        assert "1, 1, 3, 3" in out

    def test_equal_weights_uniform(self, capsys):
        rc = cli.main(["allocate", "--w", "2,2,2", "--Btot", "30", "--V", "1"])
        assert rc == 0
        assert "10, 10, 10" in capsys.readouterr().out

    def test_infeasible_cap(self, capsys):
        rc = cli.main(["allocate", "--w", "1,1", "--Btot", "10", "--V", "1",
                       "--Bmax", "4"])
        assert rc == 1
        assert "exceeds" in capsys.readouterr().err

    def test_missing_weights_usage_error(self):
        assert cli.main(["allocate", "--Btot", "8"]) == 2


@pytest.fixture()
def tiny_fig1_config(tmp_path):
    path = tmp_path / "fig1.toml"
    path.write_text(
        """
        [fig1]
        V = 32
        m = 8
        K_values = [2]
        bits_values = [2, 3]
        seeds = 2
        """
    )
    return path


class TestExperimentCommands:
    def test_fig1_writes_csv_manifest_and_plots(self, tmp_path, tiny_fig1_config):
        out = tmp_path / "out"
        rc = cli.main(["fig1", "--config", str(tiny_fig1_config), "--out", str(out),
                       "--plot"])
        assert rc == 0
        csv_path = out / "fig1.csv"
        assert csv_path.exists()
        lines = csv_path.read_text().splitlines()
        assert len(lines) == 1 + (1 + 2) * 2  # header + 3 points x 2 seeds
        assert (out / "fig1.manifest.toml").exists()
        assert (out / "fig1_K_sweep.svg").exists()
        assert (out / "fig1_bits_sweep.svg").exists()
        svg = (out / "fig1_bits_sweep.svg").read_text()
        assert svg.startswith("<svg") and "polyline" in svg

    def test_manifest_round_trip_reproduces_run(self, tmp_path, tiny_fig1_config):
        out1, out2 = tmp_path / "o1", tmp_path / "o2"
        assert cli.main(["fig1", "--config", str(tiny_fig1_config), "--out", str(out1)]) == 0
        manifest = out1 / "fig1.manifest.toml"
        assert cli.main(["fig1", "--config", str(manifest), "--out", str(out2)]) == 0
        assert (out1 / "fig1.csv").read_bytes() == (out2 / "fig1.csv").read_bytes()

    def test_seed_flag_changes_results(self, tmp_path, tiny_fig1_config):
        out1, out2 = tmp_path / "s0", tmp_path / "s9"
        cli.main(["fig1", "--config", str(tiny_fig1_config), "--out", str(out1)])
        cli.main(["fig1", "--config", str(tiny_fig1_config), "--out", str(out2),
                  "--seed", "9"])
        assert (out1 / "fig1.csv").read_bytes() != (out2 / "fig1.csv").read_bytes()

    def test_env_seed_default(self, tmp_path, tiny_fig1_config, monkeypatch):
        monkeypatch.setenv("FPLD_SEED", "123")
        out = tmp_path / "env"
        cli.main(["fig1", "--config", str(tiny_fig1_config), "--out", str(out)])
        manifest = (out / "fig1.manifest.toml").read_text()
        assert "seed = 123" in manifest

    def test_unknown_config_key_rejected(self, tmp_path):
        bad = tmp_path / "bad.toml"
        bad.write_text("[fig1]\nnot_a_key = 3\n")
        assert cli.main(["fig1", "--config", str(bad), "--out", str(tmp_path / "x")]) == 1

    def test_fig2_smoke(self, tmp_path):
        cfg = tmp_path / "fig2.toml"
        cfg.write_text(
            """
            [fig2]
            V = 32
            m = 8
            budgets_per_coord = [8.0]
            seeds = 2
            """
        )
        out = tmp_path / "out2"
        assert cli.main(["fig2", "--config", str(cfg), "--out", str(out)]) == 0
        lines = (out / "fig2.csv").read_text().splitlines()
        assert len(lines) == 1 + 3 * 2  # three policies x two seeds

    def test_adaptive_smoke(self, tmp_path, capsys):
        cfg = tmp_path / "ad.toml"
        cfg.write_text("[adaptive]\nV = 32\nm = 8\nseeds = 2\n")
        out = tmp_path / "out3"
        assert cli.main(["adaptive", "--config", str(cfg), "--out", str(out)]) == 0
        printed = capsys.readouterr().out
        assert "mean suboptimality" in printed
        header = (out / "adaptive.csv").read_text().splitlines()[0]
        assert header.endswith(",suboptimality")


class TestValidateCommand:
    def test_fresh_checkout_passes(self, capsys):
        assert cli.main(["validate"]) == 0
        out = capsys.readouterr().out
        assert "FAIL" not in out
        assert out.count("PASS") >= 6

    def test_injected_bias_fails_unbiasedness(self, capsys):
        assert cli.main(["validate", "--inject-bias", "0.02"]) == 1
        out = capsys.readouterr().out
        assert "FAIL  dither unbiasedness" in out
