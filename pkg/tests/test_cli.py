"""
Tests for the cdnsim launcher.
"""
import builtins
import csv
import os
import runpy

import numpy as np
import pytest

from src.cdnsim import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, build_workload, main, parse_instance, UsageError
from src.data_manager import load_manifest, load_profiles, load_stream

TRACE = ("timestamp,cache_id,file_id,duration_minutes\n"
         "0,0,a,10\n1,0,b,20\n2,0,a,10\n4,0,a,10\n5,0,b,20\n9,0,c,5\n")


def _write(directory, name, text):
    path = os.path.join(directory, name)
    with open(path, 'w', encoding='utf-8') as f:
        f.write(text)
    return path


def _rows(path):
    with open(path, newline='', encoding='utf-8') as f:
        return list(csv.DictReader(f))


def _manifest(directory, policies="lru", sizes="5"):
    return _write(directory, "exp.ini",
                  "[workload]\nfiles = 50\nrate = 5\n"
                  "[run]\nhorizon = 10\n"
                  f"[placement]\npolicies = {policies}\ncache_sizes = {sizes}\n")


class TestSolveSubproblem:
    """Tests for the solve-subproblem command."""

    def test_saturated_instance(self, output_dir, capsys):
        """Test lambda = (3, 1) with C = 2."""
        path = _write(output_dir, "inst.txt", "# capacity=2 penalty=quadratic a=1\n3\n1\n")
        assert main(["solve-subproblem", path]) == EXIT_OK
        out = capsys.readouterr().out.splitlines()
        assert out == ["u = 2 0", "upsilon = 1"]

    @pytest.mark.parametrize("text", ["3\n1\n", "# capacity=x penalty=quadratic a=1\n1\n",
                                      "# penalty=quadratic a=1\n1\n", "# capacity=2 penalty=cubic\n1\n",
                                      "# capacity=2 penalty=quadratic a=1\nfoo\n"])
    def test_bad_instance(self, output_dir, text):
        """Test that malformed instance files are usage errors."""
        path = _write(output_dir, "inst.txt", text)
        with pytest.raises(UsageError):
            parse_instance(path)
        assert main(["solve-subproblem", path]) == EXIT_CONFIG


class TestGenWorkload:
    """Tests for the gen-workload command."""

    @pytest.mark.parametrize("kind", ["zipf", "decay"])
    def test_writes_stream(self, output_dir, kind):
        """Test that a readable stream file is written."""
        out = os.path.join(output_dir, "stream.csv")
        assert main(["gen-workload", kind, "--files", "20", "--horizon", "10", "--out", out, "--seed", "3"]) == EXIT_OK
        stream = load_stream(out)
        assert len(stream) > 0
        assert stream.file.max() < 20

    def test_needs_out(self):
        """Test that --out is required."""
        assert main(["gen-workload", "zipf"]) == EXIT_CONFIG

    def test_upscale_needs_decay(self, output_dir):
        """Test that --upscale is rejected for a static Zipf stream."""
        out = os.path.join(output_dir, "stream.csv")
        assert main(["gen-workload", "zipf", "--out", out, "--upscale", "10"]) == EXIT_CONFIG
        assert not os.path.exists(out)

    def test_unknown_kind(self):
        """Test that an unknown workload kind exits with the configuration status."""
        with pytest.raises(SystemExit) as info:
            main(["gen-workload", "bursty"])
        assert info.value.code == EXIT_CONFIG


class TestFit:
    """Tests for the fit command."""

    def test_fit_and_upscale(self, output_dir):
        """Test fitted request counts multiplied by ten."""
        trace = _write(output_dir, "trace.csv", TRACE)
        out = os.path.join(output_dir, "profiles.csv")
        assert main(["fit", trace, "--out", out, "--upscale", "10"]) == EXIT_OK
        profiles = load_profiles(out)
        assert [p.V for p in profiles] == [30, 20, 10]
        assert profiles[0].omega == pytest.approx(1 / 3)

    def test_empty_trace(self, output_dir):
        """Test that an empty trace is a configuration error."""
        trace = _write(output_dir, "trace.csv", "")
        assert main(["fit", trace, "--out", os.path.join(output_dir, "p.csv")]) == EXIT_CONFIG


class TestSimulate:
    """Tests for the simulate command."""

    def test_single_cell(self, output_dir):
        """Test the per-cell artifacts and the sweep summary."""
        out = os.path.join(output_dir, "results")
        assert main(["simulate", "--config", _manifest(output_dir), "--out", out]) == EXIT_OK
        cell = os.path.join(out, "lru_size5_tv1_seed0")
        assert os.path.exists(os.path.join(cell, "metrics.csv"))
        assert os.path.exists(os.path.join(cell, "summary.csv"))
        assert len(_rows(os.path.join(cell, "metrics.csv"))) == 10
        rows = _rows(os.path.join(out, "summary.csv"))
        assert len(rows) == 1 and rows[0]['status'] == 'ok'

    def test_sweep_is_reproducible(self, output_dir):
        """Test a 3 x 2 sweep and an identical rerun."""
        config = _write(output_dir, "exp.ini",
                        "[workload]\nfiles = 50\nrate = 5\n[run]\nhorizon = 10\nevents = yes\n"
                        "[placement]\npolicies = topx, lru, lfu\ncache_sizes = 2, 5\n")
        outputs = []
        for name in ("a", "b"):
            out = os.path.join(output_dir, name)
            assert main(["simulate", "--config", config, "--out", out]) == EXIT_OK
            with open(os.path.join(out, "summary.csv"), encoding='utf-8') as f:
                outputs.append(f.read())
            assert os.path.exists(os.path.join(out, "comparison.csv"))
            assert os.path.exists(os.path.join(out, "topx_size2_tv1_seed0", "events.csv"))
        assert len(outputs[0].splitlines()) == 7
        assert outputs[0] == outputs[1]

    def test_seed_override(self, output_dir):
        """Test that --seed replaces the manifest seeds."""
        out = os.path.join(output_dir, "results")
        assert main(["simulate", "--config", _manifest(output_dir), "--out", out, "--seed", "9"]) == EXIT_OK
        assert os.path.isdir(os.path.join(out, "lru_size5_tv1_seed9"))

    def test_needs_config(self):
        """Test that simulate without a manifest is a usage error."""
        assert main(["simulate"]) == EXIT_CONFIG

    @pytest.mark.parametrize("extra", ["[network]\nlinks = 3\n", "[run]\ntopology = three\n",
                                       "[penalty]\ncache = cubic a=1\n", "[workload]\nkind = poisson\n"])
    def test_config_errors(self, output_dir, extra):
        """Test that bad manifests exit before any cell runs."""
        path = _write(output_dir, "bad.ini", extra)
        assert main(["simulate", "--config", path, "--out", os.path.join(output_dir, "r")]) == EXIT_CONFIG
        assert not os.path.exists(os.path.join(output_dir, "r"))

    def test_leastxf_needs_topology_two(self, output_dir):
        """Test that per-request admission is rejected in topology one."""
        path = _write(output_dir, "bad.ini", "[run]\ntopology = one\n[placement]\npolicies = leastxf\n")
        assert main(["simulate", "--config", path]) == EXIT_CONFIG

    def test_failed_cell(self, output_dir):
        """Test that a cell failing at run time gives the runtime status."""
        path = _write(output_dir, "exp.ini", "[workload]\nkind = trace\n"
                      f"trace = {os.path.join(output_dir, 'missing.csv')}\n[placement]\npolicies = lru\n")
        out = os.path.join(output_dir, "results")
        assert main(["simulate", "--config", path, "--out", out]) == EXIT_RUNTIME
        assert _rows(os.path.join(out, "summary.csv"))[0]['status'].startswith("failed")


class TestBuildWorkload:
    """Tests for build_workload()."""

    def test_decay_sizes_independent_of_release(self, output_dir):
        """Test that file sizes do not follow the first request time of a decay workload."""
        path = _write(output_dir, "exp.ini", "[workload]\nkind = decay\nfiles = 2000\n[run]\nhorizon = 200\n")
        catalog, stream = build_workload(load_manifest(path).settings, seed=0)
        first = np.full(catalog.files, np.inf)
        np.minimum.at(first, stream.file, stream.time)
        seen = np.isfinite(first)
        assert seen.sum() > 1000
        assert abs(np.corrcoef(first[seen], catalog.sizes[seen])[0, 1]) < 0.1

    def test_same_seed_same_workload(self, output_dir):
        """Test that one seed reproduces the catalog and the stream."""
        path = _write(output_dir, "exp.ini", "[workload]\nfiles = 100\nrate = 10\n[run]\nhorizon = 20\n")
        settings = load_manifest(path).settings
        (cat_a, a), (cat_b, b) = build_workload(settings, 4), build_workload(settings, 4)
        np.testing.assert_array_equal(cat_a.sizes, cat_b.sizes)
        np.testing.assert_array_equal(a.file, b.file)


class TestDependencies:
    """Tests for the dependency check of the launcher script."""

    @pytest.fixture
    def without_pandas(self, monkeypatch):
        real_import = builtins.__import__

        def fake_import(name, *args, **kwargs):
            if name.split('.')[0] == 'pandas':
                raise ImportError("No module named 'pandas'")
            return real_import(name, *args, **kwargs)

        monkeypatch.setattr(builtins, '__import__', fake_import)

    def test_missing_package_hint(self, without_pandas, capsys):
        """Test that the script stops with the install hint before importing pandas."""
        script = os.path.join(os.path.dirname(__file__), os.pardir, 'src', 'cdnsim.py')
        with pytest.raises(SystemExit) as info:
            runpy.run_path(script, run_name='__main__')
        assert info.value.code == EXIT_RUNTIME
        assert "pip install -r requirements.txt" in capsys.readouterr().err
