"""Command-line interface tests: subcommands, config handling, exit codes."""

import json
import os

import pytest

from tagrefinery.cli import DEFAULT_CONFIG, ConfigError, main, resolve_config


TINY = [
    "--set", "synth.n_clusters=2",
    "--set", "synth.images_per_cluster=6",
    "--set", "synth.n_tags=12",
    "--set", "synth.tags_per_cluster=3",
    "--set", "synth.tag_presence=1.0",
    "--set", "synth.missing_rate=0.2",
    "--set", "synth.inaccurate_rate=0.1",
]


def make_bundle(tmp_path, extra=()):
    data_dir = tmp_path / "data"
    rc = main(["synth", "--output-dir", str(data_dir), *TINY, *extra])
    assert rc == 0
    return str(data_dir / "synthetic.manifest")


class TestConfigResolution:
    def test_defaults_plus_set_overrides(self, tmp_path):
        class Args:
            config = None
            set = ["refine.mu=0.55", "k=3"]
            manifest = None
            output_dir = str(tmp_path)
            threads = None
            k = None

        cfg = resolve_config(Args())
        assert cfg["refine"]["mu"] == 0.55
        assert cfg["k"] == 3
        assert cfg["output_dir"] == str(tmp_path)

    def test_unknown_key_rejected(self):
        class Args:
            config = None
            set = ["refine.bogus=1"]

        with pytest.raises(ConfigError, match="bogus"):
            resolve_config(Args())

    def test_config_file_merge(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"k": 7, "ssc": {"mu": 3.5}}))

        class Args:
            config = str(path)
            set = None

        cfg = resolve_config(Args())
        assert cfg["k"] == 7
        assert cfg["ssc"]["mu"] == 3.5
        assert cfg["ssc"]["tol"] == DEFAULT_CONFIG["ssc"]["tol"]

    def test_unknown_config_file_key(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"nonsense": 1}))

        class Args:
            config = str(path)
            set = None

        with pytest.raises(ConfigError, match="nonsense"):
            resolve_config(Args())


class TestExitCodes:
    def test_unknown_command_exits_two(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2

    def test_invalid_mu_exits_two(self, tmp_path):
        manifest = make_bundle(tmp_path)
        rc = main([
            "refine", "--manifest", manifest,
            "--output-dir", str(tmp_path / "out"),
            "--set", "refine.mu=1.2",
        ])
        assert rc == 2

    def test_missing_manifest_exits_two(self, tmp_path):
        rc = main(["cluster", "--output-dir", str(tmp_path / "out")])
        assert rc == 2

    def test_nonconvergent_ssc_exits_one_with_artifacts(self, tmp_path):
        manifest = make_bundle(tmp_path)
        out = tmp_path / "out"
        rc = main([
            "cluster", "--manifest", manifest, "--output-dir", str(out),
            "--set", "ssc.max_iters=2",
        ])
        assert rc == 1
        assert (out / "z.mtx").exists()
        assert (out / "labels.txt").exists()


class TestPipeline:
    def test_full_pipeline_artifacts(self, tmp_path):
        manifest = make_bundle(tmp_path)
        out = tmp_path / "run"
        rc = main([
            "pipeline", "--manifest", manifest, "--output-dir", str(out),
            "--k", "2",
            "--set", "eval_n=[2,3]",
            "--set", "refine.rank=4",
        ])
        assert rc == 0
        for name in (
            "z.mtx", "affinity.mtx", "labels.txt", "completed.mtx",
            "refined.mtx", "refined_scores.mtx", "factors_p.mtx", "factors_q.mtx",
            "eval_at_2.txt", "eval_at_3.txt", "config.resolved.json",
        ):
            assert (out / name).exists(), name
        text = (out / "eval_at_2.txt").read_text()
        fields = dict(line.split(": ") for line in text.strip().splitlines())
        assert 0.0 <= float(fields["ap"]) <= 1.0
        assert int(fields["images_evaluated"]) == 12

    def test_snapshot_rerun_is_bit_identical(self, tmp_path):
        manifest = make_bundle(tmp_path)
        out = tmp_path / "run"
        rc = main([
            "pipeline", "--manifest", manifest, "--output-dir", str(out),
            "--k", "2", "--set", "refine.rank=4", "--set", "eval_n=[2]",
        ])
        assert rc == 0
        artifacts = [
            "z.mtx", "affinity.mtx", "labels.txt", "completed.mtx",
            "refined.mtx", "refined_scores.mtx", "eval_at_2.txt",
        ]
        first = {name: (out / name).read_bytes() for name in artifacts}
        rc = main(["pipeline", "--config", str(out / "config.resolved.json")])
        assert rc == 0
        for name in artifacts:
            assert (out / name).read_bytes() == first[name], name

    def test_staged_commands_match_pipeline(self, tmp_path):
        manifest = make_bundle(tmp_path)
        pipe_out = tmp_path / "pipe"
        rc = main([
            "pipeline", "--manifest", manifest, "--output-dir", str(pipe_out),
            "--k", "2", "--set", "refine.rank=4", "--skip-eval",
        ])
        assert rc == 0
        stage_out = tmp_path / "staged"
        assert main(["cluster", "--manifest", manifest, "--output-dir",
                     str(stage_out), "--k", "2"]) == 0
        assert main(["share", "--manifest", manifest, "--output-dir",
                     str(stage_out)]) == 0
        assert main(["refine", "--manifest", manifest, "--output-dir",
                     str(stage_out), "--tags-in", str(stage_out / "completed.mtx"),
                     "--set", "refine.rank=4"]) == 0
        for name in ("completed.mtx", "refined_scores.mtx"):
            assert (stage_out / name).read_bytes() == (pipe_out / name).read_bytes()


class TestEval:
    def test_perfect_predictions_score_one(self, tmp_path):
        manifest = make_bundle(tmp_path)
        out = tmp_path / "eval"
        truth_file = tmp_path / "data" / "synthetic_ground_truth.mtx"
        rc = main([
            "eval", "--manifest", manifest, "--predictions", str(truth_file),
            "--output-dir", str(out), "--set", "eval_n=[2,3]",
        ])
        assert rc == 0
        for n in (2, 3):
            text = (out / f"eval_at_{n}.txt").read_text()
            fields = dict(line.split(": ") for line in text.strip().splitlines())
            assert float(fields["ap"]) == 1.0

    def test_eval_requires_ground_truth(self, tmp_path):
        manifest = make_bundle(tmp_path)
        # Build a manifest without the ground-truth line.
        data_dir = tmp_path / "data"
        lines = [
            line for line in (data_dir / "synthetic.manifest").read_text().splitlines()
            if not line.startswith("ground_truth")
        ]
        stripped = data_dir / "stripped.manifest"
        stripped.write_text("\n".join(lines) + "\n")
        rc = main([
            "eval", "--manifest", str(stripped),
            "--predictions", str(data_dir / "synthetic_ground_truth.mtx"),
            "--output-dir", str(tmp_path / "out"),
        ])
        assert rc == 2


class TestRefineCommand:
    def test_apply_imported_factors(self, tmp_path):
        manifest = make_bundle(tmp_path)
        out = tmp_path / "solve"
        rc = main([
            "refine", "--manifest", manifest, "--output-dir", str(out),
            "--set", "refine.rank=3", "--set", "refine.outer_iters=4",
        ])
        assert rc == 0
        apply_out = tmp_path / "apply"
        rc = main([
            "refine", "--manifest", manifest, "--output-dir", str(apply_out),
            "--import-factors", str(out / "factors_p.mtx"), str(out / "factors_q.mtx"),
            "--apply",
        ])
        assert rc == 0
        a = (apply_out / "refined_scores.mtx").read_bytes()
        b = (out / "refined_scores.mtx").read_bytes()
        assert a == b

    def test_apply_without_factors_rejected(self, tmp_path):
        manifest = make_bundle(tmp_path)
        rc = main([
            "refine", "--manifest", manifest,
            "--output-dir", str(tmp_path / "out"), "--apply",
        ])
        assert rc == 2


class TestShareCommand:
    def test_cosine_neighbor_source_needs_no_affinity(self, tmp_path):
        manifest = make_bundle(tmp_path)
        out = tmp_path / "out"
        assert main(["cluster", "--manifest", manifest, "--output-dir", str(out),
                     "--k", "2"]) == 0
        os.remove(out / "affinity.mtx")
        rc = main([
            "share", "--manifest", manifest, "--output-dir", str(out),
            "--set", "sharing.neighbor_source=cosine",
        ])
        assert rc == 0
        assert (out / "completed.mtx").exists()

    def test_missing_affinity_reported(self, tmp_path):
        manifest = make_bundle(tmp_path)
        out = tmp_path / "out"
        assert main(["cluster", "--manifest", manifest, "--output-dir", str(out),
                     "--k", "2"]) == 0
        os.remove(out / "affinity.mtx")
        rc = main(["share", "--manifest", manifest, "--output-dir", str(out)])
        assert rc == 2


class TestSynthKinds:
    def test_planted_bundle_loads(self, tmp_path):
        out = tmp_path / "p"
        rc = main([
            "synth", "--output-dir", str(out),
            "--set", "synth.kind=planted",
            "--set", "synth.n_tags=15", "--set", "synth.image_dim=6",
            "--set", "synth.tag_dim=5", "--set", "synth.images_per_cluster=4",
        ])
        assert rc == 0
        from tagrefinery.tagmat import load_dataset

        bundle = load_dataset(out / "synthetic.manifest")
        assert bundle.tags.n_tags == 15
        assert bundle.ground_truth is not None

    def test_planted_requires_partial_density(self, tmp_path):
        rc = main([
            "synth", "--output-dir", str(tmp_path / "p"),
            "--set", "synth.kind=planted", "--set", "synth.density=1.0",
        ])
        assert rc == 2

    def test_subspaces_bundle_has_cluster_tags(self, tmp_path):
        out = tmp_path / "s"
        rc = main([
            "synth", "--output-dir", str(out),
            "--set", "synth.kind=subspaces",
            "--set", "synth.n_clusters=3", "--set", "synth.images_per_cluster=5",
        ])
        assert rc == 0
        from tagrefinery.tagmat import load_dataset

        bundle = load_dataset(out / "synthetic.manifest")
        assert bundle.tags.n_tags == 3
        assert (out / "synthetic_true_clusters.txt").exists()

    def test_unknown_kind_exits_two(self, tmp_path):
        rc = main([
            "synth", "--output-dir", str(tmp_path / "x"), "--set", "synth.kind=wat",
        ])
        assert rc == 2


class TestTune:
    def test_tiny_grid_writes_results(self, tmp_path):
        manifest = make_bundle(tmp_path)
        out = tmp_path / "tune"
        rc = main([
            "tune", "--manifest", manifest, "--output-dir", str(out),
            "--set", "k=2",
            "--set", "tune.lambda1_grid=[0.1]",
            "--set", "tune.lambda2_grid=[0.01]",
            "--set", "tune.mu_grid=[0.0,0.5]",
            "--set", "tune.rank_grid=[3]",
            "--set", "tune.n=2",
        ])
        assert rc == 0
        best = json.loads((out / "tune_best.json").read_text())
        assert best["mu"] in (0.0, 0.5)
        lines = (out / "tune_results.csv").read_text().strip().splitlines()
        assert len(lines) == 3  # header + 2 grid points
