"""End-to-end tests for the command-line entry point."""

import json
import shlex
import sys
from collections import Counter, defaultdict

import pytest

from cli import EXIT_FAILED, EXIT_INPUT_ERROR, EXIT_OK, main
from masks import BinaryMask
from services.mask_io import load_mask, store_mask
from services.storage import MANIFEST_NAME, read_manifest
from tests.factories import square, write_population

REGENERATOR_SCRIPT = """
import json, sys
request = json.load(sys.stdin)
print("{root}/gt/" + request["instance_id"] + "/f%03d.png" % request["frame_index"])
"""


@pytest.fixture
def bench(tmp_path, instances_file):
    """A benchmark built through the CLI."""
    out = tmp_path / "bench"
    assert main(["build", "--instances", str(instances_file), "--out", str(out), "--seed", "7"]) == EXIT_OK
    return out


@pytest.fixture
def oracle_predictions(tmp_path, bench):
    path = tmp_path / "preds" / "oracle.jsonl"
    assert main(["baseline", str(bench), "--kind", "oracle", "--out", str(path)]) == EXIT_OK
    return path


class TestBuildCommand:
    """Tests for ``build``."""

    def test_build(self, capsys, bench):
        """Test that build writes the manifest and prints the composition."""
        manifest = read_manifest(bench / MANIFEST_NAME)
        composition = json.loads(capsys.readouterr().out)

        assert len(manifest.samples) == 26
        assert composition["rows"][0]["total"] == 26

    def test_protocol_and_limits(self, tmp_path, instances_file):
        """Test that build options reach the recorded configuration."""
        out = tmp_path / "custom"

        code = main(
            ["build", "--instances", str(instances_file), "--out", str(out), "--protocol", "both", "--max-neg", "1"]
        )

        config = read_manifest(out).build_config
        assert code == EXIT_OK
        assert [p.value for p in config.protocols] == ["image_based", "video_based"]
        assert config.max_negatives == 1

    def test_invalid_range(self, tmp_path, instances_file):
        """Test that an inverted interval exits with an input error."""
        code = main(
            ["build", "--instances", str(instances_file), "--out", str(tmp_path / "x"), "--hard-range", "0.9,0.8"]
        )

        assert code == EXIT_INPUT_ERROR

    def test_malformed_range(self, tmp_path, instances_file):
        """Test that a range that is not two numbers is a usage error."""
        with pytest.raises(SystemExit):
            main(["build", "--instances", str(instances_file), "--out", str(tmp_path / "x"), "--hard-range", "0.9"])

    def test_missing_instances(self, tmp_path):
        """Test that a missing instances file exits with an input error."""
        code = main(["build", "--instances", str(tmp_path / "absent.json"), "--out", str(tmp_path / "x")])

        assert code == EXIT_INPUT_ERROR

    def test_mis_sized_negative_in_parallel(self, tmp_path, instances_file, capsys):
        """Test that a parallel build records a mis-sized negative and succeeds."""
        store_mask(square(8, width=40, height=40), instances_file.parent / "neg/inst-1/neg-b/f000.png")
        out = tmp_path / "parallel"

        code = main(["build", "--instances", str(instances_file), "--out", str(out), "--jobs", "2"])

        manifest = read_manifest(out)
        assert code == EXIT_OK
        assert [(f.instance_id, f.slot) for f in manifest.failures] == [("inst-1", "full_neg-neg-b")]
        assert json.loads(capsys.readouterr().out)["rows"][0]["total"] == 24

    def test_errors_are_structured_records(self, tmp_path, capsys):
        """Test that a failed command writes only JSON lines to stderr."""
        main(["build", "--instances", str(tmp_path / "absent.json"), "--out", str(tmp_path / "x")])

        lines = capsys.readouterr().err.splitlines()
        records = [json.loads(line) for line in lines]
        assert records[-1]["event"] == "command failed"
        assert records[-1]["command"] == "build"


class TestFullSizeTrainSplit:
    """Build and verify at the size of the reference train split."""

    def test_build_and_verify(self, tmp_path, capsys):
        """Test 1,306 instances, 1,197 of them with three negatives."""
        instances_file = write_population(tmp_path / "inputs", [3] * 1197 + [2] * 109)
        out = tmp_path / "bench"

        code = main(["build", "--instances", str(instances_file), "--out", str(out), "--seed", "3", "--jobs", "4"])

        (row,) = json.loads(capsys.readouterr().out)["rows"]
        assert code == EXIT_OK
        assert (row["video_count"], row["reference_count"]) == (1306, 1306)
        assert {name: row[name] for name in ("perfect", "cutout", "dilate", "erode", "merge", "full_neg")} == {
            "perfect": 1306,
            "cutout": 2612,
            "dilate": 2612,
            "erode": 2612,
            "merge": 3809,
            "full_neg": 3809,
        }
        assert row["total"] == 16760

        per_instance = defaultdict(Counter)
        for sample in read_manifest(out).samples:
            per_instance[sample.instance_id][sample.label.mask_type.value] += 1
        for counts in per_instance.values():
            assert [counts[t] for t in ("perfect", "cutout", "dilate", "erode")] == [1, 2, 2, 2]
            assert counts["merge"] == counts["full_neg"] in (2, 3)

        assert main(["verify", str(out)]) == EXIT_OK
        assert json.loads(capsys.readouterr().out)["violations"] == []


class TestVerifyCommand:
    """Tests for ``verify``."""

    def test_clean(self, bench, capsys):
        """Test that a fresh build verifies with exit code 0."""
        capsys.readouterr()

        code = main(["verify", str(bench / MANIFEST_NAME)])

        assert code == EXIT_OK
        assert json.loads(capsys.readouterr().out)["violations"] == []

    def test_violation(self, bench, capsys):
        """Test that a corrupted mask makes verify exit with 1."""
        manifest = read_manifest(bench)
        sample = next(s for s in manifest.samples if s.slot == "perfect")
        bits = load_mask(bench / sample.mask_path).to_array()
        bits[0, 0] = True
        store_mask(BinaryMask(bits), bench / sample.mask_path)
        capsys.readouterr()

        code = main(["verify", str(bench)])

        violations = json.loads(capsys.readouterr().out)["violations"]
        assert code == EXIT_FAILED
        assert [v["kind"] for v in violations] == ["perfect-identity"]


class TestEvaluateCommand:
    """Tests for ``baseline`` and ``evaluate``."""

    def test_oracle_scores_perfectly(self, bench, oracle_predictions, capsys):
        """Test that the oracle baseline evaluates to F2 100 with reports on disk."""
        capsys.readouterr()

        code = main(["evaluate", str(bench), str(oracle_predictions)])

        assert code == EXIT_OK
        assert "| train | F2-M | 100.00 |" in capsys.readouterr().out
        report = json.loads((oracle_predictions.parent / "report.json").read_text(encoding="utf-8"))
        assert report["splits"]["train"]["overall"]["rmse"] == 0.0
        assert (oracle_predictions.parent / "report.md").exists()

    def test_report_directory(self, tmp_path, bench, oracle_predictions):
        """Test that --out chooses where reports go."""
        out = tmp_path / "reports"

        assert main(["evaluate", str(bench), str(oracle_predictions), "--out", str(out)]) == EXIT_OK
        assert (out / "report.json").exists()

    def test_incomplete_predictions(self, bench, oracle_predictions):
        """Test that a missing prediction exits with an input error."""
        lines = oracle_predictions.read_text(encoding="utf-8").splitlines()
        oracle_predictions.write_text("\n".join(lines[1:]) + "\n", encoding="utf-8")

        assert main(["evaluate", str(bench), str(oracle_predictions)]) == EXIT_INPUT_ERROR

    def test_missing_predictions_file(self, tmp_path, bench):
        """Test that an absent predictions file exits with an input error."""
        assert main(["evaluate", str(bench), str(tmp_path / "absent.jsonl")]) == EXIT_INPUT_ERROR

    def test_noisy_baseline_is_seeded(self, tmp_path, bench):
        """Test that the noisy baseline is reproducible for a fixed seed."""
        paths = [tmp_path / "a.jsonl", tmp_path / "b.jsonl"]
        for path in paths:
            args = ["baseline", str(bench), "--kind", "noisy", "--iou-sigma", "0.05", "--flip-prob", "0.2"]
            assert main(args + ["--seed", "4", "--out", str(path)]) == EXIT_OK

        assert paths[0].read_text(encoding="utf-8") == paths[1].read_text(encoding="utf-8")

    @pytest.mark.parametrize(
        "kind, mask_type", [("accept", "perfect"), ("reject", "full_neg"), ("always_accept", "perfect")]
    )
    def test_constant_baselines(self, tmp_path, bench, kind, mask_type):
        """Test the constant baseline kinds and their long aliases."""
        path = tmp_path / "constant.jsonl"

        assert main(["baseline", str(bench), "--kind", kind, "--out", str(path)]) == EXIT_OK
        records = [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines()]
        assert len(records) == 26
        assert {record["mask_type"] for record in records} == {mask_type}

    def test_command_baseline_needs_command(self, tmp_path, bench):
        """Test that --kind command without --audit-cmd is an input error."""
        code = main(["baseline", str(bench), "--kind", "command", "--out", str(tmp_path / "p.jsonl")])

        assert code == EXIT_INPUT_ERROR


class TestRefineCommand:
    """Tests for ``refine``."""

    def test_refine_with_ground_truth_segmenter(self, tmp_path, instances_file, bench, oracle_predictions, capsys):
        """Test the refine loop driven by an external segmenter command."""
        script = tmp_path / "regen.py"
        script.write_text(REGENERATOR_SCRIPT.format(root=instances_file.parent.as_posix()), encoding="utf-8")
        out = tmp_path / "refined-run"
        capsys.readouterr()

        code = main(
            [
                "refine",
                str(bench),
                str(oracle_predictions),
                "--regen-cmd",
                shlex.join([sys.executable, str(script)]),
                "--out",
                str(out),
            ]
        )

        report = json.loads((out / "refine_report.json").read_text(encoding="utf-8"))
        assert code == EXIT_OK
        assert report["overall"]["flagged"] == report["overall"]["regenerated"] == 6
        assert json.loads(capsys.readouterr().out) == report
        assert all((out / path).exists() for path in report["refined_masks"].values())

    def test_iterations_without_auditor(self, bench, oracle_predictions):
        """Test that several iterations without --audit-cmd are rejected."""
        code = main(
            ["refine", str(bench), str(oracle_predictions), "--regen-cmd", "true", "--iterations", "2"]
        )

        assert code == EXIT_INPUT_ERROR


class TestRenderCommand:
    """Tests for ``render``."""

    def test_no_frames(self, tmp_path, bench, capsys):
        """Test that samples without frame images are skipped."""
        capsys.readouterr()

        assert main(["render", str(bench), "--out", str(tmp_path / "frames")]) == EXIT_OK
        assert json.loads(capsys.readouterr().out) == {"rendered": 0}
