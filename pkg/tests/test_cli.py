import json
import re
import subprocess
import sys

import numpy as np
import pytest

from patnet.cli import cli_dispatch
from patnet.imageio import save_ppm


@pytest.fixture(scope="module")
def t0_weights(tmp_path_factory):
    path = tmp_path_factory.mktemp("weights") / "t0.patw"
    assert cli_dispatch(["init", "--variant", "T0", "--seed", "1",
                         "--out", str(path)]) == 0
    return path


@pytest.fixture(scope="module")
def sample_image(tmp_path_factory):
    path = tmp_path_factory.mktemp("images") / "probe.ppm"
    rng = np.random.default_rng(5)
    save_ppm(path, rng.uniform(0, 1, (1, 3, 300, 400)).astype(np.float32))
    return path


class TestSummary:
    def test_t0_params_near_reference(self, capsys):
        assert cli_dispatch(["summary", "--variant", "T0"]) == 0
        out = capsys.readouterr().out
        m = re.search(r"params\s+([\d,]+)", out)
        params = int(m.group(1).replace(",", ""))
        assert abs(params / 4.3e6 - 1) <= 0.05

    def test_custom_input_size(self, capsys):
        assert cli_dispatch(["summary", "--variant", "T0",
                             "--input-size", "256"]) == 0
        assert "256x256" in capsys.readouterr().out

    def test_numbers_equal_the_counters_exactly(self, capsys):
        from patnet.config import build_variant
        from patnet.counting import count_flops, count_params
        assert cli_dispatch(["summary", "--variant", "T1"]) == 0
        out = capsys.readouterr().out
        params = int(re.search(r"params\s+([\d,]+)", out).group(1).replace(",", ""))
        flops = int(re.search(r"flops \(MACs\)\s+([\d,]+)", out)
                    .group(1).replace(",", ""))
        spec = build_variant("T1")
        assert params == count_params(spec)
        assert flops == count_flops(spec)


class TestUsageErrors:
    def test_unknown_subcommand_exits_2(self):
        assert cli_dispatch(["frobnicate"]) == 2

    def test_unknown_flag_exits_2(self):
        assert cli_dispatch(["summary", "--variant", "T0", "--bogus"]) == 2

    def test_missing_required_flag_exits_2(self):
        assert cli_dispatch(["summary"]) == 2

    def test_bad_variant_exits_2(self):
        assert cli_dispatch(["summary", "--variant", "XXL"]) == 2

    def test_subprocess_usage_error(self):
        proc = subprocess.run([sys.executable, "-m", "patnet", "nonsense"],
                              capture_output=True, text=True)
        assert proc.returncode == 2
        assert proc.stderr  # usage text lands on stderr


class TestRuntimeErrors:
    def test_missing_weight_file_exits_1(self, capsys):
        code = cli_dispatch(["fuse", "--weights", "/nonexistent.patw",
                             "--out", "/tmp/x.patw"])
        assert code == 1
        assert "error:" in capsys.readouterr().err

    def test_fusing_twice_exits_1(self, t0_weights, tmp_path, capsys):
        fused = tmp_path / "f.patw"
        assert cli_dispatch(["fuse", "--weights", str(t0_weights),
                             "--out", str(fused)]) == 0
        assert cli_dispatch(["fuse", "--weights", str(fused),
                             "--out", str(tmp_path / "g.patw")]) == 1
        assert "already fused" in capsys.readouterr().err


class TestInfer:
    def test_topk_lines_and_finite_logits(self, t0_weights, sample_image,
                                          capsys):
        assert cli_dispatch(["infer", "--weights", str(t0_weights),
                             "--image", str(sample_image), "--topk", "7"]) == 0
        out = capsys.readouterr().out.strip().splitlines()
        assert "classes 1000" in out[0]
        ranks = [line for line in out[1:] if re.match(r"\s*\d+\. ", line)]
        assert len(ranks) == 7
        assert all("logit=" in line for line in ranks)

    def test_labels_file_used(self, t0_weights, sample_image, tmp_path, capsys):
        labels = tmp_path / "labels.txt"
        labels.write_text("\n".join(f"thing_{i}" for i in range(1000)))
        assert cli_dispatch(["infer", "--weights", str(t0_weights),
                             "--image", str(sample_image),
                             "--labels", str(labels), "--topk", "3"]) == 0
        out = capsys.readouterr().out
        assert "thing_" in out

    def test_fused_weights_give_same_top1(self, t0_weights, sample_image,
                                          tmp_path, capsys):
        fused = tmp_path / "fused.patw"
        cli_dispatch(["fuse", "--weights", str(t0_weights), "--out", str(fused)])
        capsys.readouterr()
        cli_dispatch(["infer", "--weights", str(t0_weights),
                      "--image", str(sample_image), "--topk", "1"])
        plain_top = capsys.readouterr().out.splitlines()[1]
        cli_dispatch(["infer", "--weights", str(fused),
                      "--image", str(sample_image), "--topk", "1"])
        fused_top = capsys.readouterr().out.splitlines()[1]
        assert plain_top.split()[1] == fused_top.split()[1]


class TestGradcheckCommand:
    def test_all_blocks_pass(self, capsys):
        assert cli_dispatch(["gradcheck"]) == 0
        out = capsys.readouterr().out
        assert out.count("pass") == 3

    def test_single_block(self, capsys):
        assert cli_dispatch(["gradcheck", "--block", "pat_sp",
                             "--seed", "3"]) == 0
        assert "pat_sp" in capsys.readouterr().out


class TestFuseCommand:
    def test_json_report_fields(self, t0_weights, tmp_path, capsys):
        out_path = tmp_path / "fused.patw"
        assert cli_dispatch(["fuse", "--weights", str(t0_weights),
                             "--out", str(out_path), "--json"]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["variant"] == "T0"
        assert payload["tensors_removed"] > 0
        assert payload["max_deviation"] <= 1e-3
        assert isinstance(payload["deviations"], dict)


class TestBenchCommand:
    def test_json_report(self, capsys):
        assert cli_dispatch(["bench", "--variant", "T0", "--batch", "1",
                             "--iters", "2", "--warmup", "1", "--json"]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["variant"] == "T0"
        assert payload["images_per_sec"] > 0
        assert payload["p95_latency_ms"] >= payload["p50_latency_ms"] >= 0
        assert payload["threads"] == 1

    def test_text_report(self, capsys):
        assert cli_dispatch(["bench", "--variant", "T0", "--batch", "1",
                             "--iters", "1", "--warmup", "0"]) == 0
        assert "images/sec" in capsys.readouterr().out
