import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mcgattack.core import AttackResult
from mcgattack.errors import ConfigError, EmptyResults
from mcgattack.harness import compute_metrics, emit_curve, load_config
from mcgattack.harness.cli import EXIT_CONFIG, EXIT_ORACLE, main
from mcgattack.harness.config import parse_value

# ---------------------------------------------------------------- metrics


def _r(success, queries, first=False):
    return AttackResult(success, queries, None, first)


def test_metrics_arithmetic():
    report = compute_metrics([_r(True, 1, True), _r(True, 5), _r(False, 10000)])
    assert report.asr == pytest.approx(200 / 3)
    assert (report.mean_queries, report.median_queries) == (3.0, 3.0)
    assert report.fasr == pytest.approx(100 / 3)


def test_metrics_all_first_query_and_degenerate_cases():
    report = compute_metrics([_r(True, 1, True)] * 4)
    assert report.asr == report.fasr == 100.0
    assert report.mean_queries == report.median_queries == 1.0
    failed = compute_metrics([_r(False, 7)])
    assert failed.asr == 0.0 and failed.mean_queries is None and failed.median_queries is None
    with pytest.raises(EmptyResults):
        compute_metrics([])


def test_even_length_median_is_the_midpoint():
    assert compute_metrics([_r(True, q) for q in (1, 2, 10, 40)]).median_queries == 6.0


outcomes = st.lists(st.tuples(st.booleans(), st.integers(1, 1000), st.booleans()), min_size=1, max_size=50)


@settings(max_examples=200, deadline=None)
@given(outcomes, st.lists(st.integers(1, 999), min_size=1, max_size=10))
def test_report_and_curve_invariants(raw, grid):
    results = [_r(ok, 1 if (ok and first) else q, ok and first) for ok, q, first in raw]
    report = compute_metrics(results)
    assert report.fasr <= report.asr
    curve = emit_curve(results, grid + [1000])
    values = [a for _, a in curve]
    assert values == sorted(values)
    assert curve[-1] == (1000, pytest.approx(report.asr))


# ----------------------------------------------------------------- config


def test_config_accepts_flat_and_nested_keys(tmp_path, monkeypatch):
    path = tmp_path / "exp.yaml"
    path.write_text("attacker: nes\nmeta_test.k: 7\nmeta_test:\n  s: 2\ndataset:\n  name: shapes\n  size: 16\n")
    cfg = load_config(path, {"epsilon": 0.2, "meta_test.alpha": 1e-3})
    assert (cfg.attacker, cfg.meta_test.k, cfg.meta_test.s, cfg.meta_test.alpha) == ("nes", 7, 2, 1e-3)
    assert cfg.dataset == {"name": "shapes", "size": 16}
    monkeypatch.setenv("MCG_OUTPUT_DIR", str(tmp_path / "elsewhere"))
    assert load_config(path).output_dir == str(tmp_path / "elsewhere")


@pytest.mark.parametrize("overrides", [{"epsilon": 0}, {"budget": 0}, {"goal": "both"}, {"meta_test.q": 1}, {"surprise": 1}])
def test_config_rejects_bad_values(overrides):
    with pytest.raises(ConfigError):
        load_config(None, overrides)


def test_parse_value_uses_yaml_scalars():
    assert parse_value("1e-3") == 1e-3
    assert parse_value("true") is True
    assert parse_value("square") == "square"


# -------------------------------------------------------------------- CLI


BASE = {
    "dataset": {"name": "shapes", "num_classes": 3, "size": 8, "n_train": 60, "n_test": 30},
    "epsilon": 0.1,
    "budget": 20,
    "n_eval": 6,
    "zoo": {"epochs": 3, "lr": 0.01},
    "pgd": {"epsilon": 0.1, "step_size": 0.02, "iters": 5, "n_images": 30},
    "generator_arch": {"n_blocks": 1, "n_steps": 2, "hidden": 8, "cond_channels": 4},
    "pretrain": {"epochs": 1, "batch_size": 8},
    "meta_train": {"n_tasks_per_batch": 2, "k_inner_steps": 1, "alpha": 0.001, "beta": 0.5, "batches": 2},
    "meta_test": {"k": 1, "alpha": 0.001},
}


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg_path = root / "exp.json"
    cfg_path.write_text(json.dumps(dict(BASE, output_dir=str(root / "runs"))))
    c = ["--config", str(cfg_path)]
    assert main(["zoo-train", *c, "--arch", "arch_a", "--seed", "1", "--out", str(root / "sur")]) == 0
    assert main(["zoo-train", *c, "--arch", "arch_b", "--seed", "2", "--out", str(root / "tgt")]) == 0
    assert main(["pgd-corpus", *c, "--surrogate", str(root / "sur"), "--out", str(root / "corpus")]) == 0
    assert main(["pretrain", *c, "--corpus", str(root / "corpus"), "--out", str(root / "pre")]) == 0
    assert main(["meta-train", *c, "--surrogate", str(root / "sur"), "--generator", str(root / "pre"), "--out", str(root / "meta")]) == 0
    refs = ["--set", f"surrogate={root / 'sur'}", "--set", f"target={root / 'tgt'}", "--set", f"generator={root / 'meta'}"]
    return root, c + refs


def _attack(pipeline, *extra):
    root, args = pipeline
    return main(["attack", *args, *extra])


def test_cli_attack_writes_outputs_and_report_recomputes(pipeline, capsys):
    root, _ = pipeline
    assert _attack(pipeline, "--set", "name=mcg") == 0
    run = root / "runs" / "mcg"
    for name in ("results.jsonl", "report.json", "table.csv", "curve.tsv"):
        assert (run / name).exists()
    capsys.readouterr()
    assert main(["report", str(run / "results.jsonl"), "--table", str(root / "t.csv")]) == 0
    recomputed = json.loads(capsys.readouterr().out)
    saved = json.loads((run / "report.json").read_text())
    assert recomputed == {k: saved[k] for k in recomputed}
    assert (root / "t.csv").read_text().splitlines()[0] == "Attack Method,ASR,Mean,Median,FASR"
    assert main(["curve", str(run / "results.jsonl"), "--grid", "1,5,20"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "queries\tasr" and len(lines) == 4


def test_rerun_is_byte_identical_and_pairs_align(pipeline):
    root, _ = pipeline
    for name in ("a", "b"):
        assert _attack(pipeline, "--set", f"name={name}", "--set", "goal=targeted") == 0
    assert _attack(pipeline, "--set", "name=plain", "--set", "goal=targeted", "--set", "mcg=false") == 0
    a, b, plain = ((root / "runs" / n / "results.jsonl").read_bytes() for n in ("a", "b", "plain"))
    assert a == b
    key = lambda row: (row["image_id"], row["goal"], row["true_label"], row["target_label"])  # noqa: E731
    rows_a = [json.loads(line) for line in a.splitlines()]
    rows_plain = [json.loads(line) for line in plain.splitlines()]
    assert [key(r) for r in rows_a] == [key(r) for r in rows_plain]


def test_cli_config_errors_exit_2(pipeline, tmp_path):
    root, args = pipeline
    assert main(["attack", "--set", "target=/nonexistent/model"]) == EXIT_CONFIG
    assert _attack(pipeline, "--set", "epsilon=0.05") == EXIT_CONFIG  # generator trained for 0.1
    assert main(["pretrain", "--out", str(tmp_path / "x")]) == EXIT_CONFIG
    assert main(["attack", "--set", "nonsense"]) == EXIT_CONFIG


def test_cli_oracle_protocol_error_exits_3(pipeline):
    class Garbage(BaseHTTPRequestHandler):
        def do_POST(self):
            self.rfile.read(int(self.headers["Content-Length"]))
            body = b'{"unexpected": true}'
            self.send_response(200)
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def log_message(self, *args):
            pass

    server = ThreadingHTTPServer(("127.0.0.1", 0), Garbage)
    threading.Thread(target=server.serve_forever, daemon=True).start()
    try:
        url = f"http://127.0.0.1:{server.server_address[1]}/"
        root, args = pipeline
        cfg = root / "remote.json"
        cfg.write_text(json.dumps(dict(BASE, output_dir=str(root / "runs"), remote={"url": url, "num_classes": 3})))
        code = main(["attack", "--config", str(cfg), "--set", f"target={root / 'tgt'}", "--set", "mcg=false", "--set", "name=remote"])
    finally:
        server.shutdown()
        server.server_close()
    assert code == EXIT_ORACLE
