import json

import numpy as np
import pytest
from dataclasses import replace

from endosum.cli import main
from endosum.config import RunConfig, SCHEMA_VERSION, default_config_text, load_config
from endosum.model import ConfigError
from endosum.pipeline import summarize_stream, train_selector
from endosum.selector import init_head
from endosum.simulate import generate_exam

# a config small enough for fast CLI round-trips but with every stage active
SMALL_CONFIG = f"""[meta]
schema_version = {SCHEMA_VERSION}

[run]
seed = 0
num_patients = 2

[selector]
epochs = 60
hidden_dim = 16
train_exams = 1

[simulator]
num_frames = 6000
num_events = 3
paired_events = 2
min_separation_sec = 200.0
feature_dim = 64
"""


def write_config(tmp_path, text=SMALL_CONFIG, out_dir=None):
    if out_dir is not None:
        text = text.replace("[selector]", f"out_dir = {out_dir}\n\n[selector]")
    path = tmp_path / "run.ini"
    path.write_text(text)
    return str(path)


# -------------------------------------------------------------------- config

def test_default_config_text_parses_and_validates(tmp_path):
    path = tmp_path / "default.ini"
    path.write_text(default_config_text())
    cfg = load_config(path)
    assert cfg.tau_s == 0.5
    assert cfg.window_sec == 300.0
    assert cfg.conflict_window_sec == 20.0
    assert cfg.tau_grid_sec == (30.0, 60.0, 120.0, 300.0, 600.0)
    assert cfg.sim.num_frames == 100_000


def test_config_rejects_unknown_key(tmp_path):
    path = tmp_path / "bad.ini"
    path.write_text(SMALL_CONFIG + "\n[weaver]\nmystery_knob = 1\n")
    with pytest.raises(ConfigError, match="unknown key"):
        load_config(path)


def test_config_rejects_unknown_section(tmp_path):
    path = tmp_path / "bad.ini"
    path.write_text(SMALL_CONFIG + "\n[surprises]\nx = 1\n")
    with pytest.raises(ConfigError, match="unknown config section"):
        load_config(path)


def test_config_requires_schema_version(tmp_path):
    path = tmp_path / "bad.ini"
    path.write_text("[run]\nseed = 1\n")
    with pytest.raises(ConfigError, match="schema_version"):
        load_config(path)


def test_config_rejects_out_of_range(tmp_path):
    path = tmp_path / "bad.ini"
    path.write_text(SMALL_CONFIG.replace("[selector]", "[converger]\ntau_min = 1.5\n\n[selector]"))
    with pytest.raises(ConfigError):
        load_config(path)


def test_config_rejects_fine_looser_than_coarse(tmp_path):
    path = tmp_path / "bad.ini"
    path.write_text(SMALL_CONFIG + "\n[weaver]\nsigma_coarse = 0.9\nsigma_fine = 0.2\n")
    with pytest.raises(ConfigError, match="sigma_fine"):
        load_config(path)


# ------------------------------------------------------------ pipeline paths

def small_cfg():
    cfg = RunConfig()
    cfg.sim = replace(cfg.sim, num_frames=6000, num_events=3, paired_events=2,
                      min_separation_sec=200.0, feature_dim=64)
    cfg.epochs = 60
    cfg.hidden_dim = 16
    cfg.train_exams = 1
    return cfg


def test_stream_without_dists_summarizes_to_empty_with_hierarchy():
    cfg = small_cfg()
    stream, _, _ = generate_exam(cfg.sim, patient_id="nodist")
    bare = stream.__class__(
        patient_id="nodist",
        frames=tuple(type(f)(f.frame_index, f.timestamp_sec, f.feature, None, None)
                     for f in stream.frames),
        feature_dim=stream.feature_dim,
        num_classes=stream.num_classes,
        taxonomy=stream.taxonomy,
    )
    head = init_head(64, 16, seed=0)
    cfg.tau_s = 0.0   # untrained head; keep everything so weaving is exercised
    summary, hierarchy, stats = summarize_stream(bare, head, cfg)
    assert summary.entries == ()
    assert stats.has_distributions is False
    assert stats.num_candidates == 6000
    assert stats.num_fine > 0


def test_unknown_variant_rejected():
    cfg = small_cfg()
    stream, _, _ = generate_exam(cfg.sim, patient_id="x")
    with pytest.raises(ConfigError):
        summarize_stream(stream, init_head(64, 16), cfg, variant="bogus")


def test_no_weaver_bins_partition_candidates():
    cfg = small_cfg()
    head = train_selector(cfg)
    stream, _, _ = generate_exam(replace(cfg.sim, seed=5), patient_id="p5")
    _, hierarchy, _ = summarize_stream(stream, head, cfg, variant="no_weaver")
    times = {f.frame_index: f.timestamp_sec for f in stream.frames}
    for fc in hierarchy.fine:
        bins = {int(times[m] // 300.0) for m in fc.members}
        assert len(bins) == 1
    _, full_h, _ = summarize_stream(stream, head, cfg, variant="full")
    assert sorted(m for f in hierarchy.fine for m in f.members) == \
        sorted(m for f in full_h.fine for m in f.members)


def test_variants_agree_on_degenerate_single_event_bin():
    # one clean event, sub-300 s exam: one bin == one context == one entry
    cfg = small_cfg()
    cfg.sim = replace(
        cfg.sim, num_frames=500, num_events=1, paired_events=0,
        event_duration_frames=(40, 80), max_event_fraction=0.3,
        min_separation_sec=20.0, sigma_vis=0.05, blur_fraction=0.0,
        miss_fraction=0.0, dirichlet_strength=0.0, confusion=np.eye(12),
    )
    head = train_selector(cfg)
    stream, ann, _ = generate_exam(replace(cfg.sim, seed=9), patient_id="tiny")
    s_full, _, _ = summarize_stream(stream, head, cfg, "full")
    s_nw, _, _ = summarize_stream(stream, head, cfg, "no_weaver")
    s_nc, _, _ = summarize_stream(stream, head, cfg, "no_converger")
    assert len(s_full.entries) == len(s_nw.entries) == len(s_nc.entries) == 1
    assert s_full.entries[0].label == s_nw.entries[0].label == s_nc.entries[0].label


# ----------------------------------------------------------------------- CLI

def run_cli(*argv):
    return main(list(argv))


def test_cli_missing_config_is_exit_2(tmp_path):
    assert run_cli("simulate", "--config", str(tmp_path / "nope.ini")) == 2


def test_cli_bad_config_is_exit_2(tmp_path):
    path = tmp_path / "bad.ini"
    path.write_text("[mystery]\nx = 1\n")
    assert run_cli("simulate", "--config", str(path)) == 2


def test_cli_missing_inputs_is_exit_3(tmp_path):
    cfg_path = write_config(tmp_path)
    empty = tmp_path / "empty"
    empty.mkdir()
    assert run_cli("summarize", "--config", cfg_path, "--in-dir", str(empty),
                   "--out-dir", str(tmp_path / "out")) == 3


def test_cli_full_workflow(tmp_path, capsys):
    cfg_path = write_config(tmp_path)
    data = tmp_path / "data"
    run = tmp_path / "run"

    assert run_cli("simulate", "--config", cfg_path, "--out-dir", str(data)) == 0
    exams = sorted(data.glob("*.exam.jsonl"))
    assert len(exams) == 2
    assert (data / "sim-0000.annotations.json").exists()
    assert (data / "sim-0000.truth.json").exists()

    assert run_cli("train-selector", "--config", cfg_path,
                   "--out-dir", str(run)) == 0
    head_path = run / "selector_head.json"
    assert head_path.exists()

    assert run_cli("summarize", "--config", cfg_path, "--in-dir", str(data),
                   "--head", str(head_path), "--out-dir", str(run / "full")) == 0
    summaries = sorted((run / "full").glob("*.summary.json"))
    assert len(summaries) == 2
    assert (run / "full" / "sim-0000.hierarchy.json").exists()

    assert run_cli("evaluate", "--config", cfg_path,
                   "--summaries", str(run / "full"),
                   "--annotations", str(data),
                   "--out-dir", str(run / "eval")) == 0
    report = json.loads((run / "eval" / "report.json").read_text())
    assert report["counts"]["num_patients"] == 2
    assert (run / "eval" / "inconsistency.csv").exists()
    assert (run / "eval" / "switch_cdf.csv").exists()
    out = capsys.readouterr().out
    assert "Sensitivity" in out   # the plain-text table was printed

    for variant in ("no_weaver", "no_converger"):
        assert run_cli("ablate", "--config", cfg_path, "--in-dir", str(data),
                       "--head", str(head_path), "--variant", variant,
                       "--out-dir", str(run / variant)) == 0
        assert sorted((run / variant).glob("*.summary.json"))

    assert run_cli("consistency", "--config", cfg_path,
                   "--a", str(run / "full"), "--b", str(run / "no_converger"),
                   "--out-dir", str(run / "cons")) == 0
    cons = json.loads((run / "cons" / "consistency.json").read_text())
    assert "taus" in cons and "switch" in cons
    assert (run / "cons" / "consistency.csv").exists()


def test_cli_ablate_rejects_bad_variant(tmp_path):
    cfg_path = write_config(tmp_path)
    (tmp_path / "d").mkdir()
    assert run_cli("ablate", "--config", cfg_path, "--in-dir", str(tmp_path / "d"),
                   "--variant", "nope", "--out-dir", str(tmp_path / "o")) == 2


def test_cli_determinism_byte_identical(tmp_path):
    cfg_path = write_config(tmp_path)

    def one_run(tag):
        data = tmp_path / tag / "data"
        run = tmp_path / tag / "run"
        assert run_cli("simulate", "--config", cfg_path, "--out-dir", str(data)) == 0
        assert run_cli("train-selector", "--config", cfg_path, "--out-dir", str(run)) == 0
        assert run_cli("summarize", "--config", cfg_path, "--in-dir", str(data),
                       "--head", str(run / "selector_head.json"),
                       "--out-dir", str(run / "full")) == 0
        assert run_cli("evaluate", "--config", cfg_path,
                       "--summaries", str(run / "full"), "--annotations", str(data),
                       "--out-dir", str(run / "eval")) == 0
        return data, run

    d1, r1 = one_run("a")
    d2, r2 = one_run("b")
    for rel in ["full/sim-0000.summary.json", "full/sim-0001.summary.json",
                "eval/report.json"]:
        assert (r1 / rel).read_bytes() == (r2 / rel).read_bytes(), rel
    for rel in ["sim-0000.exam.jsonl", "sim-0001.annotations.json"]:
        assert (d1 / rel).read_bytes() == (d2 / rel).read_bytes(), rel


def test_init_config_writes_parseable_file(tmp_path):
    out = tmp_path / "cfg.ini"
    assert run_cli("init-config", "--out", str(out)) == 0
    cfg = load_config(out)
    assert cfg.sim.num_classes == 12


def test_cli_validate_clean_and_dirty(tmp_path):
    cfg_path = write_config(tmp_path)
    data = tmp_path / "data"
    assert run_cli("simulate", "--config", cfg_path, "--out-dir", str(data)) == 0
    exam = data / "sim-0000.exam.jsonl"
    assert run_cli("validate", "--exam", str(exam)) == 0
    lines = exam.read_text().splitlines()
    broken = json.loads(lines[1])
    broken["lesion_dist"] = [0.5] * 12   # sums to 6
    lines[1] = json.dumps(broken)
    dirty = tmp_path / "dirty.exam.jsonl"
    dirty.write_text("\n".join(lines) + "\n")
    assert run_cli("validate", "--exam", str(dirty)) == 3


def test_worker_pool_matches_sequential(tmp_path):
    base = write_config(tmp_path)
    parallel = tmp_path / "par.ini"
    parallel.write_text((tmp_path / "run.ini").read_text()
                        .replace("num_patients = 2", "num_patients = 2\nworkers = 2"))
    data = tmp_path / "data"
    run = tmp_path / "run"
    assert run_cli("simulate", "--config", base, "--out-dir", str(data)) == 0
    assert run_cli("train-selector", "--config", base, "--out-dir", str(run)) == 0
    head = str(run / "selector_head.json")
    assert run_cli("summarize", "--config", base, "--in-dir", str(data),
                   "--head", head, "--out-dir", str(run / "seq")) == 0
    assert run_cli("summarize", "--config", str(parallel), "--in-dir", str(data),
                   "--head", head, "--out-dir", str(run / "par")) == 0
    for name in ("sim-0000.summary.json", "sim-0001.summary.json"):
        assert (run / "seq" / name).read_bytes() == (run / "par" / name).read_bytes()


def test_corrupt_head_file_is_internal_error(tmp_path):
    cfg_path = write_config(tmp_path)
    data = tmp_path / "data"
    assert run_cli("simulate", "--config", cfg_path, "--out-dir", str(data)) == 0
    bad_head = tmp_path / "head.json"
    bad_head.write_text("{ this is not json")
    code = run_cli("summarize", "--config", cfg_path, "--in-dir", str(data),
                   "--head", str(bad_head), "--out-dir", str(tmp_path / "o"))
    assert code == 4
