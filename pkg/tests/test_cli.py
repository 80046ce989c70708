import numpy as np
import pytest

from workmem import babi
from workmem.attention import load_trace
from workmem.bench import BenchRow, loglog_slope, read_rows, run_bench, summarize, write_rows
from workmem.checkpoint import Checkpoint
from workmem.cli import main
from workmem.config import ConfigError, dump_config, parse_config, parse_task_list
from workmem.training import EvalReport, Trainer

from toy import toy_config, write_task_files

SMALL = "d=8\nheads=2\nhops=2\ng_hidden=16\ntransition_hidden=5\nbatch_size=8\nmax_samples_per_task=40\n"


def write_config(tmp_path, body, name="run.cfg"):
    p = tmp_path / name
    p.write_text(body)
    return p


# ------------------------------------------------------------------ config

def test_config_round_trip():
    cfg = parse_config("# comment\nd=12\nrestart=true\ntasks=1,3-4\nlr=0.005\n")
    assert cfg.train.d == 12 and cfg.train.restart is True and cfg.train.lr == 0.005
    assert cfg.task_list() == [1, 3, 4]
    again = parse_config(dump_config(cfg))
    assert again == cfg


def test_config_defaults_representable():
    cfg = parse_config("")
    assert parse_config(dump_config(cfg)) == cfg
    assert cfg.train.d == 30 and cfg.train.heads == 8 and cfg.train.hops == 4
    assert cfg.train.clip_norm == 40 and cfg.train.l2 == 1e-3 and cfg.train.epochs == 400


@pytest.mark.parametrize("text,fragment", [("d=8\nbogus=1\n", ":2: unknown key 'bogus'"),
                                           ("d=eight\n", ":1: bad value for d"),
                                           ("just words\n", ":1: expected key=value")])
def test_config_errors_name_the_line(text, fragment):
    with pytest.raises(ConfigError, match=fragment):
        parse_config(text)


def test_task_list_bounds():
    assert parse_task_list("1-20") == list(range(1, 21))
    with pytest.raises(ConfigError):
        parse_task_list("0-3")


def test_bad_config_exits_2(tmp_path, capsys):
    cfg = write_config(tmp_path, "epochs=0\nnonsense=3\n")
    assert main(["train", "--config", str(cfg), "--data", str(tmp_path)]) == 2
    assert "run.cfg:2" in capsys.readouterr().err


# ------------------------------------------------------------------- train

def test_missing_data_dir_exits_2(tmp_path, capsys):
    cfg = write_config(tmp_path, "epochs=0\ntasks=1\n")
    missing = tmp_path / "nowhere"
    assert main(["train", "--config", str(cfg), "--data", str(missing)]) == 2
    assert str(missing) in capsys.readouterr().err


def test_missing_task_file_exits_2(tmp_path, capsys):
    data = write_task_files(tmp_path / "data", tasks=(1,))
    cfg = write_config(tmp_path, "epochs=0\ntasks=1-2\n")
    assert main(["train", "--config", str(cfg), "--data", str(data)]) == 2
    assert "qa2_" in capsys.readouterr().err


def test_data_dir_from_environment(tmp_path, monkeypatch):
    data = write_task_files(tmp_path / "data", tasks=(1,))
    monkeypatch.setenv("WORKMEM_DATA", str(data))
    cfg = write_config(tmp_path, SMALL + f"epochs=0\ntasks=1\nout_dir={tmp_path / 'out'}\n")
    assert main(["train", "--config", str(cfg)]) == 0


def test_zero_epochs_writes_initial_checkpoint(tmp_path):
    data = write_task_files(tmp_path / "data", tasks=(1,))
    out = tmp_path / "out"
    cfg = write_config(tmp_path, SMALL + "epochs=0\ntasks=1\n")
    assert main(["train", "--config", str(cfg), "--data", str(data), "--out", str(out)]) == 0
    ck = Checkpoint.load(out / "best.ckpt")
    assert ck.epoch == 0 and ck.adam_step == 0
    fresh = Trainer(ck.config, ck.vocab).model.state_dict()
    for k, v in ck.params.items():
        assert v.tobytes() == fresh[k].tobytes()
    lines = (out / "metrics.csv").read_text().splitlines()
    assert lines[0] == "epoch,split,loss,accuracy,lr" and len(lines) == 2
    assert (out / "timing.csv").read_text().startswith("epoch,wallclock_s")


def test_two_runs_identical_outputs(tmp_path):
    data = write_task_files(tmp_path / "data", tasks=(1,))
    cfg = write_config(tmp_path, SMALL + "epochs=2\ntasks=1\n")
    for run in ("a", "b"):
        assert main(["train", "--config", str(cfg), "--data", str(data), "--out", str(tmp_path / run),
                     "--seed", "3"]) == 0
    for name in ("metrics.csv", "best.ckpt", "last.ckpt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


# -------------------------------------------------------------------- eval

def perfect_checkpoint(tmp_path):
    """A checkpoint whose readout always answers 'kitchen'."""
    data = tmp_path / "data"
    data.mkdir()
    story = "1 mary went to the kitchen.\n2 where is mary?\tkitchen\t1\n"
    (data / "qa1_single-supporting-fact_test.txt").write_text(story * 3)
    (data / "qa2_two-supporting-facts_test.txt").write_text(story.replace("mary", "john") * 2)
    raws = babi.parse_babi_lines((story + "1 john went to the garden.\n2 where is john?\tgarden\t1\n").splitlines())
    vocab = babi.build_vocabulary(raws)
    trainer = Trainer(toy_config(d=6, max_facts=30), vocab)
    V = trainer.model.readout.V
    V.data[:] = 0
    trainer.model.rn.g.layers[-1][1].data[:] = 1.0  # positive r for every input
    V.data[vocab.answer_index["kitchen"]] = 1.0
    path = tmp_path / "perfect.ckpt"
    trainer.checkpoint(0, 1.0).save(path)
    return path, data


def test_eval_report_and_absent_rows(tmp_path, capsys):
    ckpt, data = perfect_checkpoint(tmp_path)
    out = tmp_path / "report"
    assert main(["eval", "--checkpoint", str(ckpt), "--data", str(data), "--out", str(out)]) == 0
    text = capsys.readouterr().out
    rep = EvalReport.read_csv(out / "eval.csv")
    assert rep.errors == {1: 0.0, 2: 0.0} and rep.mean_error == 0.0 and rep.failed == 0
    assert rep.absent == list(range(3, 21))
    assert "20: agent's motivations" in text and "—" in text
    assert "Failed tasks" in text


def test_eval_refuses_other_version(tmp_path, capsys):
    ckpt, data = perfect_checkpoint(tmp_path)
    blob = bytearray(ckpt.read_bytes())
    blob[4] = 2
    ckpt.write_bytes(bytes(blob))
    assert main(["eval", "--checkpoint", str(ckpt), "--data", str(data)]) == 2
    err = capsys.readouterr().err
    assert "version 2" in err and "version 1" in err


# ----------------------------------------------------------------- inspect

def inspect(tmp_path, story, capsys):
    ckpt, _ = perfect_checkpoint(tmp_path)
    (tmp_path / "story.txt").write_text(story)
    code = main(["inspect", "--checkpoint", str(ckpt), "--story", str(tmp_path / "story.txt"),
                 "--out", str(tmp_path / "insp")])
    return code, capsys.readouterr().out


def test_inspect_one_sentence_story(tmp_path, capsys):
    code, out = inspect(tmp_path, "1 mary went to the kitchen.\n2 where is mary?\tkitchen\t1\n", capsys)
    assert code == 0
    row = [l for l in out.splitlines() if l.startswith("mary went")][0]
    assert row.split()[-2:] == ["2.00", "2.00"]
    assert "Pred: kitchen" in out
    trace, text = load_trace(tmp_path / "insp" / "trace.json")
    assert text == ["mary went to the kitchen"]
    np.testing.assert_allclose(trace.head_sums, 2.0, atol=1e-6)


def test_inspect_rejects_multiple_questions(tmp_path, capsys):
    code, _ = inspect(tmp_path, "1 mary went to the kitchen.\n2 where is mary?\tkitchen\t1\n"
                                "3 where is mary?\tkitchen\t1\n", capsys)
    assert code == 2


def test_inspect_parse_failure(tmp_path, capsys):
    code, _ = inspect(tmp_path, "mary went to the kitchen\n", capsys)
    assert code == 2


# ------------------------------------------------------------------- bench

def test_bench_rows_and_csv_round_trip(tmp_path):
    rows = run_bench([1, 3], batch=2, reps=1, cfg=toy_config(d=4, max_facts=30, hops=4))
    assert [(r.model, r.n_memories, r.pair_evals) for r in rows] == [
        ("wmemnn", 1, 16), ("full_rn", 1, 1), ("wmemnn", 3, 16), ("full_rn", 3, 9)]
    write_rows(rows, tmp_path / "bench.csv")
    assert read_rows(tmp_path / "bench.csv") == rows


def test_bench_summary_math():
    rows = [BenchRow(m, n, 32, t, 0, 1) for n in (8, 16, 32)
            for m, t in (("wmemnn", 0.01 * n), ("full_rn", 0.001 * n * n))]
    s = summarize(rows)
    assert s["slope"]["wmemnn"] == pytest.approx(1.0)
    assert s["slope"]["full_rn"] == pytest.approx(2.0)
    assert s["speedup"][16] == pytest.approx(1.6)
    assert s["reference_speedup_at_30"] == pytest.approx(18.6)
    assert loglog_slope([1, 10, 100], [3, 30, 300]) == pytest.approx(1.0)


def test_bench_cli_small(tmp_path, capsys):
    assert main(["bench", "--n", "2,4", "--batch", "2", "--reps", "1", "--out", str(tmp_path)]) == 0
    rows = read_rows(tmp_path / "bench.csv")
    assert {(r.model, r.n_memories): r.pair_evals for r in rows} == {
        ("wmemnn", 2): 16, ("full_rn", 2): 4, ("wmemnn", 4): 16, ("full_rn", 4): 16}
    assert "log-log slope" in capsys.readouterr().out


def test_bench_rejects_bad_n(capsys):
    assert main(["bench", "--n", "0,4"]) == 2
    assert main(["bench", "--n", "a,b"]) == 2


def test_synth_command(tmp_path, capsys):
    assert main(["synth", "--out", str(tmp_path), "--train", "10", "--test", "5"]) == 0
    train = babi.parse_babi_file(babi.find_task_file(tmp_path, 1, "train"))
    assert len(train) == 10 and all(s.task_id == 1 for s in train)


def test_unknown_command_exits_2():
    assert main(["frobnicate"]) == 2
