import socket
import subprocess
import sys

import numpy as np
import pytest

from ovlasr import cli
from ovlasr.acoustic import ToySCModel, load_model, load_tensors
from ovlasr.core import make_rng
from ovlasr.evaluation import read_table
from ovlasr.mixer import ToyTaskConfig
from ovlasr.server import END, encode_frame, read_frame


def files_of(d):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert cli.main(["synth-pool", "--out", str(root / "pool"), "--speakers", "6", "--utts", "3",
                     "--max-len", "10", "--seed", "1"]) == 0
    assert cli.main(["mix", "--pool", str(root / "pool"), "--count", "3", "--out", str(root / "corpus"),
                     "--seed", "7"]) == 0
    return root


def test_mix_is_deterministic(corpus, tmp_path):
    out2 = tmp_path / "again"
    assert cli.main(["mix", "--pool", str(corpus / "pool"), "--count", "3", "--out", str(out2),
                     "--seed", "7"]) == 0
    assert files_of(corpus / "corpus") == files_of(out2)
    stats = dict(l.split(",") for l in (out2 / "stats.csv").read_text().splitlines()[1:])
    assert 0 < float(stats["overlap_fraction"]) < 1


def test_mix_count_zero(corpus, tmp_path):
    assert cli.main(["mix", "--pool", str(corpus / "pool"), "--count", "0", "--out", str(tmp_path / "e")]) == 0
    assert not list((tmp_path / "e").glob("mix*"))


def test_mix_single_speaker_pool(tmp_path):
    pool = tmp_path / "pool1"
    assert cli.main(["synth-pool", "--out", str(pool), "--speakers", "2", "--utts", "1"]) == 0
    for p in pool.glob("utt*.tsv"):
        if "S001" in p.read_text():
            p.unlink()
    assert cli.main(["mix", "--pool", str(pool), "--count", "1", "--out", str(tmp_path / "m")]) == 2
    assert cli.main(["mix", "--pool", str(tmp_path / "nope"), "--count", "1", "--out", str(tmp_path / "m")]) == 2


def test_train_outputs_and_determinism(corpus, tmp_path, capsys):
    m = tmp_path / "noiseless.json"
    m.write_text('{"oracle": {"noise_std": 0.0, "change_noise_std": 0.0}}')
    args = ["train", "--corpus", str(corpus / "corpus"), "--sc-epochs", "1", "--toy-examples", "40",
            "--seed", "3", "--manifest", str(m)]
    assert cli.main(args + ["--out", str(tmp_path / "a")]) == 0
    out = capsys.readouterr().out
    acc = float(out.split("frame accuracy ")[1].split()[0])
    assert acc >= 0.99
    assert cli.main(args + ["--out", str(tmp_path / "b")]) == 0
    assert files_of(tmp_path / "a") == files_of(tmp_path / "b")
    head = load_tensors(tmp_path / "a" / "overlap_head.ckpt")
    assert head["weights"].size + head["bias"].size == 17
    assert (tmp_path / "a" / "sc_toy_loss.csv").read_text().startswith("epoch,loss,nonspeaker_divisor")


def test_train_zero_epochs_keeps_initialization(corpus, tmp_path):
    assert cli.main(["train", "--corpus", str(corpus / "corpus"), "--out", str(tmp_path), "--epochs", "0",
                     "--toy-examples", "10", "--seed", "5"]) == 0
    head = load_tensors(tmp_path / "overlap_head.ckpt")
    assert not head["weights"].any() and not head["bias"].any()
    task = ToyTaskConfig()
    init = ToySCModel.init(task.n_inputs, task.dim, 16, task.n_labels, make_rng(5, "toy-init"), blank_bias=-2.0)
    got = load_model(tmp_path / "sc_toy.ckpt")
    for name, p in init.params().items():
        assert np.array_equal(got.params()[name], p.astype(np.float32).astype(np.float64))


def test_train_missing_corpus(tmp_path):
    assert cli.main(["train", "--corpus", str(tmp_path / "none"), "--out", str(tmp_path / "o")]) == 2


def test_train_divergence_exit_code(corpus, tmp_path, monkeypatch):
    def bad(X, y, head, hyper, rng):
        return head, [float("nan")]
    monkeypatch.setattr(cli, "train_overlap_head", bad)
    assert cli.main(["train", "--corpus", str(corpus / "corpus"), "--out", str(tmp_path),
                     "--sc-epochs", "0"]) == 3


def test_run_oracle_noiseless_scores_zero(corpus, tmp_path, capsys):
    b = corpus / "corpus" / "mix00000"
    assert cli.main(["run", "--bundle", str(b), "--oracle", "--noiseless", "--out", str(tmp_path / "r")]) == 0
    assert "WER 0.00%" in capsys.readouterr().out
    names = {p.name for p in (tmp_path / "r").iterdir()}
    assert {"transcript.txt", "sentences.tsv", "mode.tsv", "cost.txt"} <= names
    assert any(n.startswith("hyp_") for n in names)
    assert cli.main(["eval", "--corpus", str(b), "--hyp", str(tmp_path / "r"), "--out", str(tmp_path / "e"),
                     "--no-plots"]) == 0
    table = read_table(tmp_path / "e" / "table1.csv")
    assert len(table) == 2 and table[1][1] == "2" and table[1][3] == "0.00"


def test_run_needs_head_or_oracle(corpus, tmp_path):
    assert cli.main(["run", "--bundle", str(corpus / "corpus" / "mix00000"), "--out", str(tmp_path)]) == 2


def test_run_force_single_equals_si_baseline(corpus, tmp_path):
    b = str(corpus / "corpus")
    assert cli.main(["run", "--bundle", b, "--force-single", "--out", str(tmp_path / "f")]) == 0
    assert cli.main(["run", "--bundle", b, "--system", "SI", "--out", str(tmp_path / "s")]) == 0
    assert files_of(tmp_path / "f") == files_of(tmp_path / "s")
    assert all(l.startswith("hw\t1.000000") for l in
               [(tmp_path / "f" / d / "cost.txt").read_text() for d in ("mix00000", "mix00001")])


def test_run_is_deterministic(corpus, tmp_path):
    b = str(corpus / "corpus")
    for d in ("x", "y"):
        assert cli.main(["run", "--bundle", b, "--oracle", "--seed", "4", "--out", str(tmp_path / d)]) == 0
    assert files_of(tmp_path / "x") == files_of(tmp_path / "y")


def test_eval_grid_table(corpus, tmp_path):
    assert cli.main(["eval", "--corpus", str(corpus / "corpus"), "--out", str(tmp_path), "--n", "2,3,4",
                     "--methods", "all"]) == 0
    table = read_table(tmp_path / "table1.csv")
    assert [r[0] for r in table[1:]] == ["SI model (baseline)", "SI+SC (N=2)", "SI+SC (N=3)", "SI+SC (N=4)",
                                         "SC model only"]
    assert sum(1 for r in table[2:5] for c in r[3:] if c) == 12
    for name in ("fig2a.csv", "fig2b.csv"):
        assert (tmp_path / name).exists()
    assert list(tmp_path.glob("*.png"))


def test_eval_errors(corpus, tmp_path):
    assert cli.main(["eval", "--corpus", str(tmp_path / "none"), "--out", str(tmp_path / "o")]) == 2
    hyp = tmp_path / "hyp"
    (hyp / "other").mkdir(parents=True)
    assert cli.main(["eval", "--corpus", str(corpus / "corpus"), "--hyp", str(hyp),
                     "--out", str(tmp_path / "o")]) == 2
    with pytest.raises(SystemExit) as info:
        cli.main(["eval", "--corpus", str(corpus / "corpus"), "--n", "0", "--out", str(tmp_path)])
    assert info.value.code == 2


def test_manifest_validation(corpus, tmp_path):
    m = tmp_path / "m.json"
    m.write_text('{"n_recent": 3, "bogus": 1}')
    assert cli.main(["run", "--bundle", str(corpus / "corpus"), "--oracle", "--manifest", str(m),
                     "--out", str(tmp_path / "o")]) == 2
    m.write_text('{"n_recent": 3, "embed_method": "MEDOID", "windowing": {"window_s": 15}}')
    rc = cli.load_run_config(type("A", (), {"manifest": str(m), "seed": None})())
    assert rc.orchestrator.n_recent == 3 and rc.orchestrator.embed_method == "MEDOID"


def test_unknown_flag_and_help(capsys):
    with pytest.raises(SystemExit) as info:
        cli.main(["mix", "--frobnicate"])
    assert info.value.code == 2
    parser = cli.build_parser()
    sub = next(a for a in parser._actions if a.__class__.__name__ == "_SubParsersAction")
    assert set(sub.choices) >= {"synth-pool", "mix", "train", "run", "eval"}
    for name, sp in sub.choices.items():
        text = sp.format_help()
        for action in sp._actions:
            for opt in action.option_strings:
                assert opt in text
            assert action.help, f"{name}: {action.dest} has no help"


def test_serve_end_immediately(corpus):
    proc = subprocess.Popen([sys.executable, "-m", "ovlasr.cli", "run", "--bundle",
                             str(corpus / "corpus" / "mix00000"), "--oracle", "--serve", "--port", "0"],
                            stdout=subprocess.PIPE, text=True)
    try:
        line = proc.stdout.readline()
        host, port = line.split()[-1].rsplit(":", 1)
        with socket.create_connection((host, int(port))) as s, s.makefile("rb") as r:
            s.sendall(encode_frame(END))
            s.shutdown(socket.SHUT_WR)
            assert read_frame(r) is None
        assert proc.wait(timeout=60) == 0
    finally:
        proc.kill()
