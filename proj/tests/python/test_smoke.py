"""Smoke tests for the camlmlab extension module."""

import math
import os

import numpy as np
import pytest

import camlmlab

MICRO_CONFIG = """
[corpus]
range_size = 24
len_min = 4
len_max = 8
parallel_pairs = 120
mono_sentences = 80
heldout_pairs = 16
seed = 5

[model]
layers = 1
hidden = 16
heads = 2
ffn = 32
max_positions = 32

[train]
total_steps = 16
warmup_steps = 2
batch_size = 4
btmlm_start_step = 6
checkpoint_interval = 8
seed = 3
numeric_mode = f32
"""


@pytest.fixture()
def micro_config(tmp_path):
    path = tmp_path / "micro.cfg"
    path.write_text(MICRO_CONFIG)
    return str(path)


def test_version():
    assert camlmlab.__version__


def test_mask_matrix_worked_example():
    # figure mode, source x1..x3 with x2 masked, target y4..y7 with y5,y6 masked
    m = camlmlab.mask_matrix(
        "camlm", src_len=3, tgt_len=4, masked_src=[1], masked_tgt=[4, 5], mode="figure"
    )
    assert m.shape == (7, 7)
    assert list(np.flatnonzero(m[1])) == [1, 3, 4, 5, 6]  # p(x2 | M2, y4..y7)
    assert list(np.flatnonzero(m[4])) == [0, 1, 2, 4]  # p(y5 | x1,x2,x3, M5)

    strict = camlmlab.mask_matrix(
        "camlm", src_len=3, tgt_len=4, masked_src=[1], masked_tgt=[4, 5], mode="strict"
    )
    assert list(np.flatnonzero(strict[1])) == [1, 3, 6]

    stage1 = camlmlab.mask_matrix("btmlm-stage1", src_len=4, pseudo=3)
    assert list(np.flatnonzero(stage1[4])) == [0, 1, 2, 3, 4]

    assert camlmlab.mask_matrix("mmlm", src_len=5).all()
    assert camlmlab.mask_matrix("tlm", src_len=2, tgt_len=3).all()


def test_masked_softmax_rows():
    scores = np.array([[1.0, 2.0, 3.0], [0.0, 0.0, 0.0], [5.0, 1.0, 1.0]])
    allowed = np.array(
        [[True, True, True], [True, False, True], [False, True, False]]
    )
    p = camlmlab.masked_softmax(scores, allowed)
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-12)
    assert p[1, 1] == 0.0
    assert p[2, 1] == 1.0
    z = math.exp(1.0) + math.exp(2.0) + math.exp(3.0)
    assert abs(p[0, 2] - math.exp(3.0) / z) < 1e-12


def test_gelu_values():
    y = camlmlab.gelu(np.array([0.0, 1.0, -10.0]))
    assert y[0] == 0.0
    # scalar oracle of the tanh form: 0.5*(1 + tanh(sqrt(2/pi)*1.044715))
    assert abs(y[1] - 0.8411919906082768) < 1e-9
    assert abs(y[2]) < 1e-6


def test_encoder_gradcheck():
    assert camlmlab.encoder_gradcheck(seed=1) <= 1e-4


def test_corpus_train_eval_cycle(tmp_path, micro_config):
    data_dir = str(tmp_path / "data")
    paths = camlmlab.gen_corpora(micro_config, data_dir)
    assert os.path.exists(paths["parallel"])
    assert len(paths["mono"]) == 2

    run_dir = str(tmp_path / "run")
    code = camlmlab.cli_main(
        ["train", "--config", micro_config, "--data", data_dir, "--run-dir", run_dir]
    )
    assert code == 0
    ckpt = os.path.join(run_dir, "checkpoints", "final.ckpt")
    assert os.path.exists(ckpt)

    report = camlmlab.retrieval_eval(micro_config, ckpt, data_dir)
    assert report["pairs"] == 16
    assert 0.0 <= report["top1_src2tgt"] <= 1.0

    # training reduced the loss on its own metrics log
    lines = [
        line
        for line in open(os.path.join(run_dir, "metrics.jsonl"))
        if line.strip()
    ]
    assert len(lines) == 16


def test_cli_exit_codes(tmp_path, micro_config):
    assert camlmlab.cli_main(["gen-corpus", "--config", micro_config]) == 2
    assert camlmlab.cli_main(["report", "--run-dir", str(tmp_path / "none")]) == 3
