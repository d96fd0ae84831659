import math

import numpy as np
import pytest
import torch

from semclip import experiments as ex
from semclip.config import ExperimentConfig
from semclip.errors import ClassOverlapError, FormatError, MissingCheckpointError
from semclip.tapl import cosine_scores, retrieve
from semclip.world import ClassPool

TINY = ExperimentConfig(seeds=(0,), token_dim=16, embed_dim=16, subspace_dim=4, train_classes=4,
                        test_classes=4, train_per_class=32, test_per_class=40, channel_uses=8,
                        stage1_steps=40, stage2_steps=20, batch_size=32, cross_classes=3,
                        cross_per_class=20, bandwidth_uses=(4, 8))


@pytest.fixture(scope="module")
def trained():
    return ex.train_seed(TINY, 0)


@pytest.fixture(scope="module")
def split(trained):
    return ex.test_split(TINY, trained.world, 0)


def test_noiseless_uncoded_equals_upper_bound(trained, split):
    data, classes = split
    up = ex.eval_classification(trained, "upper_bound", math.inf, data, classes)
    assert ex.eval_classification(trained, "clip_ft_direct", math.inf, data, classes) == up
    s = torch.as_tensor(data.values)
    cos = torch.nn.functional.cosine_similarity(s, ex.baseline_clip_ft(s, math.inf), dim=1)
    assert float(cos.min()) > 1 - 1e-6


def test_uncoded_fidelity_matches_closed_form():
    g = torch.Generator().manual_seed(0)
    s = torch.randn(2000, 256, generator=g, dtype=torch.float64)
    for snr in (-5.0, 0.0, 10.0):
        s_hat = ex.baseline_clip_ft(s, snr, g, power=2.0)
        cos = float(torch.nn.functional.cosine_similarity(s, s_hat, dim=1).mean())
        assert cos == pytest.approx(1 / math.sqrt(1 + 10 ** (-snr / 10)), abs=0.01)


def test_uncoded_handles_odd_width():
    s = torch.randn(3, 7)
    assert ex.baseline_clip_ft(s, 5.0).shape == (3, 7)


def test_separable_noiseless_case_is_perfect():
    scores = torch.eye(4).repeat(5, 1) + 0.01 * torch.rand(20, 4)
    labels = np.tile(np.arange(4), 5)
    assert ex.top1(scores, labels) == 1.0
    assert ex.recall_at_1(scores, labels) == 1.0


def test_shuffled_labels_are_chance(trained, split):
    data, classes = split
    acc = ex.eval_classification(trained, "upper_bound", math.inf, data, classes, shuffle_labels=True)
    g, n = len(classes), len(data)
    assert abs(acc - 1 / g) <= 3 * math.sqrt((1 / g) * (1 - 1 / g) / n)


def test_recall_agrees_with_retrieve():
    g = torch.Generator().manual_seed(2)
    s, text = torch.randn(12, 5, generator=g), torch.randn(3, 5, generator=g)
    labels = np.tile(np.arange(3), 4)
    hits = []
    for j in range(4):
        gallery = s[j * 3:(j + 1) * 3]  # one image per class, class k at position k
        hits += [int(retrieve(text[k], gallery)[0]) == k for k in range(3)]
    assert ex.recall_at_1(cosine_scores(s, text), labels) == pytest.approx(np.mean(hits))


def test_recall_needs_every_class():
    with pytest.raises(ValueError):
        ex.recall_at_1(torch.zeros(2, 3), [0, 1])


def test_report_rows_validate():
    with pytest.raises(ValueError):
        ex.ReportRow("nope", 0.0, "top1", 0.5, 0, "h")
    with pytest.raises(ValueError):
        ex.ReportRow("semclip", 0.0, "top5", 0.5, 0, "h")
    with pytest.raises(ValueError):
        ex.ReportRow("semclip", 0.0, "top1", 1.5, 0, "h")


def test_sweep_rows_and_round_trip(trained, tmp_path):
    result = ex.snr_sweep(TINY, [trained])
    assert result.complete
    for method in ex.ALL_METHODS:
        for metric in TINY.metrics:
            rows = [r for r in result.rows if r.method == method and r.metric == metric]
            assert sorted(r.snr_db for r in rows) == sorted(TINY.snrs)
    ex.write_report(result.rows, tmp_path / "a.csv", TINY.hash(), scale=TINY.scale)
    rows, footer = ex.parse_report(tmp_path / "a.csv")
    assert rows == sorted(result.rows, key=ex.ReportRow.key) and footer == TINY.hash()
    again = ex.snr_sweep(TINY, [trained])
    ex.write_report(again.rows, tmp_path / "b.csv", TINY.hash(), scale=TINY.scale)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    header = [l for l in (tmp_path / "a.csv").read_text().splitlines() if not l.startswith("#")][0]
    assert header == ",".join(ex.REPORT_COLUMNS)


def test_report_format_errors(tmp_path):
    with pytest.raises(ValueError):
        ex.write_report([], tmp_path / "x.csv", "h")
    (tmp_path / "bad.csv").write_text("method,snr\n")
    with pytest.raises(FormatError):
        ex.parse_report(tmp_path / "bad.csv")
    (tmp_path / "nofoot.csv").write_text(",".join(ex.REPORT_COLUMNS) + "\nsemclip,0.0,top1,0.5,0,h\n")
    with pytest.raises(FormatError):
        ex.parse_report(tmp_path / "nofoot.csv")


def test_failed_cells_are_recorded(trained, split, tmp_path):
    data, classes = split
    short = classes.subset([0, 1])
    result = ex.run_cells([trained], ("semclip", "upper_bound"), (0.0,), ("top1",),
                          lambda t: (data, short), "h")
    assert not result.complete and len(result.failures) == 2 and not result.rows
    ok = ex.run_cells([trained], ("upper_bound",), (0.0,), ("top1",), lambda t: (data, classes), "h")
    ex.write_report(ok.rows, tmp_path / "r.csv", "h", result.failures)
    assert "# failed: method=semclip" in (tmp_path / "r.csv").read_text()


def test_high_snr_uncoded_close_to_upper_bound(trained, split):
    data, classes = split
    up = ex.eval_classification(trained, "upper_bound", 0.0, data, classes)
    assert abs(ex.eval_classification(trained, "clip_ft_direct", 30.0, data, classes) - up) <= 0.01


def test_overlap_is_rejected(trained):
    pool = trained.train_pool
    with pytest.raises(ClassOverlapError):
        ex.check_disjoint(pool, pool)
    renamed = ClassPool([f"x{k}" for k in range(len(pool))], pool.centers * 2.0, "x")
    with pytest.raises(ClassOverlapError):
        ex.check_disjoint(pool, renamed)
    with pytest.raises(ClassOverlapError):
        ex.cross_dataset_eval(TINY, [trained], split="train")
    result = ex.cross_dataset_eval(TINY, [trained])
    assert result.complete and {r.method for r in result.rows} == set(TINY.methods)


def test_checkpoints_round_trip(trained, split, tmp_path):
    with pytest.raises(MissingCheckpointError):
        ex.load_trained(TINY, 0, tmp_path)
    digests = ex.save_trained(trained, tmp_path)
    back = ex.load_trained(TINY, 0, tmp_path)
    assert back.digests() == digests
    data, classes = split
    for method in ("semclip", "semclip_no_af"):
        assert (ex.eval_classification(back, method, 0.0, data, classes) ==
                ex.eval_classification(trained, method, 0.0, data, classes))


def test_bandwidth_rows(trained):
    rows = ex.bandwidth_sweep(TINY, [trained])
    semclip = {r.channel_uses: r.bandwidth_ratio for r in rows if r.method == "semclip"}
    assert semclip == {4: 4 / (336 * 336 * 3), 8: 8 / (336 * 336 * 3)}
    uncoded = [r for r in rows if r.method == "clip_ft_direct"]
    assert len(uncoded) == 1 and uncoded[0].channel_uses == 8


def test_codec_loss_drops_with_training(trained):
    world, pool = ex.make_world(TINY, 0)
    data = ex.heldout_tokens(TINY, world, pool, 0, per_class=32)
    fresh = ex._new_codec(TINY, 0, ex.train_tokens(TINY, world, pool, 0), True)
    assert ex.codec_loss(trained.codec, data, TINY.snrs, TINY.scale) < ex.codec_loss(fresh, data, TINY.snrs, TINY.scale)
