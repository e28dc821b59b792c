import dataclasses
import json

import numpy as np
import pytest

from boundarylab import attacks, data, geometry, harness, model


def test_report_counts_reconcile(blobs_mlp, blobs_boundaries, blobs_test,
                                 quick_attack_config):
    rep = harness.evaluate(blobs_mlp, blobs_boundaries, blobs_test,
                           quick_attack_config)
    assert rep.evaluated == len(blobs_test.labels)
    assert rep.successes + rep.failures == rep.evaluated
    assert rep.robust_accuracy == pytest.approx(
        rep.failures / rep.evaluated)
    assert rep.robust_accuracy <= rep.clean_accuracy + 1e-12
    assert len(rep.examples) == rep.evaluated
    assert sum(e.success for e in rep.examples) == rep.successes


def test_validation_rejects_tampered_counts(blobs_mlp, blobs_boundaries,
                                            blobs_test,
                                            quick_attack_config):
    rep = harness.evaluate(blobs_mlp, blobs_boundaries, blobs_test,
                           quick_attack_config)
    with pytest.raises(ValueError):
        dataclasses.replace(rep, successes=rep.successes + 1)


def test_misclassified_examples_are_not_attacked(blobs_boundaries,
                                                 blobs_test,
                                                 quick_attack_config):
    # an untrained model misclassifies plenty of inputs
    raw = model.mlp((8,), k=4, n=2, hidden=(16,), seed=99)
    bs = geometry.boundary_set_for(raw)
    rep = harness.evaluate(raw, bs, blobs_test, quick_attack_config)
    skipped = [e for e in rep.examples if not e.attacked]
    assert skipped, "untrained model should misclassify something"
    for e in skipped:
        assert e.predicted != e.label
        assert e.success
        assert e.iterations == 0
        assert e.restart == -1
    assert rep.clean_accuracy == pytest.approx(
        sum(e.attacked for e in rep.examples) / rep.evaluated)


def test_zero_epsilon_keeps_robust_equal_to_clean(blobs_mlp,
                                                  blobs_boundaries,
                                                  blobs_test):
    cfg = attacks.AttackConfig(epsilon=0.0, alpha=0.02, restarts=2,
                               n_init=2, n_attack=5, seed=1)
    rep = harness.evaluate(blobs_mlp, blobs_boundaries, blobs_test, cfg)
    assert rep.robust_accuracy == rep.clean_accuracy


def test_iteration_stats_cover_attacked_successes_only(blobs_mlp,
                                                       blobs_boundaries,
                                                       blobs_test,
                                                       quick_attack_config):
    rep = harness.evaluate(blobs_mlp, blobs_boundaries, blobs_test,
                           quick_attack_config)
    iters = [e.iterations for e in rep.examples if e.success and e.attacked]
    if iters:
        assert rep.mean_iterations_to_success == pytest.approx(
            float(np.mean(iters)))
        assert rep.median_iterations_to_success == pytest.approx(
            float(np.median(iters)))
    else:
        assert rep.mean_iterations_to_success is None


def test_report_is_identical_across_worker_counts(blobs_mlp,
                                                  blobs_boundaries,
                                                  blobs_test,
                                                  quick_attack_config):
    texts = []
    for workers in (1, 3):
        rep = harness.evaluate(blobs_mlp, blobs_boundaries, blobs_test,
                               quick_attack_config, workers=workers,
                               chunk_size=8)
        texts.append(rep.to_json())
    assert texts[0] == texts[1]


def test_report_is_identical_across_chunk_sizes(blobs_mlp,
                                                blobs_boundaries,
                                                blobs_test,
                                                quick_attack_config):
    a = harness.evaluate(blobs_mlp, blobs_boundaries, blobs_test,
                         quick_attack_config, chunk_size=7)
    b = harness.evaluate(blobs_mlp, blobs_boundaries, blobs_test,
                         quick_attack_config, chunk_size=256)
    assert a.to_json() == b.to_json()


def test_report_json_round_trips(blobs_mlp, blobs_boundaries, blobs_test,
                                 quick_attack_config):
    rep = harness.evaluate(blobs_mlp, blobs_boundaries, blobs_test,
                           quick_attack_config)
    payload = json.loads(rep.to_json())
    assert payload == rep.to_dict()
    assert payload["config"]["epsilon"] == quick_attack_config.epsilon
    assert "version" in payload
    assert "workers" not in payload["config"]


def test_attack_and_model_ids_are_descriptive(blobs_mlp,
                                              quick_attack_config):
    aid = harness.attack_id_of(quick_attack_config, "pgd", "boundary")
    assert "pgd" in aid and "boundary" in aid and "eps0.08" in aid
    mid = harness.model_id_of(blobs_mlp)
    assert "mlp" in mid


# -- sweep ---------------------------------------------------------------


def test_sweep_holds_total_budget_fixed(blobs_mlp, blobs_boundaries,
                                        blobs_test):
    cfg = attacks.AttackConfig(epsilon=0.08, alpha=0.02, restarts=1,
                               n_init=0, n_attack=6, seed=2)
    sw = harness.sweep_n_init(blobs_mlp, blobs_boundaries, blobs_test, cfg,
                              n_init_values=[0, 2, 4], seeds=[2, 3])
    assert sw.total_budget == 6
    assert len(sw.points) == 6  # 3 values x 2 seeds
    for pt in sw.points:
        assert pt.n_init + pt.n_attack == 6
        assert pt.report.config["n_init"] == pt.n_init
        assert pt.report.seeds == (pt.seed,)


def test_sweep_zero_init_point_equals_random_init(blobs_mlp,
                                                  blobs_boundaries,
                                                  blobs_test):
    cfg = attacks.AttackConfig(epsilon=0.08, alpha=0.02, restarts=1,
                               n_init=0, n_attack=6, seed=2)
    sw = harness.sweep_n_init(blobs_mlp, blobs_boundaries, blobs_test, cfg,
                              n_init_values=[0], seeds=[2])
    rand = harness.evaluate(blobs_mlp, blobs_boundaries, blobs_test, cfg,
                            method="pgd", init="random")
    pt = sw.points[0]
    assert pt.report.robust_accuracy == rand.robust_accuracy
    assert [e.iterations for e in pt.report.examples] == [
        e.iterations for e in rand.examples]


def test_sweep_series_and_csv(blobs_mlp, blobs_boundaries, blobs_test):
    cfg = attacks.AttackConfig(epsilon=0.08, alpha=0.02, restarts=1,
                               n_init=0, n_attack=6, seed=2)
    sw = harness.sweep_n_init(blobs_mlp, blobs_boundaries, blobs_test, cfg,
                              n_init_values=[0, 3], seeds=[1, 2, 3])
    robust = sw.robust_accuracy_series()
    assert len(robust) == 2  # one seed-mean per budget split
    for v in robust:
        assert 0.0 <= v <= 1.0
    # the series is the plain mean of the per-seed reports
    per_seed = [pt.report.robust_accuracy for pt in sw.points
                if pt.n_init == 0]
    assert robust[0] == pytest.approx(np.mean(per_seed))
    text = sw.to_csv()
    lines = text.strip().split("\n")
    assert lines[0].startswith("#")
    rows = [l for l in lines if not l.startswith("#")][1:]
    # per-(value, seed) rows plus one mean row per value
    assert len(rows) == 2 * 3 + 2
    mean_rows = [r for r in rows if ",mean," in r or r.split(",")[1] == "mean"]
    assert len(mean_rows) == 2


def test_sweep_is_deterministic(blobs_mlp, blobs_boundaries, blobs_test):
    cfg = attacks.AttackConfig(epsilon=0.08, alpha=0.02, restarts=1,
                               n_init=1, n_attack=5, seed=4)
    a = harness.sweep_n_init(blobs_mlp, blobs_boundaries, blobs_test, cfg,
                             n_init_values=[0, 2], seeds=[4]).to_csv()
    b = harness.sweep_n_init(blobs_mlp, blobs_boundaries, blobs_test, cfg,
                             n_init_values=[0, 2], seeds=[4],
                             workers=2, chunk_size=8).to_csv()
    assert a == b


# -- representation export ----------------------------------------------


@pytest.fixture(scope="module")
def repr_export(request):
    blobs_mlp = request.getfixturevalue("blobs_mlp")
    blobs_boundaries = request.getfixturevalue("blobs_boundaries")
    blobs_test = request.getfixturevalue("blobs_test")
    cfg = attacks.AttackConfig(epsilon=0.12, alpha=0.03, restarts=2,
                               n_init=2, n_attack=8, seed=5)
    out = attacks.run_restarts_batch(
        blobs_mlp, blobs_boundaries, blobs_test.images, blobs_test.labels,
        cfg, base_seeds=cfg.seed + np.arange(len(blobs_test.labels))
        * cfg.restarts)
    exp = harness.export_representation_space(blobs_mlp, blobs_boundaries,
                                              blobs_test, out)
    return exp, out, blobs_mlp, blobs_boundaries, blobs_test


def test_export_has_all_boundaries_and_pairs(repr_export):
    exp, out, clf, bs, ds = repr_export
    assert exp.k == bs.k and exp.n == bs.n
    assert len(exp.boundaries) == bs.k * (bs.k - 1) // 2
    by_index = {}
    for rec in exp.records:
        by_index.setdefault(rec.index, []).append(rec.kind)
    for kinds in by_index.values():
        assert sorted(kinds) == ["adversarial", "original"]


def test_export_predictions_match_region_predicate(repr_export):
    exp, out, clf, bs, ds = repr_export
    for rec in exp.records:
        v = np.asarray(rec.v)
        z = v @ clf.tail.weight.T + clf.tail.bias
        assert rec.predicted == int(np.argmax(z))


def test_export_success_flag_matches_outcome(repr_export):
    exp, out, clf, bs, ds = repr_export
    for rec in exp.records:
        assert rec.success == bool(out.success[rec.index])


def test_export_csv_is_stable(repr_export):
    exp, out, clf, bs, ds = repr_export
    exp2 = harness.export_representation_space(clf, bs, ds, out)
    assert exp.to_csv() == exp2.to_csv()
    header = [l for l in exp.to_csv().split("\n")
              if l and not l.startswith("#")][0]
    assert header.split(",")[:3] == ["kind", "index", "class_i"]
