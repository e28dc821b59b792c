"""Evaluation campaigns over trained classifiers.

Builds robust-accuracy reports, budget-split sweeps, and
representation-space exports from the attack primitives.

Determinism contract: examples are processed in fixed-size chunks
(``chunk_size``, default 256) in dataset order, and each example's
restart seeds derive from the attack seed and the example's dataset
position, so a report is identical for any worker count.  Workers only
overlap chunk execution; they never change chunk boundaries.

Robust-accuracy convention: an input the model already misclassifies
counts as an attack success without running the attack.  Such examples
carry no iteration sample, so the mean/median iterations-to-success
statistics describe attacked examples only.
"""

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import __version__
from .attacks import run_restarts_batch


@dataclass(frozen=True)
class ExampleOutcome:
    """Per-example result inside an EvalReport.

    ``iterations`` is the best restart's first-flip iteration (0 for an
    input that was already misclassified, -1 when every restart
    failed); ``attacked`` is False when the clean prediction was
    already wrong and the attack was skipped.
    """

    index: int
    label: int
    predicted: int
    success: bool
    iterations: int
    restart: int
    attacked: bool

    def to_dict(self):
        return {
            "index": self.index,
            "label": self.label,
            "predicted": self.predicted,
            "success": self.success,
            "iterations": self.iterations,
            "restart": self.restart,
            "attacked": self.attacked,
        }


@dataclass(frozen=True)
class EvalReport:
    """Aggregate outcome of one attack campaign on one model."""

    model_id: str
    attack_id: str
    method: str
    init: str
    clean_accuracy: float
    robust_accuracy: float
    evaluated: int
    successes: int
    failures: int
    mean_iterations_to_success: float | None
    median_iterations_to_success: float | None
    seeds: tuple
    config: dict
    examples: tuple

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.successes + self.failures != self.evaluated:
            raise ValueError(
                f"counts do not reconcile: {self.successes} successes + "
                f"{self.failures} failures != {self.evaluated} evaluated"
            )
        if len(self.examples) != self.evaluated:
            raise ValueError(
                f"{len(self.examples)} example outcomes for "
                f"{self.evaluated} evaluated examples"
            )
        if sum(1 for e in self.examples if e.success) != self.successes:
            raise ValueError("success count disagrees with example outcomes")
        if self.robust_accuracy > self.clean_accuracy + 1e-12:
            raise ValueError(
                f"robust accuracy {self.robust_accuracy} exceeds clean "
                f"accuracy {self.clean_accuracy}"
            )

    def to_dict(self):
        return {
            "version": __version__,
            "model_id": self.model_id,
            "attack_id": self.attack_id,
            "method": self.method,
            "init": self.init,
            "clean_accuracy": self.clean_accuracy,
            "robust_accuracy": self.robust_accuracy,
            "evaluated": self.evaluated,
            "successes": self.successes,
            "failures": self.failures,
            "mean_iterations_to_success": self.mean_iterations_to_success,
            "median_iterations_to_success": self.median_iterations_to_success,
            "seeds": list(self.seeds),
            "config": self.config,
            "examples": [e.to_dict() for e in self.examples],
        }

    def to_json(self):
        # sorted keys and no timestamps: byte-identical re-runs
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def model_id_of(c):
    """Short provenance string for a classifier, from its metadata."""
    meta = c.meta
    parts = [str(meta.get("preset", "classifier"))]
    if meta.get("adversarial"):
        parts.append("advtrain")
    if meta.get("dataset_id"):
        parts.append(str(meta["dataset_id"]))
    if meta.get("seed") is not None:
        parts.append(f"seed{meta['seed']}")
    return "-".join(parts)


def attack_id_of(config, method, init):
    return (
        f"{method}-{init}-eps{config.epsilon:g}-r{config.restarts}"
        f"-b{config.n_init}+{config.n_attack}"
    )


def _config_snapshot(config, method, init):
    # Outcomes do not depend on workers or chunk_size (restart seeds come
    # from absolute dataset position), so neither belongs in the snapshot.
    snap = asdict(config)
    snap["method"] = method
    snap["init"] = init
    return snap


def evaluate(c, bs, dataset, config, method="pgd", init="boundary", *,
             workers=1, chunk_size=256):
    """Attack every example of ``dataset`` and aggregate an EvalReport.

    Runs ``run_restarts_batch`` on the correctly classified examples of
    each chunk; misclassified inputs are immediate successes.  The
    report is deterministic in (config, dataset, model) and independent
    of ``workers``.
    """
    if len(dataset) == 0:
        raise ValueError("cannot evaluate an empty dataset")
    x, y = dataset.images, dataset.labels
    n = len(dataset)
    stride = max(config.restarts, 1)

    def run_chunk(bounds):
        lo, hi = bounds
        xs, ys = x[lo:hi], y[lo:hi]
        pred = c.predict(xs)
        correct = pred == ys
        success = ~correct
        iters = np.where(correct, -1, 0).astype(np.int64)
        restart = np.full(hi - lo, -1, dtype=np.int64)
        idx = np.nonzero(correct)[0]
        if idx.size:
            out = run_restarts_batch(
                c, bs, xs[idx], ys[idx], config, method=method, init=init,
                base_seeds=config.seed + (lo + idx) * stride,
            )
            success[idx] = out.success
            iters[idx] = out.iterations
            restart[idx] = out.restart
        return pred, correct, success, iters, restart

    bounds = [(s, min(s + chunk_size, n)) for s in range(0, n, chunk_size)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_chunk, bounds))
    else:
        results = [run_chunk(b) for b in bounds]

    pred = np.concatenate([r[0] for r in results])
    correct = np.concatenate([r[1] for r in results])
    success = np.concatenate([r[2] for r in results])
    iters = np.concatenate([r[3] for r in results])
    restart = np.concatenate([r[4] for r in results])

    samples = iters[correct & success]
    mean_its = float(samples.mean()) if samples.size else None
    median_its = float(np.median(samples)) if samples.size else None
    n_success = int(success.sum())
    examples = tuple(
        ExampleOutcome(
            index=i,
            label=int(y[i]),
            predicted=int(pred[i]),
            success=bool(success[i]),
            iterations=int(iters[i]),
            restart=int(restart[i]),
            attacked=bool(correct[i]),
        )
        for i in range(n)
    )
    return EvalReport(
        model_id=model_id_of(c),
        attack_id=attack_id_of(config, method, init),
        method=method,
        init=init,
        clean_accuracy=float(correct.sum()) / n,
        robust_accuracy=float(n - n_success) / n,
        evaluated=n,
        successes=n_success,
        failures=n - n_success,
        mean_iterations_to_success=mean_its,
        median_iterations_to_success=median_its,
        seeds=(int(config.seed),),
        config=_config_snapshot(config, method, init),
        examples=examples,
    )


@dataclass(frozen=True)
class SweepPoint:
    n_init: int
    n_attack: int
    seed: int
    report: EvalReport


@dataclass(frozen=True)
class SweepResult:
    """Budget-split sweep: one evaluation per (initialization budget,
    seed) at a fixed total iteration budget."""

    total_budget: int
    n_init_values: tuple
    seeds: tuple
    method: str
    init: str
    base_config: dict
    points: tuple

    def _per_seed(self, nv, getter):
        return [
            getter(p.report)
            for p in self.points
            if p.n_init == nv and getter(p.report) is not None
        ]

    def mean_iterations_series(self):
        """Seed-averaged mean iterations-to-success per budget split.

        None for a split where no seed produced a successful attacked
        example.
        """
        series = []
        for nv in self.n_init_values:
            vals = self._per_seed(nv, lambda r: r.mean_iterations_to_success)
            series.append(float(np.mean(vals)) if vals else None)
        return tuple(series)

    def robust_accuracy_series(self):
        return tuple(
            float(np.mean(self._per_seed(nv, lambda r: r.robust_accuracy)))
            for nv in self.n_init_values
        )

    def to_csv(self, meta=None):
        """Tidy CSV: one row per (n_init, seed) plus seed="mean" rows.

        ``meta`` key/value pairs are embedded as leading comment lines.
        """
        lines = ["# boundarylab-sweep 1", f"# version: {__version__}"]
        lines.append(f"# method: {self.method}")
        lines.append(f"# init: {self.init}")
        lines.append(f"# total_budget: {self.total_budget}")
        lines.append(
            "# base_config: " + json.dumps(self.base_config, sort_keys=True)
        )
        lines.append("# seeds: " + ",".join(str(s) for s in self.seeds))
        for key in sorted(meta or {}):
            lines.append(f"# {key}: {meta[key]}")
        lines.append(
            "n_init,n_attack,total_budget,seed,evaluated,successes,"
            "robust_accuracy,mean_iterations_to_success,"
            "median_iterations_to_success"
        )

        def cell(v):
            return "" if v is None else repr(v) if isinstance(v, float) else str(v)

        for p in self.points:
            r = p.report
            lines.append(",".join([
                str(p.n_init), str(p.n_attack), str(self.total_budget),
                str(p.seed), str(r.evaluated), str(r.successes),
                cell(r.robust_accuracy),
                cell(r.mean_iterations_to_success),
                cell(r.median_iterations_to_success),
            ]))
        mean_iters = self.mean_iterations_series()
        mean_rob = self.robust_accuracy_series()
        for nv, mi, mr in zip(self.n_init_values, mean_iters, mean_rob):
            n_attack = self.total_budget - nv
            lines.append(",".join([
                str(nv), str(n_attack), str(self.total_budget), "mean",
                "", "", cell(mr), cell(mi), "",
            ]))
        return "\n".join(lines) + "\n"


def sweep_n_init(c, bs, dataset, config, n_init_values, method="pgd",
                 init="boundary", *, seeds=None, workers=1, chunk_size=256):
    """Evaluate at several initialization budgets, total budget fixed.

    Every split keeps n_init + n_attack equal to the base config's
    total, so columns compare strategies at equal cost.  ``seeds``
    (default: just the config seed) repeats each split for averaging.
    """
    values = [int(v) for v in n_init_values]
    if not values:
        raise ValueError("n_init_values is empty")
    seeds = (config.seed,) if seeds is None else tuple(int(s) for s in seeds)
    points = []
    for nv in values:
        cfg = config.with_budget_split(nv)
        for sd in seeds:
            rep = evaluate(
                c, bs, dataset, replace(cfg, seed=sd), method=method,
                init=init, workers=workers, chunk_size=chunk_size,
            )
            points.append(
                SweepPoint(n_init=nv, n_attack=cfg.n_attack, seed=sd,
                           report=rep)
            )
    return SweepResult(
        total_budget=config.n_init + config.n_attack,
        n_init_values=tuple(values),
        seeds=seeds,
        method=method,
        init=init,
        base_config=asdict(config),
        points=tuple(points),
    )


@dataclass(frozen=True)
class ReprRecord:
    """One point of a representation-space export.

    ``kind`` is "original" or "adversarial"; both members of a pair
    share ``index`` and the pair's attack success flag.
    """

    index: int
    kind: str
    label: int
    predicted: int
    success: bool
    v: tuple


@dataclass(frozen=True)
class ReprExport:
    """Plot-ready dump of representation vectors and boundary rows.

    ``boundaries`` holds (class_i, class_j, weight row, bias) for every
    pair, enough to draw each line w.v + b = 0 when n == 2.
    """

    k: int
    n: int
    boundaries: tuple
    records: tuple

    def __post_init__(self):
        self.validate()

    def validate(self):
        if len(self.boundaries) != self.k * (self.k - 1) // 2:
            raise ValueError(
                f"{len(self.boundaries)} boundary rows for k={self.k}; "
                f"expected {self.k * (self.k - 1) // 2}"
            )
        kinds = {}
        for rec in self.records:
            kinds.setdefault(rec.index, []).append(rec.kind)
        for idx, ks in kinds.items():
            if sorted(ks) != ["adversarial", "original"]:
                raise ValueError(
                    f"example {idx}: records {ks} are not an "
                    "original/adversarial pair"
                )

    def to_csv(self, meta=None):
        lines = ["# boundarylab-repr-export 1", f"# version: {__version__}"]
        lines.append(f"# k: {self.k}")
        lines.append(f"# n: {self.n}")
        for key in sorted(meta or {}):
            lines.append(f"# {key}: {meta[key]}")
        comp = ",".join(f"c{q}" for q in range(self.n))
        lines.append(
            f"kind,index,class_i,class_j,label,predicted,success,bias,{comp}"
        )
        for ci, cj, w, bias in self.boundaries:
            row = ["boundary", "", str(ci), str(cj), "", "", "", repr(bias)]
            row += [repr(float(q)) for q in w]
            lines.append(",".join(row))
        for rec in self.records:
            row = [rec.kind, str(rec.index), "", "", str(rec.label),
                   str(rec.predicted), str(rec.success).lower(), ""]
            row += [repr(float(q)) for q in rec.v]
            lines.append(",".join(row))
        return "\n".join(lines) + "\n"

    def to_dict(self):
        return {
            "version": __version__,
            "k": self.k,
            "n": self.n,
            "boundaries": [
                {"class_i": ci, "class_j": cj,
                 "w": [float(q) for q in w], "bias": bias}
                for ci, cj, w, bias in self.boundaries
            ],
            "records": [
                {"index": r.index, "kind": r.kind, "label": r.label,
                 "predicted": r.predicted, "success": r.success,
                 "v": [float(q) for q in r.v]}
                for r in self.records
            ],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def export_representation_space(c, bs, dataset, outcome):
    """Pair original and adversarial representation vectors for export.

    ``outcome`` is a BatchOutcome aligned with ``dataset`` (one row per
    example, e.g. from run_restarts_batch on the full set).  Works for
    any representation width; two-dimensional exports are directly
    plottable against the boundary rows.
    """
    n_ex = len(dataset)
    if outcome.x_adv.shape[0] != n_ex:
        raise ValueError(
            f"outcome covers {outcome.x_adv.shape[0]} examples, dataset "
            f"has {n_ex}"
        )
    v_orig = c.head_forward(dataset.images, train=False)
    v_adv = c.head_forward(outcome.x_adv, train=False)
    pred_orig = np.argmax(c.tail_forward(v_orig), axis=1)
    pred_adv = np.argmax(c.tail_forward(v_adv), axis=1)
    records = []
    for i in range(n_ex):
        ok = bool(outcome.success[i])
        records.append(ReprRecord(
            index=i, kind="original", label=int(dataset.labels[i]),
            predicted=int(pred_orig[i]), success=ok,
            v=tuple(float(q) for q in v_orig[i]),
        ))
        records.append(ReprRecord(
            index=i, kind="adversarial", label=int(dataset.labels[i]),
            predicted=int(pred_adv[i]), success=ok,
            v=tuple(float(q) for q in v_adv[i]),
        ))
    boundaries = tuple(
        (int(i), int(j), tuple(float(q) for q in bs.rows[p]),
         float(bs.biases[p]))
        for p, (i, j) in enumerate(bs.pairs)
    )
    return ReprExport(k=bs.k, n=int(bs.rows.shape[1]),
                      boundaries=boundaries, records=tuple(records))
