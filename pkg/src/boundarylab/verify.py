"""Fast self-check suite behind the ``verify`` CLI command.

Each check is a cheap, seeded variant of an invariant the test suite
covers in depth: gradient fidelity against finite differences, the
pairwise-boundary partition, distance and projection oracles, the
linear-case descent identity, threat-model containment, and report
reconciliation.  ``run_all`` returns results; it never raises for a
failing check.
"""

from dataclasses import dataclass

import numpy as np

from . import attacks, data, geometry, harness, layers, model


@dataclass(frozen=True)
class CheckResult:
    name: str
    ok: bool
    detail: str


def _rel_err(analytic, fd):
    num = np.linalg.norm(analytic - fd)
    return num / max(np.linalg.norm(fd), 1e-12)


def _fd_grad(f, x, eps=1e-6):
    """Central finite differences of scalar f at x, elementwise."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + eps
        hi = f(x)
        flat[i] = keep - eps
        lo = f(x)
        flat[i] = keep
        gf[i] = (hi - lo) / (2 * eps)
    return g


def _layer_cases(rng):
    yield "dense", layers.Dense(5, 3, rng=rng), (4, 5)
    yield "conv2d", layers.Conv2d(2, 3, 3, padding=1, rng=rng), (2, 2, 5, 5)
    yield "relu", layers.ReLU(), (3, 7)
    yield "maxpool", layers.MaxPool2x2(), (2, 2, 6, 6)
    yield "batchnorm", layers.BatchNorm(3), (4, 3, 5, 5)
    yield "flatten", layers.Flatten(), (3, 2, 4, 4)


def check_layer_gradients(seed=0, tol=1e-5):
    rng = np.random.default_rng(seed)
    worst = 0.0
    worst_name = ""
    for name, layer, shape in _layer_cases(rng):
        x = rng.standard_normal(shape)
        y, ctx = layer.forward(x, train=True)
        proj = rng.standard_normal(y.shape)

        def scalar(xq):
            yq, _ = layer.forward(xq, train=True)
            return float((yq * proj).sum())

        gx, _ = layer.backward(ctx, proj, need_param_grads=False)
        err = _rel_err(gx, _fd_grad(scalar, x))
        if err > worst:
            worst, worst_name = err, name
    ok = worst < tol
    return CheckResult(
        "layer-gradients", ok,
        f"worst rel err {worst:.2e} ({worst_name}), tol {tol:g}",
    )


def check_scalar_gradients(seed=0, tol=1e-5):
    rng = np.random.default_rng(seed)
    clf = model.mlp((6,), k=4, n=3, hidden=(8,), seed=seed)
    x = rng.uniform(0.05, 0.95, size=(6,))
    worst = 0.0
    for spec, nm in [
        (model.CrossEntropyAt(2), "cross-entropy"),
        (model.BoundaryDistanceTo(2, 0), "boundary-distance"),
    ]:
        if nm == "cross-entropy":
            def scalar(xq):
                z = clf.forward(xq)
                return float(-layers.log_softmax(z[None, :])[0, 2])
        else:
            bs = geometry.boundary_set_for(clf)
            def scalar(xq):
                v = clf.head_forward(xq)
                return geometry.signed_distance(bs, v, 2, 0)
        err = _rel_err(clf.input_gradient(x, spec), _fd_grad(scalar, x.copy()))
        worst = max(worst, err)
    ok = worst < tol
    return CheckResult(
        "scalar-gradients", ok, f"worst rel err {worst:.2e}, tol {tol:g}"
    )


def check_antisymmetry(seed=0):
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((6, 4))
    b = rng.standard_normal(6)
    bset = geometry.build_boundary_set(w, b)
    bad = 0
    for _ in range(50):
        v = rng.standard_normal(4)
        for i in range(6):
            for j in range(6):
                if i == j:
                    continue
                fij = geometry.decision_value(bset, v, i, j)
                fji = geometry.decision_value(bset, v, j, i)
                if fij != -fji:
                    bad += 1
    return CheckResult(
        "boundary-antisymmetry", bad == 0,
        f"{bad} sign violations over 50 points x 30 ordered pairs",
    )


def check_partition(seed=0):
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((7, 5))
    b = rng.standard_normal(7)
    bset = geometry.build_boundary_set(w, b)
    v = rng.standard_normal((2000, 5))
    regions = geometry.region_of_batch(bset, v)
    winners = np.argmax(v @ w.T + b, axis=1)
    decided = regions >= 0
    bad = int((regions[decided] != winners[decided]).sum())
    return CheckResult(
        "region-partition", bad == 0 and int(decided.sum()) == 2000,
        f"{bad} disagreements, {2000 - int(decided.sum())} tie flags "
        "on 2000 points",
    )


def check_distance_oracle(seed=0, tol=1e-9):
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((5, 4))
    b = rng.standard_normal(5)
    bset = geometry.build_boundary_set(w, b)
    worst_on = 0.0
    worst_shift = 0.0
    for _ in range(100):
        v = rng.standard_normal(4)
        y, k = rng.choice(5, size=2, replace=False)
        d = geometry.signed_distance(bset, v, y, k)
        row = bset.signed_row(y, k)[0]
        unit = row / np.linalg.norm(row)
        worst_on = max(worst_on, abs(
            geometry.signed_distance(bset, v - d * unit, y, k)))
        t = float(rng.uniform(0.1, 2.0))
        shifted = geometry.signed_distance(bset, v + t * unit, y, k)
        worst_shift = max(worst_shift, abs(shifted - (d + t)))
    ok = worst_on < tol and worst_shift < 1e-9
    return CheckResult(
        "distance-oracle", ok,
        f"on-boundary residual {worst_on:.2e}, shift error "
        f"{worst_shift:.2e}, tol {tol:g}",
    )


def check_projection_oracle(seed=0, tol=1e-6, instances=60):
    from scipy.optimize import linprog

    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        d = int(rng.integers(1, 4))
        x = rng.uniform(0, 1, size=d)
        w = rng.standard_normal(d)
        w[np.abs(w) < 1e-3] += 0.1
        q = rng.uniform(0, 1, size=d)  # plane through q: feasible
        b = -float(w @ q)
        p = attacks.project_hyperplane_box(x, w, b)
        mine = float(np.max(np.abs(p - x)))
        c = np.zeros(d + 1)
        c[-1] = 1.0
        a_ub = np.zeros((2 * d, d + 1))
        b_ub = np.zeros(2 * d)
        for i in range(d):
            a_ub[2 * i, i] = 1.0
            a_ub[2 * i, -1] = -1.0
            b_ub[2 * i] = x[i]
            a_ub[2 * i + 1, i] = -1.0
            a_ub[2 * i + 1, -1] = -1.0
            b_ub[2 * i + 1] = -x[i]
        a_eq = np.concatenate([w, [0.0]])[None, :]
        res = linprog(c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=[-b],
                      bounds=[(0, 1)] * d + [(0, None)], method="highs")
        if not res.success:
            return CheckResult("projection-oracle", False,
                               "LP reference failed to solve")
        worst = max(worst, abs(mine - res.fun))
    return CheckResult(
        "projection-oracle", worst < tol,
        f"worst objective gap {worst:.2e} over {instances} instances, "
        f"tol {tol:g}",
    )


def check_linear_descent(seed=0, tol=1e-12):
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((3, 6))
    b = rng.standard_normal(3)
    clf = model.linear_model(6, 3, weight=w, bias=b)
    bset = geometry.boundary_set_for(clf)
    x = np.full(6, 0.5)
    y = int(clf.predict(x))
    m, d0 = geometry.nearest_boundary(bset, x, y)
    row = bset.signed_row(y, m)[0]
    expected = 0.01 * np.linalg.norm(row, 1) / np.linalg.norm(row, 2)
    cfg = attacks.AttackConfig(epsilon=0.45, alpha=0.01, eta_init=0.01,
                               restarts=1, n_init=1, n_attack=0, seed=0)
    x1 = attacks.boundary_init(clf, bset, x, y, cfg)
    d1 = geometry.signed_distance(bset, x1, y, m)
    err = abs((d0 - d1) - expected)
    return CheckResult(
        "linear-descent-step", err < tol,
        f"step decrease error {err:.2e}, tol {tol:g}",
    )


def check_threat_model(seed=0):
    ds = data.make_blobs(20, k=3, d=6, separation=4.0, seed=seed)
    clf = model.mlp((6,), k=3, n=2, hidden=(8,), seed=seed)
    clf = model.train(clf, ds, epochs=10, seed=seed)
    bset = geometry.boundary_set_for(clf)
    cfg = attacks.AttackConfig(epsilon=0.1, alpha=0.02, restarts=2,
                               n_init=2, n_attack=5, seed=seed)
    worst = 0.0
    for method, init in [("pgd", "boundary"), ("pgd", "random"),
                         ("fab", "random")]:
        out = attacks.run_restarts_batch(
            clf, bset, ds.images, ds.labels, cfg, method=method, init=init)
        delta = np.max(np.abs(out.x_adv - ds.images))
        box = max(float(out.x_adv.max() - 1.0), float(-out.x_adv.min()))
        worst = max(worst, delta - cfg.epsilon, box)
    return CheckResult(
        "threat-model-containment", worst <= 1e-12,
        f"worst ball/box excess {worst:.2e}",
    )


def check_report_reconciliation(seed=0):
    ds = data.make_blobs(15, k=3, d=5, separation=4.0, seed=seed)
    clf = model.mlp((5,), k=3, n=2, hidden=(8,), seed=seed)
    clf = model.train(clf, ds, epochs=10, seed=seed)
    bset = geometry.boundary_set_for(clf)
    cfg = attacks.AttackConfig(epsilon=0.08, alpha=0.02, restarts=1,
                               n_init=2, n_attack=5, seed=seed)
    rep = harness.evaluate(clf, bset, ds, cfg)
    rep.validate()
    ok = (rep.successes + rep.failures == rep.evaluated
          and rep.robust_accuracy <= rep.clean_accuracy + 1e-12)
    return CheckResult(
        "report-reconciliation", ok,
        f"{rep.successes}+{rep.failures} of {rep.evaluated}, robust "
        f"{rep.robust_accuracy:.3f} <= clean {rep.clean_accuracy:.3f}",
    )


CHECKS = (
    check_layer_gradients,
    check_scalar_gradients,
    check_antisymmetry,
    check_partition,
    check_distance_oracle,
    check_projection_oracle,
    check_linear_descent,
    check_threat_model,
    check_report_reconciliation,
)


def run_all(seed=0):
    """Run every check; exceptions become failing results."""
    results = []
    for fn in CHECKS:
        try:
            results.append(fn(seed=seed))
        except Exception as exc:  # a crashed check is a failed check
            name = fn.__name__.removeprefix("check_").replace("_", "-")
            results.append(CheckResult(name, False, f"raised {exc!r}"))
    return results
