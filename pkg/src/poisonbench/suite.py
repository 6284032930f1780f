"""Self-checks of the analytic guarantees, collected into one pass/fail report."""

from __future__ import annotations

import math

import numpy as np

from .aggregators import AggregatorSpec, aggregate, certify_contraction, mean_agg, rho_formula
from .core import GLOBAL, derive_stream
from .theory import (QuadraticInstance, build_indistinguishable_sets, lower_bound_value, run_instance,
                     theorem_error_bound)
from .trainer import measure_A, measure_sigma2, measure_xi

CONTRACTION_GRID = {
    "trimean": (0.1, 0.2, 0.3, 0.4),
    "cc": (0.1, 0.2, 0.3, 0.4),
    "faba": (0.1, 0.2, 0.3),
}

def _check(report, check_id, passed, **detail):
    report.append({"id": check_id, "passed": bool(passed), **detail})


def contraction_checks(report, trials=1000, workers=(10, 20), dims=(1, 3, 10), seed=0, overrides=None):
    overrides = overrides or {}
    for kind, deltas in CONTRACTION_GRID.items():
        for W in workers:
            for delta in deltas:
                R = round(W * (1 - delta))
                d = 1 - R / W
                for dim in dims:
                    stream = derive_stream(seed, GLOBAL, f"contraction/{kind}/{W}/{R}/{dim}")
                    ratio = certify_contraction(AggregatorSpec(kind), trials, W, R, dim, stream,
                                                agg_fn=overrides.get(kind))
                    rho = rho_formula(kind, d, dim, R)
                    _check(report, f"contraction/{kind}", ratio <= rho + 1e-9,
                           W=W, R=R, dim=dim, ratio=ratio, rho=rho)


def impossibility_checks(report, overrides=None):
    overrides = overrides or {}
    cases = [(10, 5, 1.0), (10, 4, 1.0), (10, 7, 0.5), (10, 6, 0.9)]
    for W, R, rho in cases:
        delta = 1 - R / W
        set1, set2 = build_indistinguishable_sets(delta, rho, W, R)
        same = sorted(set1.ravel()) == sorted(set2.ravel())
        for kind in ("mean", "trimean", "cc", "faba"):
            spec = AggregatorSpec(kind, assumed_regular=max(R, W // 2 + 1) if kind == "trimean" else R,
                                  cc_start="zero")
            fn = overrides.get(kind, lambda y, s=spec: aggregate(s, y))
            out1, out2 = fn(set1), fn(set2)
            violated = []
            for s, out in ((set1, out1), (set2, out2)):
                ybar = s[:R].mean(axis=0)
                M = float(np.max(np.abs(s[:R] - ybar)))
                violated.append(float(np.linalg.norm(out - ybar)) > rho * M)
            _check(report, "impossibility", same and np.array_equal(out1, out2) and any(violated),
                   W=W, R=R, rho=rho, aggregator=kind, outputs=[float(out1[0]), float(out2[0])])


def quadratic_checks(report, deltas=(0.1, 0.2, 0.3), c=1.0, L=1.0, gamma=0.1, T=500):
    W = 10
    for delta in deltas:
        R = round(W * (1 - delta))
        d = 1 - R / W
        insts = [QuadraticInstance(W, R, c, L, i) for i in (1, 2)]
        for kind in ("mean", "trimean", "cc", "faba"):
            vals = [run_instance(inst, AggregatorSpec(kind), gamma, T) for inst in insts]
            lb = lower_bound_value(d, c, c)
            _check(report, "lower-bound", max(vals) >= lb, delta=d, aggregator=kind, values=vals, bound=lb)
            if kind == "mean":
                cap = 15 * d * d * c * c
                _check(report, "mean-plateau", max(vals) <= cap, delta=d, value=max(vals), bound=cap)
                # full bound on the worse instance with that instance's exact constants
                worse = insts[int(np.argmax(vals))]
                A = (1 - d) * c if worse.instance_id == 1 else d * c
                xi = 0.0 if worse.instance_id == 1 else max(abs(1 - 2 * d), d) * c
                F0 = c * c / (2 * L)  # f(0) = 0 and the minimum value is -c^2 / 2L
                g0 = float(np.linalg.norm(worse.objective_gradient(np.zeros(2))))
                full = theorem_error_bound("mean", d, A, 0.0, F0, L, R, T, xi=xi, grad0_norm=g0)
                _check(report, "mean-upper-bound", max(vals) <= full, delta=d, value=max(vals), bound=full)
        # constants of the construction measured at a few points
        for inst in insts:
            model = inst.model()
            workers = inst.workers()
            regular = [w for w in workers if not w.poisoned]
            poisoned = [w for w in workers if w.poisoned]
            expect_xi = 0.0 if inst.instance_id == 1 else max(abs(1 - 2 * d), d) * c
            expect_A = (1 - d) * c if inst.instance_id == 1 else d * c
            ok = True
            for x in (np.zeros(2), np.array([0.3, -1.2]), inst.minimizer()):
                xi = measure_xi(model, x, regular)
                A = measure_A(model, x, poisoned, regular)
                s2 = max(measure_sigma2(model, x, w) for w in workers)
                ok &= math.isclose(xi, expect_xi, abs_tol=1e-12) and math.isclose(A, expect_A, abs_tol=1e-12)
                ok &= s2 <= 1e-24
            _check(report, "assumption-audit", ok, delta=d, instance=inst.instance_id)


def run_theory_suite(trials: int = 1000, seed: int = 0, substitute: dict | None = None) -> dict:
    """Run every check. ``substitute`` maps an aggregator kind to another kind
    whose rule is used in its place (a fault-injection hook)."""
    rules = {
        "mean": mean_agg,
        "cc": lambda y: aggregate(AggregatorSpec("cc", cc_start="zero"), y),
    }
    overrides = {kind: rules[other] for kind, other in (substitute or {}).items()}
    report: list[dict] = []
    contraction_checks(report, trials, seed=seed, overrides=overrides)
    impossibility_checks(report, overrides)
    quadratic_checks(report)
    failed = sorted({c["id"] + ("/" + c["aggregator"] if "aggregator" in c else "")
                     for c in report if not c["passed"]})
    return {
        "passed": not failed,
        "checks_run": sorted({c["id"] for c in report}),
        "failed": failed,
        "checks": report,
    }
