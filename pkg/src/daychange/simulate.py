"""Scenario grids and the Monte Carlo power harness behind cmd_simulate.

Power rows share null datasets and alternative datasets across methods at a
given scenario (common random numbers), so method differences are estimated
with less noise than the marginal powers themselves.
"""

from __future__ import annotations

import csv
import dataclasses
from typing import Optional, Sequence

import numpy as np

from ._rng import REF_STREAM, seed_sequence
from .detectors import DetectorSpec, METHOD_NAMES, divergence_reference, make_scorer
from .errors import CalibrationError, DayChangeError
from .inference import build_null, calibrate_effect, estimate_power, threshold
from .model import ScenarioSpec, scenario_alt_sampler, scenario_null_sampler

SCENARIO_COLUMNS = [
    "T", "p", "k_star", "rho", "change_kind", "effect", "omega", "phi", "seed",
]
RESULT_COLUMNS = SCENARIO_COLUMNS + ["method", "power", "se", "status"]

DEFAULT_DB = 7
_PRECHANGE_FLOOR = 4  # smallest candidate day the pre-change estimator allows


def effective_db(t: int, db: int = DEFAULT_DB) -> int:
    """Clip the window so every method scans the same candidate days."""
    return max(1, min(db, t - _PRECHANGE_FLOOR))


def power_grid(seed: int = 0) -> list[ScenarioSpec]:
    """Power-study grid: T in {30,60,90}, p=50, omega in {0.5,1}, k* in 2..7."""
    specs = []
    for change_kind in ("mean_only", "variance_only"):
        for t in (30, 60, 90):
            for omega in (0.5, 1.0):
                for k_star in range(2, 8):
                    specs.append(
                        ScenarioSpec(
                            T=t, p=50, k_star=k_star, rho=0.0,
                            change_kind=change_kind, effect=float("nan"),
                            omega=omega, phi=1.0, seed=seed,
                        )
                    )
    return specs


def estimator_grid(seed: int = 0, t_values: Sequence[int] = tuple(range(6, 31))):
    """Estimator comparison grid: p=15, k*=4, rho in {0, 0.5, 0.8}."""
    specs = []
    for change_kind in ("mean_only", "variance_only"):
        for rho in (0.0, 0.5, 0.8):
            for t in t_values:
                specs.append(
                    ScenarioSpec(
                        T=t, p=15, k_star=4, rho=rho,
                        change_kind=change_kind, effect=float("nan"),
                        omega=1.0, phi=1.0, seed=seed,
                    )
                )
    return specs


def read_scenarios(path: str) -> list[ScenarioSpec]:
    """Scenario grid from a CSV with the SCENARIO_COLUMNS header."""
    specs = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(SCENARIO_COLUMNS) - set(reader.fieldnames or [])
        if missing:
            raise DayChangeError(f"{path}: missing scenario columns {sorted(missing)}")
        for row in reader:
            specs.append(
                ScenarioSpec(
                    T=int(row["T"]), p=int(row["p"]), k_star=int(row["k_star"]),
                    rho=float(row["rho"]), change_kind=row["change_kind"],
                    effect=float(row["effect"]) if row["effect"] else float("nan"),
                    omega=float(row["omega"]), phi=float(row["phi"]),
                    seed=int(row["seed"]),
                )
            )
    return specs


def _calibration_template(spec: ScenarioSpec) -> ScenarioSpec:
    return dataclasses.replace(spec, k_star=4, effect=0.0)


def _calibration_key(spec: ScenarioSpec):
    return (spec.T, spec.p, spec.omega, spec.rho, spec.phi, spec.change_kind)


class _NullBank:
    """Per-run in-memory store of nulls keyed by (method, scenario shape)."""

    def __init__(self, B, alpha, seed, n_jobs):
        self.B = B
        self.alpha = alpha
        self.seed = seed
        self.n_jobs = n_jobs
        self._store = {}
        self._references = {}

    def reference_for(self, spec: ScenarioSpec, db: int) -> np.ndarray:
        key = (spec.T, spec.p, spec.rho, db)
        if key not in self._references:
            self._references[key] = divergence_reference(
                scenario_null_sampler(spec), db, self.B,
                seed_sequence(self.seed, REF_STREAM),
            )
        return self._references[key]

    def threshold_for(self, det: DetectorSpec, spec: ScenarioSpec, db: int):
        key = (det, spec.T, spec.p, spec.rho, db)
        if key not in self._store:
            reference = None
            if det.method == "divergence":
                reference = self.reference_for(spec, db)
            scorer = make_scorer(det, db, reference=reference)
            nd = build_null(
                scorer, (spec.T, spec.p), scenario_null_sampler(spec),
                self.B, self.seed, n_jobs=self.n_jobs,
            )
            self._store[key] = (scorer, threshold(nd, self.alpha))
        return self._store[key]


def run_simulation(
    scenarios: Sequence[ScenarioSpec],
    methods: Sequence[str],
    reps: int = 1000,
    B: int = 1000,
    alpha: float = 0.05,
    seed: int = 0,
    n_jobs: int = 1,
    calibrate: bool = True,
    fixed_effect: Optional[float] = None,
    target_power: float = 0.8,
    calibration_reps: Optional[int] = None,
) -> list[dict]:
    """One tidy row of power per (scenario, method).

    Scenarios without an effect get one calibrated per
    (T, p, omega, rho, phi, change_kind) at k* = 4, unless ``fixed_effect``
    short-circuits calibration.  Calibration failures mark their rows and the
    run continues.
    """
    if reps < 1:
        raise DayChangeError(f"reps={reps} must be positive")
    for m in methods:
        if m not in METHOD_NAMES:
            raise DayChangeError(f"unknown method {m!r}")
    bank = _NullBank(B, alpha, seed, n_jobs)
    effects: dict = {}
    failures: dict = {}
    rows = []
    for spec in scenarios:
        effect = spec.effect
        status = "ok"
        if not np.isfinite(effect):
            if fixed_effect is not None:
                effect = float(fixed_effect)
            elif not calibrate:
                raise DayChangeError(
                    "scenario has no effect and calibration is disabled"
                )
            else:
                key = _calibration_key(spec)
                if key in failures:
                    status = "calibration_failed"
                elif key in effects:
                    effect = effects[key]
                else:
                    try:
                        cal = calibrate_effect(
                            _calibration_template(spec), spec.change_kind,
                            target_power=target_power, alpha=alpha,
                            reps=calibration_reps or reps, B=B, seed=seed,
                            db=effective_db(spec.T), n_jobs=n_jobs,
                        )
                        effects[key] = cal.effect
                        effect = cal.effect
                    except (CalibrationError, DayChangeError) as exc:
                        failures[key] = str(exc)
                        status = "calibration_failed"
        if status != "ok":
            for method in methods:
                rows.append(_row(spec, effect, method, np.nan, np.nan, status))
            continue
        spec_e = dataclasses.replace(spec, effect=float(effect))
        db = effective_db(spec.T)
        alt = scenario_alt_sampler(spec_e)
        for method in methods:
            det = DetectorSpec(method=method, phi=spec.phi)
            try:
                scorer, thresh = bank.threshold_for(det, spec_e, db)
                pe = estimate_power(
                    scorer, thresh, alt, reps, seed, n_jobs=n_jobs
                )
                rows.append(
                    _row(spec, effect, method, pe.power, pe.se, "ok")
                )
            except DayChangeError as exc:
                rows.append(
                    _row(spec, effect, method, np.nan, np.nan,
                         f"error: {exc}")
                )
    return rows


def _row(spec, effect, method, power, se, status) -> dict:
    return {
        "T": spec.T, "p": spec.p, "k_star": spec.k_star, "rho": spec.rho,
        "change_kind": spec.change_kind, "effect": float(effect),
        "omega": spec.omega, "phi": spec.phi, "seed": spec.seed,
        "method": method, "power": float(power), "se": float(se),
        "status": status,
    }
