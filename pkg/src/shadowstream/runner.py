"""Experiment orchestration and the ``shadowstream`` command line.

An experiment is described by a JSON config (all keys optional, shown
with defaults)::

    {
      "state_kind": "werner",          // or "file"
      "n_qubits": 2,
      "t": 0.8333,                     // Werner mixing parameter
      "state_path": null,              // used when state_kind == "file"
      "transposed": null,              // qubit list; null = last half
      "orders": [2, 3],                // moment orders to track
      "strategies": ["online-recon"],  // see estimators module
      "shots": 20000,                  // per-run shot budget
      "runs": 1,
      "seed": 0,                       // base seed; runs derive their own
      "tolerance": 0.001,              // stopping rule: relative change
      "window": 10,                    //   ... for this many consecutive shots
      "target_order": null,            // order the rule watches; null = highest
      "stop_on_convergence": true,
      "stride_dense": 1,               // checkpoint every shot ...
      "stride_switch": 10000,          //   ... up to here, then ...
      "stride_sparse": 10,             //   ... every this many shots
      "n_batches": 12,                 // for the batched strategy
      "workers": 1                     // runs executed in parallel
    }

``state_kind: "file"`` reads the matrix format documented at
:func:`shadowstream.states.load_density_matrix`: a JSON object with
``n_qubits`` and a row-major ``matrix`` list of ``[re, im]`` pairs.

Each run streams shots, updates every selected estimator, applies the
stopping rule to the primary (first-listed) strategy, and records
checkpoints.  Results are written twice: a JSON document carrying the
full config, traces, per-run summaries and campaign summary, and a
gnuplot-friendly CSV with ``#`` comment headers and one row per
checkpoint.  Both are byte-stable: rerunning the same config and seed
reproduces them exactly, regardless of ``workers``.
"""

from __future__ import annotations

import argparse
import functools
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from ._version import __version__
from .certify import EspVector, descartes_bound, hierarchy_check, newton_girard
from .errors import InvalidStateError
from .estimators import MomentStream
from .sampler import BornSampler, shot_rng, stream_shadows
from .states import (
    Bipartition,
    DensityMatrix,
    exact_esp,
    exact_pt_moment,
    first_violated_order,
    load_density_matrix,
    werner_pt_spectrum,
    werner_state,
)

__all__ = [
    "ExperimentConfig",
    "MomentTrace",
    "ExperimentResult",
    "run_experiment",
    "export_json",
    "export_csv",
    "load_result",
    "recompute_run_summaries",
    "main",
]

_FORMAT_NAME = "shadowstream-result"
_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ExperimentConfig:
    """A fully resolved experiment description (see module docstring)."""

    state_kind: str = "werner"
    n_qubits: int = 2
    t: float = 0.8333
    state_path: str | None = None
    transposed: tuple[int, ...] | None = None
    orders: tuple[int, ...] = (2, 3)
    strategies: tuple[str, ...] = ("online-recon",)
    shots: int = 20000
    runs: int = 1
    seed: int = 0
    tolerance: float = 1e-3
    window: int = 10
    target_order: int | None = None
    stop_on_convergence: bool = True
    stride_dense: int = 1
    stride_switch: int = 10000
    stride_sparse: int = 10
    n_batches: int = 12
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "orders", tuple(sorted(set(int(m) for m in self.orders))))
        object.__setattr__(self, "strategies", tuple(str(s) for s in self.strategies))
        if self.transposed is not None:
            object.__setattr__(
                self, "transposed", tuple(sorted(set(int(q) for q in self.transposed)))
            )

    def validated(self) -> "ExperimentConfig":
        if self.state_kind not in ("werner", "file"):
            raise ValueError(f"state_kind must be 'werner' or 'file', got {self.state_kind!r}")
        if self.state_kind == "file" and not self.state_path:
            raise ValueError("state_kind 'file' requires state_path")
        if not self.orders or self.orders[0] < 1:
            raise ValueError(f"orders must be integers >= 1, got {self.orders}")
        if not self.strategies:
            raise ValueError("at least one strategy is required")
        if self.shots < 1:
            raise ValueError(f"shots must be >= 1, got {self.shots}")
        if self.runs < 1:
            raise ValueError(f"runs must be >= 1, got {self.runs}")
        if not 0 <= self.seed < 2**64:
            raise ValueError(f"seed must fit in 64 bits, got {self.seed}")
        if self.tolerance <= 0:
            raise ValueError(f"tolerance must be positive, got {self.tolerance}")
        if self.window < 1:
            raise ValueError(f"window must be >= 1, got {self.window}")
        if self.target_order is not None and self.target_order not in self.orders:
            raise ValueError(
                f"target_order {self.target_order} is not among the orders {self.orders}"
            )
        if min(self.stride_dense, self.stride_sparse) < 1:
            raise ValueError("checkpoint strides must be >= 1")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")
        return self

    @property
    def target(self) -> int:
        return self.target_order if self.target_order is not None else self.orders[-1]

    def esp_orders(self) -> tuple[int, ...]:
        """ESP orders derivable from the configured moments: 1, then every k
        whose full prefix p_2..p_k is tracked."""
        out = [1]
        k = 2
        while k in self.orders:
            out.append(k)
            k += 1
        return tuple(out)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = list(value)
            out[f.name] = value
        return out

    @classmethod
    def from_dict(cls, payload: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(payload) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(payload)
        for key in ("orders", "strategies", "transposed"):
            if kwargs.get(key) is not None:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class MomentTrace:
    """Checkpointed history of one (run, strategy) pair."""

    run: int
    run_seed: int
    strategy: str
    orders: tuple[int, ...]
    shots: list[int] = field(default_factory=list)
    moments: dict[int, list[float | None]] = field(default_factory=dict)
    esps: dict[int, list[float | None]] = field(default_factory=dict)
    stopped_at: dict[int, int | None] = field(default_factory=dict)
    stop_shot: int | None = None

    def to_dict(self) -> dict:
        return {
            "run": self.run,
            "run_seed": self.run_seed,
            "strategy": self.strategy,
            "orders": list(self.orders),
            "shots": list(self.shots),
            "moments": {str(m): vals for m, vals in self.moments.items()},
            "esps": {str(k): vals for k, vals in self.esps.items()},
            "stopped_at": {str(m): s for m, s in self.stopped_at.items()},
            "stop_shot": self.stop_shot,
        }


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    traces: list[dict]
    run_summaries: list[dict]
    summary: dict

    def to_json_dict(self) -> dict:
        # ``workers`` is a scheduling knob with no effect on the numbers,
        # so it is not part of the exported experiment identity.
        config = {k: v for k, v in self.config.to_dict().items() if k != "workers"}
        return {
            "format": _FORMAT_NAME,
            "format_version": _FORMAT_VERSION,
            "software_version": __version__,
            "config": config,
            "traces": self.traces,
            "runs": self.run_summaries,
            "summary": self.summary,
        }


class _StopMonitor:
    """Latching convergence detector on a stream of iterates.

    Fires at the first shot where the relative change between
    consecutive values has stayed below ``tolerance`` for ``window``
    consecutive steps; an exactly unchanged value (including 0 -> 0)
    counts as converged.
    """

    def __init__(self, tolerance: float, window: int):
        self._tol = tolerance
        self._window = window
        self._prev: float | None = None
        self._streak = 0
        self.fired_at: int | None = None

    def push(self, shot: int, value: float) -> None:
        if self.fired_at is not None:
            return
        if self._prev is not None:
            delta = abs(value - self._prev)
            if delta == 0.0 or delta < self._tol * max(abs(value), abs(self._prev)):
                self._streak += 1
            else:
                self._streak = 0
            if self._streak >= self._window:
                self.fired_at = shot
        self._prev = value


def _clean(value) -> float | None:
    if value is None:
        return None
    value = float(value)
    return None if math.isnan(value) else value


def _build_state(config: ExperimentConfig) -> DensityMatrix:
    if config.state_kind == "werner":
        return werner_state(config.n_qubits, config.t)
    rho = load_density_matrix(config.state_path)
    if config.state_kind == "file" and rho.n_qubits != config.n_qubits:
        raise InvalidStateError(
            f"state file holds {rho.n_qubits} qubits, config says {config.n_qubits}"
        )
    return rho


def _transposed_qubits(config: ExperimentConfig) -> tuple[int, ...]:
    if config.transposed is not None:
        part = Bipartition(config.n_qubits, config.transposed)
    else:
        part = Bipartition.balanced(config.n_qubits)
    return part.transposed


def run_seed_for(base_seed: int, run: int) -> int:
    """The 64-bit stream seed of one run, derived from the base seed."""
    seq = np.random.SeedSequence(entropy=base_seed, spawn_key=(run,))
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def _checkpoint_due(shot: int, config: ExperimentConfig) -> bool:
    stride = config.stride_dense if shot <= config.stride_switch else config.stride_sparse
    return shot % stride == 0


def _append_checkpoint(trace: MomentTrace, shot: int, estimates: dict) -> None:
    trace.shots.append(shot)
    available: list[float] = [1.0]
    contiguous = True
    esp_ceiling = max(trace.esps) if trace.esps else 1
    for k in range(2, esp_ceiling + 1):
        est = estimates.get(k)
        if contiguous and est is not None and est.well_defined:
            available.append(est.value)
        else:
            contiguous = False
    esp = newton_girard(available).values
    for m in trace.orders:
        est = estimates[m]
        trace.moments[m].append(_clean(est.value) if est.well_defined else None)
    for k in trace.esps:
        trace.esps[k].append(_clean(esp[k]) if k < esp.size else None)


def _run_single(config: ExperimentConfig, run: int) -> list[dict]:
    rho = _build_state(config)
    part = _transposed_qubits(config)
    n = rho.n_qubits
    streams = {
        name: MomentStream(name, config.orders, part, n, n_batches=config.n_batches)
        for name in config.strategies
    }
    monitors = {
        name: {m: _StopMonitor(config.tolerance, config.window) for m in config.orders}
        for name in config.strategies
    }
    esp_orders = config.esp_orders()
    seed = run_seed_for(config.seed, run)
    traces = {
        name: MomentTrace(
            run=run,
            run_seed=seed,
            strategy=name,
            orders=config.orders,
            moments={m: [] for m in config.orders},
            esps={k: [] for k in esp_orders},
        )
        for name in config.strategies
    }
    primary = config.strategies[0]
    target = config.target
    sampler = BornSampler(rho)
    stop_shot: int | None = None

    for index in range(config.shots):
        shot = index + 1
        snapshot = sampler.sample(shot_rng(seed, index))
        cache: dict[str, dict] = {}
        for name, stream in streams.items():
            stream.update(snapshot)
            if stream.streaming:
                estimates = stream.estimates()
                cache[name] = estimates
                for m, monitor in monitors[name].items():
                    if estimates[m].well_defined:
                        monitor.push(shot, estimates[m].value)
        fired = monitors[primary][target].fired_at
        stopping = (
            config.stop_on_convergence and streams[primary].streaming and fired is not None
        )
        if _checkpoint_due(shot, config) or shot == config.shots or stopping:
            for name, stream in streams.items():
                estimates = cache.get(name)
                if estimates is None:
                    estimates = stream.estimates()
                    for m, monitor in monitors[name].items():
                        if estimates[m].well_defined:
                            monitor.push(shot, estimates[m].value)
                _append_checkpoint(traces[name], shot, estimates)
            if not streams[primary].streaming and config.stop_on_convergence:
                fired = monitors[primary][target].fired_at
                stopping = fired is not None
        if stopping:
            stop_shot = fired
            break

    for name, trace in traces.items():
        trace.stopped_at = {m: monitors[name][m].fired_at for m in config.orders}
        trace.stop_shot = stop_shot
    return [traces[name].to_dict() for name in config.strategies]


def _oracle_block(config: ExperimentConfig) -> dict | None:
    if config.state_kind != "werner":
        return None
    spectrum = werner_pt_spectrum(config.n_qubits, config.t)
    moments = {str(m): exact_pt_moment(spectrum, m) for m in config.orders}
    esps = {str(k): exact_esp(spectrum, k) for k in config.esp_orders()}
    return {
        "moments": moments,
        "esps": esps,
        "first_violated_order": first_violated_order(config.n_qubits, config.t),
        "ppt_threshold": 1.0 / spectrum.local_dim,
    }


def recompute_run_summaries(payload: dict) -> list[dict]:
    """Derive per-run summaries from a result payload's traces.

    Used both when assembling fresh results and to verify that a
    re-imported JSON document still supports its own verdicts.
    """
    config = ExperimentConfig.from_dict(payload["config"])
    oracle = _oracle_block(config)
    by_run: dict[int, list[dict]] = {}
    for trace in payload["traces"]:
        by_run.setdefault(trace["run"], []).append(trace)
    summaries = []
    for run in sorted(by_run):
        strategies = {}
        stop_shot = None
        seed = None
        shots_used = 0
        for trace in by_run[run]:
            stop_shot = trace["stop_shot"]
            seed = trace["run_seed"]
            shots_used = trace["shots"][-1] if trace["shots"] else 0
            final_moments = {
                m: (vals[-1] if vals else None) for m, vals in trace["moments"].items()
            }
            esp_values = [1.0]
            for k in sorted(int(k) for k in trace["esps"]):
                vals = trace["esps"][str(k)]
                if vals and vals[-1] is not None:
                    esp_values.append(vals[-1])
                else:
                    break
            esp = EspVector(np.array(esp_values))
            bound = descartes_bound(esp)
            strategies[trace["strategy"]] = {
                "moments": final_moments,
                "esps": {str(k): _clean(esp.values[k]) for k in range(1, esp.max_order + 1)},
                "first_negative_order": hierarchy_check(esp),
                "descartes_variations": bound.variations,
                "descartes_parity": bound.parity,
            }
        summary = {
            "run": run,
            "seed": seed,
            "shots_used": shots_used,
            "stopped": stop_shot is not None,
            "stop_shot": stop_shot,
            "strategies": strategies,
        }
        if oracle is not None:
            summary["oracle"] = oracle
        summaries.append(summary)
    return summaries


def _campaign_summary(config: ExperimentConfig, run_summaries: list[dict]) -> dict:
    primary = config.strategies[0]
    effective = [
        s["stop_shot"] if s["stop_shot"] is not None else s["shots_used"]
        for s in run_summaries
    ]
    detected = [
        s for s in run_summaries if s["strategies"][primary]["first_negative_order"] is not None
    ]
    return {
        "runs": len(run_summaries),
        "primary_strategy": primary,
        "target_order": config.target,
        "stopped_runs": sum(1 for s in run_summaries if s["stopped"]),
        "median_stopping_shot": float(np.median(effective)) if effective else None,
        "detected_runs": len(detected),
        "detection_rate": len(detected) / len(run_summaries) if run_summaries else None,
    }


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Execute every run of the experiment and assemble the result.

    Runs are independent (each has a derived seed) and may execute in
    parallel; traces are always assembled in run order, so the output
    does not depend on ``workers``.
    """
    config = config.validated()
    _build_state(config).assert_physical()
    if config.workers > 1 and config.runs > 1:
        worker = functools.partial(_run_single, config)
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            per_run = list(pool.map(worker, range(config.runs)))
    else:
        per_run = [_run_single(config, run) for run in range(config.runs)]
    traces = [trace for run_traces in per_run for trace in run_traces]
    payload = {"config": config.to_dict(), "traces": traces}
    run_summaries = recompute_run_summaries(payload)
    summary = _campaign_summary(config, run_summaries)
    return ExperimentResult(config, traces, run_summaries, summary)


# -- export / import ------------------------------------------------------


def export_json(result, path) -> None:
    """Write the full result document (config, traces, summaries)."""
    payload = result.to_json_dict() if isinstance(result, ExperimentResult) else result
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
        fh.write("\n")


def _format_cell(value) -> str:
    if value is None:
        return "nan"
    return repr(float(value))


def export_csv(result, path) -> None:
    """Write one numeric row per checkpoint, gnuplot-style.

    Columns: run, strategy id, shot count, the tracked moments, the
    derivable ESPs, then one 0/1 stop flag per order indicating whether
    that order's stopping rule had fired by the checkpoint.
    """
    payload = result.to_json_dict() if isinstance(result, ExperimentResult) else result
    config = ExperimentConfig.from_dict(payload["config"])
    orders = config.orders
    esp_orders = config.esp_orders()
    names = list(config.strategies)
    header = (
        ["run", "strategy", "T"]
        + [f"p_{m}" for m in orders]
        + [f"e_{k}" for k in esp_orders]
        + [f"stop_{m}" for m in orders]
    )
    lines = [
        f"# shadowstream {__version__}",
        *(f"# strategy {i} = {name}" for i, name in enumerate(names)),
        "# " + ",".join(header),
    ]
    for trace in payload["traces"]:
        sid = names.index(trace["strategy"])
        stopped_at = {int(m): s for m, s in trace["stopped_at"].items()}
        moments = {int(m): vals for m, vals in trace["moments"].items()}
        esps = {int(k): vals for k, vals in trace["esps"].items()}
        for i, shot in enumerate(trace["shots"]):
            cells = [str(trace["run"]), str(sid), str(shot)]
            cells += [_format_cell(moments[m][i]) for m in orders]
            cells += [_format_cell(esps[k][i]) for k in esp_orders]
            cells += [
                "1" if stopped_at.get(m) is not None and stopped_at[m] <= shot else "0"
                for m in orders
            ]
            lines.append(",".join(cells))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines))
        fh.write("\n")


def load_result(path) -> dict:
    """Read a result document written by :func:`export_json`."""
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != _FORMAT_NAME:
        raise ValueError(f"{path} is not a {_FORMAT_NAME} document")
    return payload


# -- built-in verification battery ----------------------------------------


def _check_oracle_closure() -> tuple[bool, str]:
    from .states import partial_transpose

    worst = 0.0
    for n in (2, 4):
        for t in np.linspace(-1.0, 1.0, 21):
            spectrum = werner_pt_spectrum(n, float(t))
            dense = partial_transpose(
                werner_state(n, float(t)), Bipartition.balanced(n)
            )
            eigs = np.sort(np.linalg.eigvalsh(dense))
            worst = max(worst, float(np.max(np.abs(eigs - spectrum.eigenvalues()))))
            for m in range(1, 5):
                worst = max(
                    worst,
                    abs(exact_pt_moment(spectrum, m) - float(np.sum(eigs ** m))),
                )
    return worst < 1e-10, f"max deviation {worst:.2e}"


def _check_bitflip() -> tuple[bool, str]:
    import itertools

    from .kernel import pt_flip
    from .sampler import Snapshot, snapshot_matrix
    from .states import partial_transpose

    n = 2
    checked = 0
    for axes in itertools.product(range(3), repeat=n):
        for bits in itertools.product(range(2), repeat=n):
            snap = Snapshot(list(axes), list(bits))
            dense = snapshot_matrix(snap)
            for r in range(n + 1):
                for subset in itertools.combinations(range(n), r):
                    direct = partial_transpose(dense, subset)
                    flipped = snapshot_matrix(pt_flip(snap, subset))
                    if not np.array_equal(direct, flipped):
                        return False, f"mismatch at axes={axes} bits={bits} subset={subset}"
                    checked += 1
    return True, f"{checked} configurations exact"


def _check_kernel_agreement() -> tuple[bool, str]:
    from .kernel import tuple_trace_dense, tuple_trace_direct, tuple_trace_expansion
    from .sampler import Snapshot

    rng = np.random.Generator(np.random.Philox(key=2024))
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(1, 4))
        m = int(rng.integers(1, 5))
        snaps = [
            Snapshot(rng.integers(0, 3, n).tolist(), rng.integers(0, 2, n).tolist())
            for _ in range(m)
        ]
        size = int(rng.integers(0, n + 1))
        subset = rng.choice(n, size=size, replace=False).tolist()
        a = tuple_trace_direct(snaps, subset)
        b = tuple_trace_expansion(snaps, subset)
        c = tuple_trace_dense(snaps, subset)
        worst = max(worst, abs(a - b), abs(a - c))
    return worst < 1e-10, f"max disagreement {worst:.2e}"


def _check_online_equals_offline() -> tuple[bool, str]:
    from .estimators import AccumulatorSet, OnlineRecordEstimator, ustat_offline

    part = (1,)
    worst = 0.0
    rho = werner_state(2, 5.0 / 6.0)
    for seed in (3, 11):
        record = stream_shadows(rho, 30, seed)
        for m in (2, 3):
            online = OnlineRecordEstimator(m, part, 2)
            acc = AccumulatorSet(m, part, 2)
            for t, snap in enumerate(record, start=1):
                online.update(snap)
                acc.update(snap)
                if t < m:
                    continue
                reference = ustat_offline(record[:t], m, part).value
                scale = max(abs(reference), 1e-12)
                worst = max(worst, abs(online.estimate().value - reference) / scale)
                worst = max(worst, abs(acc.estimate(m).value - reference) / scale)
    return worst < 1e-9, f"max relative deviation {worst:.2e}"


def _check_replay_determinism() -> tuple[bool, str]:
    rho = werner_state(2, 5.0 / 6.0)
    one = stream_shadows(rho, 400, 17)
    two = stream_shadows(rho, 400, 17)
    threaded = stream_shadows(rho, 400, 17, workers=3)
    ok = one == two == threaded
    return ok, "replay and worker-count invariance" if ok else "records differ"


_BATTERY = [
    ("werner-oracle-closure", _check_oracle_closure),
    ("partial-transpose-bit-flip", _check_bitflip),
    ("kernel-path-agreement", _check_kernel_agreement),
    ("online-equals-offline", _check_online_equals_offline),
    ("replay-determinism", _check_replay_determinism),
]


def run_verification_battery(out=None) -> bool:
    """Run the built-in cross-checks, printing one PASS/FAIL line each."""
    if out is None:
        out = sys.stdout
    all_ok = True
    for name, check in _BATTERY:
        ok, detail = check()
        all_ok &= ok
        print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}", file=out)
    return all_ok


# -- CLI -------------------------------------------------------------------


def _parse_int_list(text: str) -> tuple[int, ...]:
    return tuple(int(part) for part in text.split(",") if part.strip())


def _parse_str_list(text: str) -> tuple[str, ...]:
    return tuple(part.strip() for part in text.split(",") if part.strip())


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shadowstream",
        description="Streaming partial-transpose moment estimation and "
        "entanglement certification from randomized measurements.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run an experiment and export traces")
    run_p.add_argument("-c", "--config", type=Path, help="JSON config file")
    run_p.add_argument("--seed", type=int, help="base seed (overrides config)")
    run_p.add_argument("--shots", type=int, help="per-run shot budget")
    run_p.add_argument("--orders", type=_parse_int_list, help="moment orders, e.g. 2,3")
    run_p.add_argument(
        "--strategy", type=_parse_str_list, help="estimator strategies, e.g. online-recon"
    )
    run_p.add_argument("--out", required=True, help="output prefix (.json and .csv)")
    run_p.add_argument("--runs", type=int, help="number of independent runs")
    run_p.add_argument("--workers", type=int, help="parallel run workers")
    run_p.add_argument("--tolerance", type=float, help="stopping tolerance")
    run_p.add_argument("--window", type=int, help="stopping window (consecutive shots)")
    run_p.add_argument("--target-order", type=int, help="order watched by the stopping rule")
    run_p.add_argument(
        "--no-stop", action="store_true", help="ignore convergence; always spend the budget"
    )
    run_p.add_argument("--batches", type=int, help="batch count for the batched strategy")
    run_p.add_argument("--qubits", type=int, help="qubit count of the Werner state")
    run_p.add_argument("--t", type=float, help="Werner mixing parameter")
    run_p.add_argument("--state-file", help="density-matrix JSON file instead of a Werner state")
    run_p.add_argument(
        "--transposed", type=_parse_int_list, help="qubits to transpose, e.g. 2,3"
    )

    oracle_p = sub.add_parser("oracle", help="print exact Werner reference values")
    oracle_p.add_argument("--qubits", type=int, required=True)
    oracle_p.add_argument("--t", type=float, required=True)
    oracle_p.add_argument("--max-order", type=int, default=None)

    sub.add_parser("verify", help="run the built-in cross-check battery")

    export_p = sub.add_parser("export", help="re-emit outputs from a result JSON")
    export_p.add_argument("--input", required=True, help="result JSON file")
    export_p.add_argument("--csv", help="CSV output path")
    export_p.add_argument("--json", help="JSON output path")
    return parser


def _config_from_args(args) -> ExperimentConfig:
    config = ExperimentConfig.from_json(args.config) if args.config else ExperimentConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.shots is not None:
        overrides["shots"] = args.shots
    if args.orders is not None:
        overrides["orders"] = args.orders
    if args.strategy is not None:
        overrides["strategies"] = args.strategy
    if args.runs is not None:
        overrides["runs"] = args.runs
    if args.workers is not None:
        overrides["workers"] = args.workers
    if args.tolerance is not None:
        overrides["tolerance"] = args.tolerance
    if args.window is not None:
        overrides["window"] = args.window
    if args.target_order is not None:
        overrides["target_order"] = args.target_order
    if args.no_stop:
        overrides["stop_on_convergence"] = False
    if args.batches is not None:
        overrides["n_batches"] = args.batches
    if args.qubits is not None:
        overrides["n_qubits"] = args.qubits
    if args.t is not None:
        overrides["t"] = args.t
    if args.state_file is not None:
        overrides["state_kind"] = "file"
        overrides["state_path"] = args.state_file
    if args.transposed is not None:
        overrides["transposed"] = args.transposed
    return replace(config, **overrides) if overrides else config


def _cmd_run(args) -> int:
    config = _config_from_args(args).validated()
    result = run_experiment(config)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    export_json(result, out.with_suffix(".json"))
    export_csv(result, out.with_suffix(".csv"))
    for summary in result.run_summaries:
        primary = summary["strategies"][config.strategies[0]]
        stop = summary["stop_shot"] if summary["stopped"] else f"budget ({summary['shots_used']})"
        print(
            f"run {summary['run']}: stop={stop} "
            f"first_negative_order={primary['first_negative_order']}"
        )
    campaign = result.summary
    print(
        f"{campaign['runs']} runs: detection rate {campaign['detection_rate']:.2f}, "
        f"median stopping shot {campaign['median_stopping_shot']:.0f}"
    )
    print(f"wrote {out.with_suffix('.json')} and {out.with_suffix('.csv')}")
    return 0


def _cmd_oracle(args) -> int:
    spectrum = werner_pt_spectrum(args.qubits, args.t)
    first = first_violated_order(args.qubits, args.t)
    d = spectrum.local_dim
    top = args.max_order if args.max_order is not None else min(d * d, 12)
    print(f"Werner state on {args.qubits} qubits (local dimension {d}), t = {args.t}")
    print(
        f"PT spectrum: {spectrum.lambda_minus:.12g} (x1), "
        f"{spectrum.lambda_plus:.12g} (x{d * d - 1})"
    )
    print(f"PPT threshold: t <= {1.0 / d:.12g}")
    print(f"first violated ESP order: {first}")
    print(f"{'k':>3} {'p_k':>22} {'e_k':>22}")
    for k in range(1, top + 1):
        print(f"{k:>3} {exact_pt_moment(spectrum, k):>22.15g} {exact_esp(spectrum, k):>22.15g}")
    return 0


def _cmd_verify(_args) -> int:
    return 0 if run_verification_battery() else 1


def _cmd_export(args) -> int:
    payload = load_result(args.input)
    if not args.csv and not args.json:
        print("nothing to do: pass --csv and/or --json", file=sys.stderr)
        return 2
    if args.csv:
        export_csv(payload, args.csv)
        print(f"wrote {args.csv}")
    if args.json:
        export_json(payload, args.json)
        print(f"wrote {args.json}")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {
        "run": _cmd_run,
        "oracle": _cmd_oracle,
        "verify": _cmd_verify,
        "export": _cmd_export,
    }
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
