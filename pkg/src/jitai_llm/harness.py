"""Scenario sweeps over the walk-chain grid, percentile summaries and plots.

Output layout under ``output_dir``::

    summary.csv                 p_w11,p_w00,mode,median,q25,q75
    histogram.csv               p_w11,p_w00,mode,action,count
    cumulative/<cell>.csv       t,mode,median,q25,q75
    trials/<mode>/<cell>/seed_<n>.jsonl (+ .summary.json, .audit.jsonl)
    plots/{reward,actions,cumulative}_<cell>.svg

``<cell>`` is ``pw11_<p_w11>_pw00_<p_w00>``.
"""

from __future__ import annotations

import csv
import io
import logging
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .agent import LiveLLM, MockOracle, NoFilter, TrialConfig, run_trial
from .bandit import TSConfig
from .env import EnvParams
from .exceptions import ConfigurationError, ParameterError
from .llm import LLMClientConfig
from .walk import WalkParams

logger = logging.getLogger(__name__)

MODES = ("hybrid", "standard")
MODE_LABELS = {"hybrid": "LLM+TS", "standard": "standard TS"}
MODE_COLORS = {"hybrid": "tab:blue", "standard": "tab:gray"}


def nearest_rank(values, q):
    """Nearest-rank percentile: the smallest value with at least ``q``% of the data at or below it."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("percentile of an empty sample")
    return float(np.percentile(values, q, method="inverted_cdf"))


def cell_name(p_w11, p_w00):
    return f"pw11_{p_w11:g}_pw00_{p_w00:g}"


@dataclass(frozen=True)
class SweepSpec:
    p_w11_values: tuple = (0.7,)
    p_w00_values: tuple = (0.1, 0.2, 0.3, 0.4, 0.5)
    seeds: tuple = tuple(range(10))
    modes: tuple = MODES
    output_dir: Path = Path("results")
    oracle_rate: float = 0.06
    llm: LLMClientConfig | None = None
    env: EnvParams = field(default_factory=EnvParams)
    walk: WalkParams = field(default_factory=WalkParams)
    ts: TSConfig = field(default_factory=TSConfig)
    history_window: int = 4
    n_jobs: int = 1
    write_trials: bool = True

    def __post_init__(self):
        for name in ("p_w11_values", "p_w00_values", "seeds", "modes"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        object.__setattr__(self, "output_dir", Path(self.output_dir))
        for p in self.p_w11_values + self.p_w00_values:
            if not 0.0 <= p <= 1.0:
                raise ParameterError(f"probability {p!r} outside [0, 1]")
        if not self.seeds:
            raise ParameterError("at least one seed is required")
        unknown = set(self.modes) - set(MODES)
        if unknown:
            raise ParameterError(f"unknown modes: {sorted(unknown)}")

    def filter_mode(self, mode):
        if mode == "standard":
            return NoFilter()
        if self.llm is not None:
            return LiveLLM(self.llm)
        return MockOracle(self.oracle_rate)

    def trial_configs(self):
        """``((mode, p_w11, p_w00, seed), TrialConfig)`` in canonical order."""
        for p_w11 in self.p_w11_values:
            for p_w00 in self.p_w00_values:
                walk = replace(self.walk, p_w01=1.0 - p_w00, p_w11=p_w11)
                for mode in self.modes:
                    for seed in self.seeds:
                        cfg = TrialConfig(
                            env=self.env, walk=walk, ts=self.ts,
                            filter_mode=self.filter_mode(mode), seed=seed,
                            history_window=self.history_window,
                        )
                        yield (mode, p_w11, p_w00, seed), cfg


@dataclass
class CellResult:
    p_w11: float
    p_w00: float
    # mode -> (median, q25, q75) of per-trial total reward
    reward_quantiles: dict = field(default_factory=dict)
    histogram: dict = field(default_factory=dict)
    # mode -> array (T, 3) of per-day median, q25, q75 cumulative reward
    cumulative: dict = field(default_factory=dict)
    # mode -> per-seed totals; empty when loaded back from CSV
    totals: dict = field(default_factory=dict)

    @property
    def name(self):
        return cell_name(self.p_w11, self.p_w00)

    def quantiles(self, mode):
        return self.reward_quantiles[mode]


@dataclass
class AggregateResult:
    modes: tuple
    cells: list

    def cell(self, p_w11, p_w00):
        for c in self.cells:
            if np.isclose(c.p_w11, p_w11) and np.isclose(c.p_w00, p_w00):
                return c
        raise KeyError((p_w11, p_w00))

    def summary_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["p_w11", "p_w00", "mode", "median", "q25", "q75"])
        for c in self.cells:
            for mode in self.modes:
                writer.writerow([c.p_w11, c.p_w00, mode, *map(repr, c.quantiles(mode))])
        return buf.getvalue()

    def histogram_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["p_w11", "p_w00", "mode", "action", "count"])
        for c in self.cells:
            for mode in self.modes:
                for action, count in enumerate(c.histogram[mode]):
                    writer.writerow([c.p_w11, c.p_w00, mode, action, int(count)])
        return buf.getvalue()

    def cumulative_csv(self, cell):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["t", "mode", "median", "q25", "q75"])
        for mode in self.modes:
            for t, row in enumerate(cell.cumulative[mode], start=1):
                writer.writerow([t, mode, *map(repr, map(float, row))])
        return buf.getvalue()

    def write(self, output_dir):
        out = Path(output_dir)
        (out / "cumulative").mkdir(parents=True, exist_ok=True)
        (out / "summary.csv").write_text(self.summary_csv(), encoding="utf-8")
        (out / "histogram.csv").write_text(self.histogram_csv(), encoding="utf-8")
        for c in self.cells:
            (out / "cumulative" / f"{c.name}.csv").write_text(self.cumulative_csv(c), encoding="utf-8")


def load_result(output_dir) -> AggregateResult:
    """Rebuild an :class:`AggregateResult` from the CSVs written by :meth:`AggregateResult.write`."""
    out = Path(output_dir)
    summary = list(csv.DictReader(io.StringIO((out / "summary.csv").read_text(encoding="utf-8"))))
    modes = tuple(dict.fromkeys(row["mode"] for row in summary))
    cells = {}
    for row in summary:
        key = (float(row["p_w11"]), float(row["p_w00"]))
        cell = cells.setdefault(key, CellResult(*key))
        cell.reward_quantiles[row["mode"]] = (float(row["median"]), float(row["q25"]), float(row["q75"]))
    hist = csv.DictReader(io.StringIO((out / "histogram.csv").read_text(encoding="utf-8")))
    for row in hist:
        cell = cells[(float(row["p_w11"]), float(row["p_w00"]))]
        counts = cell.histogram.setdefault(row["mode"], np.zeros(4, dtype=int))
        counts[int(row["action"])] = int(row["count"])
    for cell in cells.values():
        text = (out / "cumulative" / f"{cell.name}.csv").read_text(encoding="utf-8")
        rows = list(csv.DictReader(io.StringIO(text)))
        for mode in modes:
            band = [[float(r["median"]), float(r["q25"]), float(r["q75"])] for r in rows if r["mode"] == mode]
            cell.cumulative[mode] = np.array(band)
    return AggregateResult(modes=modes, cells=list(cells.values()))


def cumulative_quantiles(reward_sequences, horizon):
    """Per-day median/q25/q75 of cumulative reward; short trials carry their final total."""
    curves = np.zeros((len(reward_sequences), horizon))
    for i, rewards in enumerate(reward_sequences):
        cum = np.cumsum(rewards)[:horizon]
        curves[i, : cum.size] = cum
        if 0 < cum.size < horizon:
            curves[i, cum.size:] = cum[-1]
    return np.array([
        [nearest_rank(curves[:, t], q) for q in (50, 25, 75)] for t in range(horizon)
    ])


def aggregate(spec: SweepSpec, records) -> AggregateResult:
    """Reduce ``{(mode, p_w11, p_w00, seed): TrialRecord}`` into per-cell statistics."""
    cells = []
    for p_w11 in spec.p_w11_values:
        for p_w00 in spec.p_w00_values:
            cell = CellResult(p_w11, p_w00)
            for mode in spec.modes:
                trials = [records[(mode, p_w11, p_w00, s)] for s in spec.seeds]
                totals = [r.total_reward for r in trials]
                cell.totals[mode] = totals
                cell.reward_quantiles[mode] = tuple(nearest_rank(totals, q) for q in (50, 25, 75))
                cell.histogram[mode] = sum(
                    (np.bincount(r.executed_actions, minlength=4) for r in trials),
                    np.zeros(4, dtype=int),
                )
                cell.cumulative[mode] = cumulative_quantiles(
                    [r.rewards for r in trials], spec.env.t_max
                )
            cells.append(cell)
    return AggregateResult(modes=spec.modes, cells=cells)


def _check_writable(path: Path):
    path.mkdir(parents=True, exist_ok=True)
    if not os.access(path, os.W_OK):
        raise PermissionError(f"output directory {path} is not writable")
    with tempfile.NamedTemporaryFile(dir=path):
        pass


def _trial_path(out, key):
    mode, p_w11, p_w00, seed = key
    return out / "trials" / mode / cell_name(p_w11, p_w00) / f"seed_{seed}.jsonl"


def _run_task(args):
    cfg, audit_path = args
    return run_trial(cfg, audit_path=audit_path)


def run_sweep(spec: SweepSpec) -> AggregateResult:
    """Run every (cell, mode, seed) trial, write per-trial logs and CSVs.

    Trials are independent; with ``n_jobs > 1`` they run in a process pool.
    Aggregation happens in canonical grid order, so the CSVs do not depend
    on execution order.
    """
    out = spec.output_dir
    _check_writable(out)
    if spec.llm is not None and "hybrid" in spec.modes:
        spec.llm.api_key()  # fail fast on a missing key

    tasks = []
    for key, cfg in spec.trial_configs():
        audit = None
        if spec.write_trials and key[0] == "hybrid":
            audit = _trial_path(out, key).with_suffix(".audit.jsonl")
            if audit.exists():
                audit.unlink()
        tasks.append((key, cfg, audit))

    logger.info("running %d trials", len(tasks))
    args = [(cfg, audit) for _, cfg, audit in tasks]
    if spec.n_jobs > 1:
        with ProcessPoolExecutor(max_workers=spec.n_jobs) as pool:
            results = list(pool.map(_run_task, args, chunksize=4))
    else:
        results = [_run_task(a) for a in args]
    records = {key: rec for (key, _, _), rec in zip(tasks, results)}

    if spec.write_trials:
        for key, rec in records.items():
            rec.write(_trial_path(out, key))
    result = aggregate(spec, records)
    result.write(out)
    return result


def _figure_rc():
    return {"svg.hashsalt": "jitai-llm", "svg.fonttype": "path"}


def reward_figure(result: AggregateResult, cell: CellResult):
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(3.5, 3.5))
    for i, mode in enumerate(result.modes):
        med, q25, q75 = cell.quantiles(mode)
        ax.bar(i, med, color=MODE_COLORS[mode], yerr=[[med - q25], [q75 - med]], capsize=6)
    ax.set_xticks(range(len(result.modes)), [MODE_LABELS[m] for m in result.modes])
    ax.set_ylabel("total reward (median, 25th-75th pct)")
    ax.set_title(f"p_w11={cell.p_w11:g}, p_w00={cell.p_w00:g}")
    fig.tight_layout()
    return fig


def actions_figure(result: AggregateResult, cell: CellResult):
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    width = 0.8 / len(result.modes)
    for i, mode in enumerate(result.modes):
        xs = np.arange(4) + (i - (len(result.modes) - 1) / 2) * width
        ax.bar(xs, cell.histogram[mode], width=width, color=MODE_COLORS[mode], label=MODE_LABELS[mode])
    ax.set_xticks(range(4))
    ax.set_xlabel("executed action")
    ax.set_ylabel("count")
    ax.legend()
    ax.set_title(f"p_w11={cell.p_w11:g}, p_w00={cell.p_w00:g}")
    fig.tight_layout()
    return fig


def cumulative_figure(result: AggregateResult, cell: CellResult):
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    for mode in result.modes:
        band = cell.cumulative[mode]
        t = np.arange(1, len(band) + 1)
        ax.plot(t, band[:, 0], color=MODE_COLORS[mode], label=MODE_LABELS[mode])
        ax.fill_between(t, band[:, 1], band[:, 2], color=MODE_COLORS[mode], alpha=0.25, linewidth=0)
    ax.set_xlabel("day")
    ax.set_ylabel("cumulative reward")
    ax.legend()
    ax.set_title(f"p_w11={cell.p_w11:g}, p_w00={cell.p_w00:g}")
    fig.tight_layout()
    return fig


def emit_plots(result: AggregateResult, output_dir):
    """Write reward, action-histogram and cumulative-reward SVGs for every cell."""
    if not result.modes:
        return []
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    with matplotlib.rc_context(_figure_rc()):
        for cell in result.cells:
            for kind, make in (
                ("reward", reward_figure),
                ("actions", actions_figure),
                ("cumulative", cumulative_figure),
            ):
                fig = make(result, cell)
                path = out / f"{kind}_{cell.name}.svg"
                fig.savefig(path, format="svg", metadata={"Date": None})
                plt.close(fig)
                paths.append(path)
    return paths


def load_scenario(path, seed_base=0, output_dir=None, live_llm=False, api_key_env=None) -> SweepSpec:
    """Build a :class:`SweepSpec` from a YAML/JSON scenario file.

    Recognised keys: ``p_w11``, ``p_w00`` (number or list), ``seeds`` (count
    or list, offset by ``seed_base``), ``modes``, ``oracle_rate``,
    ``history_window``, ``n_jobs``, ``output_dir``, ``env`` / ``walk`` /
    ``ts`` parameter overrides, and ``llm`` (endpoint_url, model_name,
    api_key_env_var, timeout, max_retries, temperature).
    """
    import yaml

    try:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"cannot parse scenario {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigurationError(f"scenario {path} must be a mapping")

    def as_list(value):
        return list(value) if isinstance(value, (list, tuple)) else [value]

    seeds = data.get("seeds", 10)
    seeds = range(seeds) if isinstance(seeds, int) else as_list(seeds)
    seeds = tuple(int(s) + seed_base for s in seeds)

    walk_kwargs = dict(data.get("walk") or {})
    pool_file = walk_kwargs.pop("preference_file", None)
    if pool_file is not None:
        from .walk import load_preferences

        walk_kwargs["preference_pool"] = load_preferences(Path(path).parent / pool_file)

    llm = None
    llm_data = dict(data.get("llm") or {})
    if live_llm or data.get("live_llm", False):
        if api_key_env:
            llm_data["api_key_env_var"] = api_key_env
        llm = LLMClientConfig(**llm_data)

    try:
        return SweepSpec(
            p_w11_values=as_list(data.get("p_w11", 0.7)),
            p_w00_values=as_list(data.get("p_w00", [0.1, 0.2, 0.3, 0.4, 0.5])),
            seeds=seeds,
            modes=as_list(data.get("modes", list(MODES))),
            output_dir=Path(output_dir or data.get("output_dir", "results")),
            oracle_rate=float(data.get("oracle_rate", 0.06)),
            llm=llm,
            env=EnvParams(**(data.get("env") or {})),
            walk=WalkParams(**walk_kwargs),
            ts=TSConfig(**(data.get("ts") or {})),
            history_window=int(data.get("history_window", 4)),
            n_jobs=int(data.get("n_jobs", 1)),
        )
    except TypeError as exc:
        raise ConfigurationError(f"invalid scenario {path}: {exc}") from exc
