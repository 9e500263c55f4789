"""End-to-end CAQUBO runs: data -> MI/CMI and counterfactual stages -> QUBO
-> annealing -> nDCG of the selected features, over a lambda x k grid.

Expensive stages (MI/CMI and counterfactual scores) are cached on disk under
a content hash of the input matrices and the config keys they depend on.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import os
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .annealing import SolverConfig, make_partition, partition_solve, solve
from .counterfactual import counterfactual_scores, load_counterfactual, save_counterfactual
from .datasets import binarize, load_with_header, save_sparse_matrix, split_holdout
from .infometrics import MiStats, build_target, compute_mi_stats
from .itemknn import EvalParams, KnnParams, fit_item_knn, ndcg_at_k
from .qubo import CaquboParams, add_cardinality_penalty, build_caqubo, energy, scale

__all__ = [
    "CACHE_ENV",
    "ConfigError",
    "ExperimentConfig",
    "ExperimentReport",
    "ReportRow",
    "StageError",
    "Stages",
    "emit_report",
    "load_config",
    "run_caqubo",
    "run_grid",
    "write_mask",
    "read_mask",
]

log = logging.getLogger(__name__)

CACHE_ENV = "CAQUBO_CACHE_DIR"
CSV_COLUMNS = (
    "kind", "lambda", "k", "mu", "gamma", "solver", "n_selected",
    "ndcg", "energy", "seeds", "mask_file", "error", "wall_time",
)  # fmt: skip


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage, cause):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage


@dataclass(frozen=True)
class ExperimentConfig:
    urm: str = ""
    icm: str = ""
    split_ratio: float = 0.8
    split_seed: int = 0
    target: str = "popularity-median"
    n_neighbors: int = 100
    shrink: float = 0.0
    cutoff: int = 10
    user_sample_fraction: float = 1.0
    sample_seed: int = 0
    lambda_grid: tuple = (0.0, 1e1, 1e3, 1e5, 1e7)
    k_grid: tuple = (10,)
    mu: float = 1.0
    gamma: float = 1.0
    n_partitions: int = 1
    solver: str = "sa"
    n_sweeps: int = 200
    t_start: float | None = None
    t_end: float = 1e-3
    n_runs: int = 1
    vote_threshold: int | None = None
    solver_seed: int = 0
    output_dir: str = "caqubo-out"
    cache_dir: str | None = None
    use_cache: bool = True
    n_jobs: int = 1

    def __post_init__(self):
        object.__setattr__(self, "lambda_grid", tuple(float(v) for v in self.lambda_grid))
        object.__setattr__(self, "k_grid", tuple(int(v) for v in self.k_grid))
        if not self.lambda_grid:
            raise ConfigError("lambda_grid must not be empty")
        if not self.k_grid:
            raise ConfigError("k_grid must not be empty")
        if any(v < 0 for v in self.lambda_grid):
            raise ConfigError("lambda values must be non-negative")
        if any(k < 0 for k in self.k_grid):
            raise ConfigError("k values must be non-negative")
        if self.target != "popularity-median":
            raise ConfigError(f"unknown target derivation {self.target!r}")
        if self.n_partitions < 1:
            raise ConfigError("n_partitions must be >= 1")
        if self.mu <= 0 or self.gamma <= 0:
            raise ConfigError("mu and gamma must be positive")
        # surface bad values now rather than mid-run
        self.knn, self.eval, self.solver_config

    @property
    def knn(self) -> KnnParams:
        return KnnParams(self.n_neighbors, self.shrink)

    @property
    def eval(self) -> EvalParams:
        return EvalParams(self.cutoff, self.user_sample_fraction, self.sample_seed)

    @property
    def solver_config(self) -> SolverConfig:
        return SolverConfig(
            self.solver, self.n_sweeps, self.t_start, self.t_end, self.n_runs, self.vote_threshold, self.solver_seed
        )

    def resolved_cache_dir(self) -> Path | None:
        if not self.use_cache:
            return None
        d = self.cache_dir or os.environ.get(CACHE_ENV)
        return Path(d) if d else Path(self.output_dir) / ".cache"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def hash(self) -> str:
        keep = {k: v for k, v in self.to_dict().items() if k not in ("output_dir", "cache_dir", "use_cache", "n_jobs")}
        return _digest(keep)


def _parse_value(fld: dataclasses.Field, raw: str):
    raw = raw.strip()
    name, typ = fld.name, str(fld.type)
    if raw.lower() in ("none", "") and "None" in typ:
        return None
    try:
        if name == "lambda_grid":
            return tuple(float(v) for v in raw.split(",") if v.strip())
        if name == "k_grid":
            return tuple(int(v) for v in raw.split(",") if v.strip())
        if typ.startswith("bool"):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ.startswith("int"):
            return int(raw)
        if typ.startswith("float"):
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None
    return raw


CONFIG_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def parse_overrides(pairs: dict) -> dict:
    out = {}
    for key, raw in pairs.items():
        key = key.replace("-", "_")
        if key not in CONFIG_FIELDS:
            raise ConfigError(f"unknown config key {key!r}")
        out[key] = _parse_value(CONFIG_FIELDS[key], str(raw))
    return out


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    """Read a flat ``key = value`` file (``#`` comments); `overrides` win."""
    pairs = {}
    if path is not None:
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}: line {lineno}: expected key = value")
            key, value = line.split("=", 1)
            pairs[key.strip()] = value
    values = parse_overrides(pairs)
    values.update(parse_overrides(overrides or {}))
    return ExperimentConfig(**values)


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


def _matrix_digest(mat) -> str:
    h = hashlib.sha256()
    h.update(np.asarray(mat.shape, dtype=np.int64).tobytes())
    for arr in (mat.indptr, mat.indices, mat.data):
        h.update(np.ascontiguousarray(arr, dtype=np.float64 if arr is mat.data else np.int64).tobytes())
    return h.hexdigest()


def write_mask(mask, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(f"{i}\n" for i in np.flatnonzero(mask)), encoding="utf-8")


def read_mask(path, m: int) -> np.ndarray:
    mask = np.zeros(m, dtype=bool)
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        i = int(line)
        if not 0 <= i < m:
            raise ValueError(f"{path}: line {lineno}: feature index {i} outside [0, {m})")
        mask[i] = True
    return mask


class Stages:
    """Lazily computed, memoised pipeline stages for one config.

    `computed` counts how often each stage was actually computed (cache
    misses), which lets callers check that grid cells share the work.
    """

    def __init__(self, config: ExperimentConfig, urm=None, icm=None):
        self.config = config
        self.computed = Counter()
        self.cache_hits = Counter()
        self._memo = {}
        try:
            self.urm = binarize(urm if urm is not None else load_with_header(config.urm))
            self.icm = binarize(icm if icm is not None else load_with_header(config.icm))
        except (OSError, ValueError) as exc:
            raise StageError("load", exc) from exc
        if self.urm.shape[1] != self.icm.shape[0]:
            raise StageError("load", f"URM has {self.urm.shape[1]} items but ICM has {self.icm.shape[0]}")
        self.data_key = _digest([_matrix_digest(self.urm), _matrix_digest(self.icm)])

    @property
    def m(self) -> int:
        return self.icm.shape[1]

    def _key(self, stage, **parts):
        return f"{stage}-{_digest({'data': self.data_key, 'stage': stage, **parts})}"

    def _cache_path(self, key):
        root = self.config.resolved_cache_dir()
        return None if root is None else root / key

    def split(self):
        if "split" not in self._memo:
            try:
                self._memo["split"] = split_holdout(self.urm, self.config.split_ratio, self.config.split_seed)
            except Exception as exc:
                raise StageError("split", exc) from exc
            self.computed["split"] += 1
        return self._memo["split"]

    def target(self):
        if "target" not in self._memo:
            self._memo["target"] = build_target(self.split().train)
            self.computed["target"] += 1
        return self._memo["target"]

    def mi_stats(self) -> MiStats:
        if "mi_stats" in self._memo:
            return self._memo["mi_stats"]
        c = self.config
        path = self._cache_path(self._key("mistats", split=[c.split_ratio, c.split_seed], target=c.target))
        if path is not None and (path / "mistats.npz").exists():
            with np.load(path / "mistats.npz") as z:
                stats = MiStats(mi=z["mi"], cmi=z["cmi"], features=z["features"])
            self.cache_hits["mi_stats"] += 1
        else:
            try:
                stats = compute_mi_stats(self.icm, self.target())
            except Exception as exc:
                raise StageError("mistats", exc) from exc
            self.computed["mi_stats"] += 1
            if path is not None:
                path.mkdir(parents=True, exist_ok=True)
                np.savez(path / "mistats.npz", mi=stats.mi, cmi=stats.cmi, features=stats.features)
        self._memo["mi_stats"] = stats
        return stats

    def counterfactual(self):
        if "counterfactual" in self._memo:
            return self._memo["counterfactual"]
        c = self.config
        path = self._cache_path(
            self._key(
                "counterfactual",
                split=[c.split_ratio, c.split_seed],
                knn=dataclasses.asdict(c.knn),
                eval=dataclasses.asdict(c.eval),
            )
        )
        if path is not None and (path / "e.json").exists():
            scores = load_counterfactual(path)
            self.cache_hits["counterfactual"] += 1
        else:
            try:
                scores = counterfactual_scores(self.icm, self.split(), c.knn, c.eval, n_jobs=c.n_jobs)
            except Exception as exc:
                raise StageError("counterfactual", exc) from exc
            self.computed["counterfactual"] += 1
            if path is not None:
                save_counterfactual(scores, path, extra={"split_seed": c.split_seed, "split_ratio": c.split_ratio})
        self._memo["counterfactual"] = scores
        return scores

    def evaluate(self, mask) -> float:
        return ndcg_at_k(fit_item_knn(self.icm, mask, self.config.knn), self.split(), self.config.eval)


@dataclass
class ReportRow:
    kind: str
    lam: float | None
    k: int
    mu: float | None
    gamma: float | None
    solver: str
    n_selected: int | None = None
    ndcg: float | None = None
    energy: float | None = None
    seeds: str = ""
    mask_file: str = ""
    error: str = ""
    wall_time: float = 0.0

    def as_csv_dict(self) -> dict:
        def fmt(v):
            if v is None:
                return ""
            if isinstance(v, float):
                return repr(v)
            return str(v)

        values = dataclasses.asdict(self)
        values["lambda"] = values.pop("lam")
        return {col: fmt(values[col]) for col in CSV_COLUMNS}


@dataclass
class ExperimentReport:
    rows: list
    baseline: ReportRow | None
    config: ExperimentConfig
    provenance: dict = field(default_factory=dict)
    stage_counts: dict = field(default_factory=dict)

    def best(self) -> ReportRow | None:
        ok = [r for r in self.rows if r.ndcg is not None]
        return max(ok, key=lambda r: (r.ndcg, -r.k, -r.lam)) if ok else None


def _seed_label(cfg: SolverConfig) -> str:
    if cfg.kind == "exhaustive":
        return ""
    if cfg.n_runs == 1:
        return str(cfg.seed)
    return f"{cfg.seed}-{cfg.seed + cfg.n_runs - 1}"


def select_features(stats: MiStats, scores, lam: float, k: int, config: ExperimentConfig):
    """Build, scale, penalise and solve one CAQUBO instance.

    Returns ``(mask, energy)``; the energy is that of the mask under the
    unpartitioned penalised instance.
    """
    params = CaquboParams(lam=lam, mu=config.mu, k=k, gamma=config.gamma)
    qm = add_cardinality_penalty(scale(build_caqubo(stats, scores, lam), config.mu), k, config.gamma)
    if config.n_partitions > 1:
        plan = make_partition(stats.m, config.n_partitions, k)
        mask, _ = partition_solve(stats, scores, params, plan, config.solver_config)
    else:
        mask = solve(qm, config.solver_config).mask
    return mask, energy(qm, mask)


def _mask_name(lam, k):
    return f"masks/k{k}_lambda{lam:g}.txt"


def _run_cell(stages: Stages, lam: float, k: int, write_to: Path | None) -> ReportRow:
    c = stages.config
    row = ReportRow("caqubo" if lam > 0 else "miqubo", lam, k, c.mu, c.gamma, c.solver, seeds=_seed_label(c.solver_config))
    t0 = time.perf_counter()
    stage = "select"
    try:
        if k > stages.m:
            raise ValueError(f"k={k} exceeds the {stages.m} available features")
        mask, e = select_features(stages.mi_stats(), stages.counterfactual(), lam, k, c)
        row.n_selected, row.energy = int(mask.sum()), e
        if write_to is not None:
            row.mask_file = _mask_name(lam, k)
            write_mask(mask, write_to / row.mask_file)
        stage = "evaluate"
        row.ndcg = stages.evaluate(mask)
    except Exception as exc:
        row.error = str(exc) if isinstance(exc, StageError) else f"[{stage}] {exc}"
        log.warning("cell lambda=%g k=%d failed: %s", lam, k, row.error)
    row.wall_time = time.perf_counter() - t0
    return row


def run_caqubo(config: ExperimentConfig, lam: float | None = None, k: int | None = None, stages: Stages | None = None):
    """Single CAQUBO selection. Returns ``(mask, row)``; raises :class:`StageError`."""
    if lam is None:
        if len(config.lambda_grid) != 1:
            raise ConfigError("run_caqubo needs a single lambda")
        lam = config.lambda_grid[0]
    if k is None:
        if len(config.k_grid) != 1:
            raise ConfigError("run_caqubo needs a single k")
        k = config.k_grid[0]
    stages = stages or Stages(config)
    if k > stages.m:
        raise StageError("select", f"k={k} exceeds the {stages.m} available features")
    t0 = time.perf_counter()
    try:
        mask, e = select_features(stages.mi_stats(), stages.counterfactual(), lam, k, config)
    except StageError:
        raise
    except Exception as exc:
        raise StageError("select", exc) from exc
    row = ReportRow(
        "caqubo" if lam > 0 else "miqubo", lam, k, config.mu, config.gamma, config.solver,
        n_selected=int(mask.sum()), energy=e, seeds=_seed_label(config.solver_config),
    )  # fmt: skip
    try:
        row.ndcg = stages.evaluate(mask)
    except Exception as exc:
        raise StageError("evaluate", exc) from exc
    row.wall_time = time.perf_counter() - t0
    return mask, row


def run_grid(config: ExperimentConfig, write: bool = True, stages: Stages | None = None) -> ExperimentReport:
    """Every (lambda, k) cell plus an all-features baseline row.

    Shared stages run once before the cells. A failing cell records its
    error and the grid continues. Rows are sorted by ``(k, lambda)``.
    """
    stages = stages or Stages(config)
    out = Path(config.output_dir) if write else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        split = stages.split()
        save_sparse_matrix(split.train, out / "urm_train.tsv")
        save_sparse_matrix(split.test, out / "urm_test.tsv")
        save_sparse_matrix(stages.icm, out / "icm.tsv")

    t0 = time.perf_counter()
    base = ReportRow("baseline", None, stages.m, None, None, "all-features", n_selected=stages.m)
    try:
        stages.mi_stats()
        scores = stages.counterfactual()
        base.ndcg = scores.base_ndcg
    except StageError as exc:
        base.error = str(exc)
    base.wall_time = time.perf_counter() - t0

    cells = sorted((k, lam) for lam in dict.fromkeys(config.lambda_grid) for k in dict.fromkeys(config.k_grid))
    if base.error:
        rows = [ReportRow("caqubo" if lam > 0 else "miqubo", lam, k, config.mu, config.gamma, config.solver, error=base.error) for k, lam in cells]
    elif config.n_jobs == 1 or len(cells) == 1:
        rows = [_run_cell(stages, lam, k, out) for k, lam in cells]
    else:
        from joblib import Parallel, delayed

        rows = Parallel(n_jobs=config.n_jobs, backend="threading")(delayed(_run_cell)(stages, lam, k, out) for k, lam in cells)

    report = ExperimentReport(
        rows=rows,
        baseline=base,
        config=config,
        provenance={"config_hash": config.hash(), "data_hash": stages.data_key, "version": __version__},
        stage_counts={"computed": dict(stages.computed), "cache_hits": dict(stages.cache_hits)},
    )
    if out is not None:
        emit_report(report, out)
    return report


def _fmt4(v):
    return "err" if v is None else f"{v:.4f}"


def report_csv(report: ExperimentReport) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in report.rows:
        writer.writerow(row.as_csv_dict())
    if report.baseline is not None:
        writer.writerow(report.baseline.as_csv_dict())
    return buf.getvalue()


def report_markdown(report: ExperimentReport) -> str:
    """lambda rows by k columns of nDCG@cutoff, plus a baseline footer."""
    ks = sorted({r.k for r in report.rows})
    lams = sorted({r.lam for r in report.rows})
    cell = {(r.lam, r.k): r for r in report.rows}
    cutoff = report.config.cutoff
    lines = [
        "| λ | " + " | ".join(f"k={k}" for k in ks) + " |",
        "|---|" + "---|" * len(ks),
    ]
    for lam in lams:
        vals = [_fmt4(cell[lam, k].ndcg) if (lam, k) in cell else "" for k in ks]
        lines.append(f"| {lam:g} | " + " | ".join(vals) + " |")
    if report.baseline is not None:
        lines.append("")
        lines.append(f"All features ({report.baseline.k}) nDCG@{cutoff} {_fmt4(report.baseline.ndcg)}")
    return "\n".join(lines) + "\n"


def report_json(report: ExperimentReport) -> str:
    payload = {
        "provenance": report.provenance,
        "config": report.config.to_dict(),
        "stage_counts": report.stage_counts,
        "baseline": None if report.baseline is None else dataclasses.asdict(report.baseline),
        "rows": [dataclasses.asdict(r) for r in report.rows],
    }
    return json.dumps(payload, indent=2, sort_keys=True, default=str) + "\n"


def emit_report(report: ExperimentReport, output_dir, formats=("csv", "json", "markdown")):
    """Write ``report.csv``, ``report.json`` and ``report.md``; returns the paths."""
    if not report.rows and report.baseline is None:
        raise ValueError("refusing to emit an empty report")
    out = Path(output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot write reports to {out}: {exc}") from exc
    render = {"csv": ("report.csv", report_csv), "json": ("report.json", report_json), "markdown": ("report.md", report_markdown)}
    paths = []
    for fmt in formats:
        if fmt not in render:
            raise ValueError(f"unknown report format {fmt!r}")
        name, fn = render[fmt]
        (out / name).write_text(fn(report), encoding="utf-8")
        paths.append(out / name)
    return paths


def csv_without_wall_time(text: str) -> str:
    """Drop the wall_time column, for comparing runs."""
    rows = list(csv.reader(io.StringIO(text)))
    idx = rows[0].index("wall_time")
    return "\n".join(",".join(c for j, c in enumerate(r) if j != idx) for r in rows) + "\n"
