"""Dataset interchange, run configuration and persistence of fits and reports.

Datasets are long-format CSV: one row per (person, occasion, alternative)
with header ``person_id,occasion_id,alt_id,chosen,x1,...,xK``. Fits, truths
and scenarios are ``.npz`` containers whose ``meta`` entry is a JSON
document carrying the schema version, kind, dimensions and config echo.
"""
from __future__ import annotations

import csv
import json
import platform
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import SchemaVersionError, ValidationError
from .evaluate import EvalConfig
from .mcmc import McmcConfig, McmcDraws
from .model import ChoiceDataset, DgpConfig, Hyperparameters, ParameterState, Scenario
from .vb import VariationalPosterior, VbConfig, VbResult

SCHEMA_VERSION = 1
MODES = ("simulate", "fit-vb", "fit-mcmc", "evaluate", "benchmark")


# ---------------------------------------------------------------------------
# Dataset CSV
# ---------------------------------------------------------------------------

def _id_key(s: str):
    # numeric ids sort numerically, anything else lexically after them
    try:
        return (0, float(s), "")
    except ValueError:
        return (1, 0.0, s)


def load_dataset(path) -> ChoiceDataset:
    """Parse a long-format choice table into a :class:`ChoiceDataset`.

    Persons and occasions are ordered by id; alternatives keep file order.
    Errors name the offending line (1-based, header is line 1) or occasion.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValidationError(f"{path}: empty file") from None
        K = len(header) - 4
        expected = ["person_id", "occasion_id", "alt_id", "chosen"] + [f"x{k + 1}" for k in range(K)]
        if K < 1 or header != expected:
            raise ValidationError(f"{path}: header must be {','.join(expected[:4])},x1,...,xK; got {','.join(header)}")
        occasions: dict[tuple[str, str], list] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != K + 4:
                raise ValidationError(f"{path}: line {lineno} has {len(row)} fields, expected {K + 4}")
            pid, oid, aid, chosen = (c.strip() for c in row[:4])
            if chosen not in ("0", "1"):
                raise ValidationError(f"{path}: line {lineno}: chosen must be 0 or 1, got {chosen!r}")
            try:
                x = [float(c) for c in row[4:]]
            except ValueError:
                raise ValidationError(f"{path}: line {lineno}: non-numeric attribute value") from None
            if not all(np.isfinite(x)):
                raise ValidationError(f"{path}: line {lineno}: non-finite attribute value")
            alts = occasions.setdefault((pid, oid), [])
            if any(a[0] == aid for a in alts):
                raise ValidationError(f"{path}: line {lineno}: duplicate alternative {aid!r} "
                                      f"in person {pid!r} occasion {oid!r}")
            alts.append((aid, chosen == "1", x))
    if not occasions:
        raise ValidationError(f"{path}: no data rows")

    persons: dict[str, list[str]] = {}
    for pid, oid in occasions:
        persons.setdefault(pid, []).append(oid)
    X_nested, y_nested = [], []
    for pid in sorted(persons, key=_id_key):
        Xn, yn = [], []
        for oid in sorted(persons[pid], key=_id_key):
            alts = occasions[(pid, oid)]
            chosen = [j for j, a in enumerate(alts) if a[1]]
            if len(chosen) != 1:
                raise ValidationError(f"{path}: person {pid!r} occasion {oid!r} has {len(chosen)} chosen "
                                      "alternatives, expected exactly 1")
            Xn.append(np.array([a[2] for a in alts]))
            yn.append(chosen[0])
        X_nested.append(Xn)
        y_nested.append(yn)
    return ChoiceDataset.from_ragged(X_nested, y_nested)


def write_dataset(data: ChoiceDataset, path) -> None:
    """Write ``data`` in long format; ids are 0-based person, occasion and alternative indices."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["person_id", "occasion_id", "alt_id", "chosen"] + [f"x{k + 1}" for k in range(data.K)])
        for n in range(data.N):
            sl = data.occasions(n)
            for t, m in enumerate(range(sl.start, sl.stop)):
                for j in np.flatnonzero(data.avail[m]):
                    w.writerow([n, t, int(j), int(j == data.y[m])] + [repr(float(v)) for v in data.X[m, j]])


# ---------------------------------------------------------------------------
# npz containers
# ---------------------------------------------------------------------------

def _to_jsonable(obj):
    if isinstance(obj, dict):
        return {k: _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _save_npz(path, kind: str, arrays: dict, meta: dict) -> None:
    path = Path(path)
    meta = {"schema_version": SCHEMA_VERSION, "kind": kind, **_to_jsonable(meta)}
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("wb") as fh:
            np.savez(fh, meta=np.array(json.dumps(meta)), **arrays)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def _load_npz(path, kinds: tuple[str, ...]):
    path = Path(path)
    try:
        with np.load(path, allow_pickle=False) as z:
            arrays = {k: z[k] for k in z.files if k != "meta"}
            if "meta" not in z.files:
                raise ValidationError(f"{path}: not an artifact container (no meta entry)")
            meta = json.loads(str(z["meta"]))
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc.strerror or exc}") from exc
    except ValueError as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"{path}: unreadable container ({exc})") from exc
    version = meta.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaVersionError(f"{path}: schema version {version!r}, this build reads version {SCHEMA_VERSION}")
    if meta.get("kind") not in kinds:
        raise ValidationError(f"{path}: holds a {meta.get('kind')!r}, expected one of {kinds}")
    return arrays, meta


_VP_SCALARS = ("c_B", "c_W", "w_B", "w_W")


def persist_fit(fit, path, seeds: dict | None = None, extra: dict | None = None) -> None:
    """Write an MCMC or VB fit to a self-describing ``.npz`` container."""
    if isinstance(fit, McmcDraws):
        arrays = {k: np.asarray(getattr(fit, k)) for k in
                  ("zeta", "Sigma_B", "Sigma_W", "mu", "mu_persons", "acceptance", "rho", "iterations")}
        meta = {
            "dims": {"K": fit.K, "n_chains": fit.n_chains, "n_draws": fit.n_draws,
                     "n_persons_kept": int(fit.mu_persons.shape[0])},
            "seconds": fit.seconds, "config": fit.config,
            "seeds": seeds or {"mcmc": fit.config.get("seed")},
        }
        kind = "mcmc"
    elif isinstance(fit, (VbResult, VariationalPosterior)):
        vp = fit.posterior if isinstance(fit, VbResult) else fit
        arrays = {k: v for k, v in vp.arrays().items() if k not in _VP_SCALARS}
        meta = {"dims": {"K": vp.K, "N": vp.N, "M": int(vp.mu_beta.shape[0])},
                "scalars": {k: float(getattr(vp, k)) for k in _VP_SCALARS},
                "seeds": seeds or {}}
        if isinstance(fit, VbResult):
            arrays["deltas"] = np.asarray(fit.deltas)
            meta.update(n_iter=fit.n_iter, converged=bool(fit.converged), seconds=fit.seconds,
                        n_rejected=fit.n_rejected, config=fit.config)
        kind = "vb"
    else:
        raise ValidationError(f"cannot persist a {type(fit).__name__}")
    if extra:
        meta["extra"] = extra
    _save_npz(path, kind, arrays, meta)


def load_fit(path):
    """Inverse of :func:`persist_fit`; returns McmcDraws or VbResult (or a bare VariationalPosterior)."""
    arrays, meta = _load_npz(path, ("mcmc", "vb"))
    if meta["kind"] == "mcmc":
        return McmcDraws(seconds=float(meta["seconds"]), config=meta.get("config", {}), **arrays)
    deltas = arrays.pop("deltas", None)
    vp = VariationalPosterior(**arrays, **meta["scalars"])
    if "n_iter" not in meta:
        return vp
    return VbResult(posterior=vp, n_iter=int(meta["n_iter"]), converged=bool(meta["converged"]),
                    seconds=float(meta["seconds"]), deltas=deltas, n_rejected=int(meta["n_rejected"]),
                    config=meta.get("config", {}))


def fit_meta(path) -> dict:
    return _load_npz(path, ("mcmc", "vb"))[1]


def persist_truth(truth: ParameterState, path, dgp: DgpConfig | None = None) -> None:
    arrays = {k: np.asarray(getattr(truth, k)) for k in ("zeta", "Sigma_B", "Sigma_W", "mu", "beta")}
    meta = {"dims": {"K": int(truth.zeta.shape[0]), "N": int(truth.mu.shape[0]), "M": int(truth.beta.shape[0])},
            "dgp": dgp.to_dict() if dgp is not None else None,
            "seeds": {"dgp": dgp.seed if dgp is not None else None}}
    _save_npz(path, "truth", arrays, meta)


def load_truth(path) -> tuple[ParameterState, DgpConfig | None]:
    arrays, meta = _load_npz(path, ("truth",))
    dgp = DgpConfig.from_dict(meta["dgp"]) if meta.get("dgp") else None
    return ParameterState(**arrays), dgp


def persist_scenarios(scenarios: tuple[Scenario, Scenario], path, seed=None) -> None:
    arrays = {}
    for sc in scenarios:
        for k in ("X", "y", "mu", "beta"):
            arrays[f"{sc.kind}_{k}"] = np.asarray(getattr(sc, k))
        if sc.persons is not None:
            arrays[f"{sc.kind}_persons"] = np.asarray(sc.persons)
    _save_npz(path, "scenarios", arrays, {"kinds": [sc.kind for sc in scenarios], "seeds": {"eval": seed}})


def load_scenarios(path) -> tuple[Scenario, ...]:
    arrays, meta = _load_npz(path, ("scenarios",))
    return tuple(Scenario(kind, arrays[f"{kind}_X"], arrays[f"{kind}_y"], arrays[f"{kind}_mu"],
                          arrays[f"{kind}_beta"], arrays.get(f"{kind}_persons"))
                 for kind in meta["kinds"])


# ---------------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------------

@dataclass
class RunConfig:
    """Everything a CLI run needs; loaded from a JSON document with optional blocks."""

    mode: str = "benchmark"
    paths: dict = field(default_factory=dict)
    dgp: DgpConfig = field(default_factory=DgpConfig)
    hyper: Hyperparameters | None = None
    mcmc: McmcConfig = field(default_factory=McmcConfig)
    vb: VbConfig = field(default_factory=VbConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    replications: int = 10
    master_seed: int = 0
    conditions: list = field(default_factory=list)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValidationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.replications < 1:
            raise ValidationError("replications must be >= 1")
        if self.eval.n_outer < 1 or self.eval.n_inner < 1:
            raise ValidationError("eval n_outer and n_inner must be >= 1")
        if self.hyper is not None and self.hyper.K != self.dgp.K:
            raise ValidationError("hyperparameter dimension does not match dgp.K")

    def hyper_for(self, K: int) -> Hyperparameters:
        if self.hyper is not None and self.hyper.K == K:
            return self.hyper
        return Hyperparameters.default(K)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {"mode", "paths", "dgp", "hyper", "mcmc", "vb", "eval", "replications", "master_seed", "conditions"}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        try:
            dgp = DgpConfig(**d.get("dgp", {}))
            return cls(
                mode=d.get("mode", "benchmark"),
                paths=dict(d.get("paths", {})),
                dgp=dgp,
                hyper=Hyperparameters.from_dict(d["hyper"], dgp.K) if "hyper" in d else None,
                mcmc=McmcConfig(**d.get("mcmc", {})),
                vb=VbConfig(**d.get("vb", {})),
                eval=EvalConfig(**d.get("eval", {})),
                replications=int(d.get("replications", 10)),
                master_seed=int(d.get("master_seed", 0)),
                conditions=list(d.get("conditions", [])),
            )
        except TypeError as exc:
            raise ValidationError(f"bad config block: {exc}") from exc

    def to_dict(self) -> dict:
        return {
            "mode": self.mode, "paths": self.paths, "dgp": self.dgp.to_dict(),
            "hyper": self.hyper_for(self.dgp.K).to_dict(), "mcmc": self.mcmc.to_dict(),
            "vb": asdict(self.vb), "eval": asdict(self.eval),
            "replications": self.replications, "master_seed": self.master_seed,
            "conditions": self.conditions,
        }


def load_config(path, mode: str | None = None) -> RunConfig:
    path = Path(path)
    try:
        d = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(d, dict):
        raise ValidationError(f"{path}: config must be a JSON object")
    if mode is not None:
        d = {**d, "mode": mode}
    cfg = RunConfig.from_dict(d)
    if cfg.mode in ("fit-vb", "fit-mcmc", "evaluate"):
        for key in ("dataset", "truth"):
            p = cfg.paths.get(key)
            if p is not None and not Path(p).exists():
                raise ValidationError(f"{path}: paths.{key} = {p} does not exist")
    return cfg


def write_json(obj, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_to_jsonable(obj), indent=2, allow_nan=True) + "\n", encoding="utf-8")


def read_json(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def write_table(rows: list[dict], path) -> None:
    """Delimited table; columns are the union of row keys in first-seen order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not rows:
        path.write_text("", encoding="utf-8")
        return
    with path.open("w", newline="", encoding="utf-8") as fh:
        columns = list(dict.fromkeys(k for r in rows for k in r))
        w = csv.DictWriter(fh, fieldnames=columns, restval="", lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def read_table(path) -> list[dict]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def write_manifest(out_dir, config: dict, seeds: dict, argv: list[str] | None = None, outputs=None) -> Path:
    """Config echo, seeds and library versions sufficient to rerun exactly."""
    import scipy

    from . import __version__

    manifest = {
        "schema_version": SCHEMA_VERSION,
        "argv": list(sys.argv if argv is None else argv),
        "config": config,
        "seeds": seeds,
        "versions": {"mxlvb": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
        "outputs": [str(o) for o in (outputs or [])],
    }
    path = Path(out_dir) / "manifest.json"
    write_json(manifest, path)
    return path
