"""Experiment persistence: config files, rollout directories, results.

Every artifact carries a content hash computed over canonical JSON
(sorted keys, compact separators, shortest round-trip floats), so a rerun
with the same config produces byte-identical payloads.  Timestamps live
only under the manifest "meta" key, which is excluded from hashing.
"""

import csv
import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Optional

import numpy as np

from arfilt.errors import ConfigError, DataError
from arfilt.evaluation import ArTruth
from arfilt.filters import Filter, as_filter
from arfilt.lds import LdsSpec, steady_state_kalman, unroll_kalman
from arfilt.rollouts import (
    DesignConfig,
    Label,
    Rollout,
    RolloutSet,
    default_burn_in,
)

SCHEMA_VERSION = 1
MANIFEST_NAME = "manifest.json"


def canonical_json(obj) -> str:
    """Deterministic JSON text: sorted keys, no whitespace, finite numbers."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def content_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def file_sha256(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def filter_hash(f) -> str:
    return content_hash([float(v) for v in as_filter(f).coeffs])


def _require_keys(data, allowed, required, where):
    extra = set(data) - set(allowed)
    if extra:
        raise ConfigError(f"unknown keys in {where}: {sorted(extra)}")
    missing = set(required) - set(data)
    if missing:
        raise ConfigError(f"missing keys in {where}: {sorted(missing)}")


def _as_float_list(values, where):
    try:
        out = [float(v) for v in values]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where} must be a list of numbers") from exc
    if not out:
        raise ConfigError(f"{where} must be non-empty")
    return out


@dataclass(frozen=True)
class EvalSettings:
    """Evaluation block: confidence delta, MC sample count, test-input scales."""

    delta: float = 0.1
    n_mc: int = 256
    test_scales: tuple = (1.0, 2.0, 4.0)

    @classmethod
    def from_json(cls, data):
        _require_keys(data, {"delta", "n_mc", "test_scales"}, set(), "evaluation")
        out = cls(
            delta=float(data.get("delta", 0.1)),
            n_mc=int(data.get("n_mc", 256)),
            test_scales=tuple(_as_float_list(data.get("test_scales", (1.0, 2.0, 4.0)), "test_scales")),
        )
        if not 0.0 < out.delta < 1.0:
            raise ConfigError(f"evaluation.delta must be in (0, 1), got {out.delta}")
        if out.n_mc < 2:
            raise ConfigError(f"evaluation.n_mc must be >= 2, got {out.n_mc}")
        if any(s <= 0.0 for s in out.test_scales):
            raise ConfigError("evaluation.test_scales must be positive")
        return out

    def to_json(self):
        return {"delta": self.delta, "n_mc": self.n_mc, "test_scales": list(self.test_scales)}


@dataclass(frozen=True)
class BenchSettings:
    """Scaling-sweep block: the ell ladder and seeds per rung."""

    ell_values: tuple
    n_seeds: int

    @classmethod
    def from_json(cls, data):
        _require_keys(data, {"ell_values", "n_seeds"}, {"ell_values", "n_seeds"}, "bench")
        try:
            ells = tuple(int(e) for e in data["ell_values"])
        except (TypeError, ValueError) as exc:
            raise ConfigError("bench.ell_values must be a list of integers") from exc
        n_seeds = int(data["n_seeds"])
        if len(set(ells)) < 3:
            raise ConfigError(f"bench.ell_values needs >= 3 distinct ladder points, got {list(ells)}")
        if any(e < 1 for e in ells):
            raise ConfigError("bench.ell_values must be >= 1")
        if n_seeds < 5:
            raise ConfigError(f"bench.n_seeds must be >= 5, got {n_seeds}")
        return cls(ell_values=ells, n_seeds=n_seeds)

    def to_json(self):
        return {"ell_values": list(self.ell_values), "n_seeds": self.n_seeds}


def _matrix(data, where):
    try:
        arr = np.atleast_2d(np.asarray(data, dtype=np.float64))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where} must be a numeric matrix") from exc
    return arr


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: a system, a rollout design, and evaluation settings.

    The JSON form keeps each number in exactly one place: the noise level
    comes from the system block and the master seed from the top level, so
    the design block carries only (r, c, ell) and an optional burn-in L.
    """

    seed: int
    output_dir: str
    system_kind: str
    ar_system: Optional[ArTruth]
    lds_system: Optional[LdsSpec]
    r: int
    c: float
    ell: int
    L: Optional[int]
    evaluation: EvalSettings = field(default_factory=EvalSettings)
    bench: Optional[BenchSettings] = None
    rhos: Optional[tuple] = None

    @classmethod
    def from_json(cls, data):
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        allowed = {
            "schema_version",
            "seed",
            "output_dir",
            "system",
            "design",
            "evaluation",
            "bench",
            "rhos",
        }
        _require_keys(data, allowed, {"schema_version", "seed", "output_dir", "system", "design"}, "config")
        version = data["schema_version"]
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")

        system = data["system"]
        if not isinstance(system, dict) or len(system) != 1 or not set(system) <= {"ar", "lds"}:
            raise ConfigError('system must contain exactly one of "ar" or "lds"')
        ar_system = None
        lds_system = None
        if "ar" in system:
            blk = system["ar"]
            _require_keys(blk, {"g_star", "h_star", "sigma"}, {"g_star", "h_star", "sigma"}, "system.ar")
            sigma = float(blk["sigma"])
            if not (math.isfinite(sigma) and sigma >= 0.0):
                raise ConfigError(f"system.ar.sigma must be finite and >= 0, got {sigma}")
            ar_system = ArTruth(
                g_star=Filter(_as_float_list(blk["g_star"], "system.ar.g_star")),
                h_star=Filter(_as_float_list(blk["h_star"], "system.ar.h_star")),
                sigma=sigma,
            )
            kind = "ar"
        else:
            blk = system["lds"]
            _require_keys(
                blk,
                {"A", "B", "C", "sigma_xi", "sigma_eta"},
                {"A", "B", "C", "sigma_xi", "sigma_eta"},
                "system.lds",
            )
            try:
                lds_system = LdsSpec(
                    A=_matrix(blk["A"], "system.lds.A"),
                    B=_matrix(blk["B"], "system.lds.B"),
                    C=_matrix(blk["C"], "system.lds.C"),
                    sigma_xi=_matrix(blk["sigma_xi"], "system.lds.sigma_xi"),
                    sigma_eta=float(blk["sigma_eta"]),
                )
            except ValueError as exc:
                raise ConfigError(f"invalid system.lds block: {exc}") from exc
            kind = "lds"

        design = data["design"]
        if not isinstance(design, dict):
            raise ConfigError("design must be a JSON object")
        for bad in ("sigma", "seed"):
            if bad in design:
                raise ConfigError(
                    f"design.{bad} is not allowed: sigma comes from the system block, "
                    "seed from the top level"
                )
        _require_keys(design, {"r", "c", "ell", "L"}, {"r", "c", "ell"}, "design")

        cfg = cls(
            seed=int(data["seed"]),
            output_dir=str(data["output_dir"]),
            system_kind=kind,
            ar_system=ar_system,
            lds_system=lds_system,
            r=int(design["r"]),
            c=float(design["c"]),
            ell=int(design["ell"]),
            L=int(design["L"]) if "L" in design else None,
            evaluation=EvalSettings.from_json(data.get("evaluation", {})),
            bench=BenchSettings.from_json(data["bench"]) if "bench" in data else None,
            rhos=tuple(_as_float_list(data["rhos"], "rhos")) if "rhos" in data else None,
        )
        if cfg.rhos is not None and any(not 0.0 < rho < 1.0 for rho in cfg.rhos):
            raise ConfigError(f"rhos must all lie in (0, 1), got {list(cfg.rhos)}")
        try:
            cfg.design()
        except ValueError as exc:
            raise ConfigError(f"invalid design: {exc}") from exc
        return cfg

    @classmethod
    def load(cls, path):
        try:
            with open(path, "r", encoding="utf-8") as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        return cls.from_json(data)

    def to_json(self):
        if self.system_kind == "ar":
            system = {
                "ar": {
                    "g_star": [float(v) for v in self.ar_system.g_star.coeffs],
                    "h_star": [float(v) for v in self.ar_system.h_star.coeffs],
                    "sigma": self.ar_system.sigma,
                }
            }
        else:
            spec = self.lds_system
            system = {
                "lds": {
                    "A": spec.A.tolist(),
                    "B": spec.B.tolist(),
                    "C": spec.C.tolist(),
                    "sigma_xi": spec.sigma_xi.tolist(),
                    "sigma_eta": spec.sigma_eta,
                }
            }
        design = {"r": self.r, "c": self.c, "ell": self.ell}
        if self.L is not None:
            design["L"] = self.L
        out = {
            "schema_version": SCHEMA_VERSION,
            "seed": self.seed,
            "output_dir": self.output_dir,
            "system": system,
            "design": design,
            "evaluation": self.evaluation.to_json(),
        }
        if self.bench is not None:
            out["bench"] = self.bench.to_json()
        if self.rhos is not None:
            out["rhos"] = list(self.rhos)
        return out

    @property
    def config_hash(self) -> str:
        return content_hash(self.to_json())

    def truth(self) -> ArTruth:
        """The AR-filter truth this config simulates from."""
        if self.system_kind == "ar":
            return self.ar_system
        gains = steady_state_kalman(self.lds_system)
        red = unroll_kalman(gains, self.r)
        return ArTruth(red.g_star, red.h_star, math.sqrt(red.sigma2))

    def design(self, truth: Optional[ArTruth] = None) -> DesignConfig:
        """The concrete rollout design; L defaults to the certified burn-in."""
        if truth is None:
            truth = self.truth()
        L = self.L if self.L is not None else default_burn_in(truth.h_star, self.r)
        return DesignConfig(r=self.r, c=self.c, ell=self.ell, L=int(L), sigma=truth.sigma, seed=self.seed)


@dataclass(frozen=True)
class DemoConfig:
    """Standalone config for the closed-form Kalman comparison table."""

    output_dir: str
    rhos: tuple = (0.1, 0.5, 0.9, 0.99)

    @classmethod
    def from_json(cls, data):
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        _require_keys(data, {"schema_version", "output_dir", "rhos"}, {"schema_version", "output_dir"}, "demo config")
        if data["schema_version"] != SCHEMA_VERSION:
            raise ConfigError(
                f"unsupported schema_version {data['schema_version']!r} (expected {SCHEMA_VERSION})"
            )
        rhos = tuple(_as_float_list(data["rhos"], "rhos")) if "rhos" in data else cls.rhos
        if any(not 0.0 < rho < 1.0 for rho in rhos):
            raise ConfigError(f"rhos must all lie in (0, 1), got {list(rhos)}")
        return cls(output_dir=str(data["output_dir"]), rhos=rhos)

    def to_json(self):
        return {"schema_version": SCHEMA_VERSION, "output_dir": self.output_dir, "rhos": list(self.rhos)}

    @property
    def config_hash(self) -> str:
        return content_hash(self.to_json())


def load_config_file(path) -> dict:
    """Raw JSON of a config file; parse failures are config errors."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc


def _fmt(value) -> str:
    """Shortest decimal that round-trips; integers without a trailing .0."""
    if value is None or value == "":
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def rollout_csv_text(rollout: Rollout) -> str:
    """One rollout as t,x,y rows for t = -L..T.

    x exists for t <= T-1 and y for t >= -L+1; the two edge cells are empty.
    """
    L, T = rollout.burn_in, rollout.horizon
    lines = ["t,x,y"]
    for t in range(-L, T + 1):
        x_cell = _fmt(rollout.x[t + L]) if t <= T - 1 else ""
        y_cell = _fmt(rollout.y[t + L - 1]) if t >= -L + 1 else ""
        lines.append(f"{t},{x_cell},{y_cell}")
    return "\n".join(lines) + "\n"


def save_rollouts(rollout_set: RolloutSet, dirpath, config_hash=None) -> dict:
    """Write a rollout directory: manifest.json plus one CSV per rollout.

    Returns the manifest dict.  The manifest content_hash covers the design,
    the truth-filter hashes, and every file hash; "meta" (timestamps) is
    excluded so reruns hash identically.
    """
    os.makedirs(dirpath, exist_ok=True)
    entries = []
    ordered = sorted(rollout_set.rollouts, key=lambda ro: ro.label.sort_key())
    for ro in ordered:
        name = ro.label.filename()
        text = rollout_csv_text(ro)
        with open(os.path.join(dirpath, name), "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        entries.append(
            {
                "file": name,
                "kind": ro.label.kind,
                "j": ro.label.j,
                "k": ro.label.k,
                "seed": int(ro.noise_seed),
                "sha256": hashlib.sha256(text.encode("utf-8")).hexdigest(),
            }
        )
    payload = {
        "schema_version": SCHEMA_VERSION,
        "config_hash": config_hash,
        "design": rollout_set.config.to_json(),
        "g_star": [float(v) for v in rollout_set.g_star.coeffs],
        "h_star": [float(v) for v in rollout_set.h_star.coeffs],
        "g_star_hash": filter_hash(rollout_set.g_star),
        "h_star_hash": filter_hash(rollout_set.h_star),
        "rollouts": entries,
    }
    manifest = dict(payload)
    manifest["content_hash"] = content_hash(payload)
    manifest["meta"] = {"created_at": datetime.now(timezone.utc).isoformat()}
    with open(os.path.join(dirpath, MANIFEST_NAME), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def _parse_rollout_csv(path, L, T, where):
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        rows = list(reader)
    if header != ["t", "x", "y"]:
        raise DataError(f"{where}: expected header t,x,y, got {header}")
    if len(rows) != L + T + 1:
        raise DataError(f"{where}: expected {L + T + 1} rows, got {len(rows)}")
    x = np.zeros(L + T)
    y = np.zeros(L + T)
    try:
        for row, t in zip(rows, range(-L, T + 1)):
            if int(row[0]) != t:
                raise DataError(f"{where}: row for t={t} is out of order")
            if t <= T - 1:
                x[t + L] = float(row[1])
            if t >= -L + 1:
                y[t + L - 1] = float(row[2])
    except (IndexError, ValueError) as exc:
        raise DataError(f"{where}: malformed row: {exc}") from exc
    return x, y


def load_rollouts(dirpath):
    """Read a rollout directory back into a RolloutSet.

    Verifies the manifest content hash and every per-file hash; any mismatch
    raises DataError.  Returns (rollout_set, manifest).
    """
    manifest_path = os.path.join(dirpath, MANIFEST_NAME)
    try:
        with open(manifest_path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{manifest_path} is not valid JSON: {exc}") from exc
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise DataError(f"{manifest_path}: unsupported schema_version {manifest.get('schema_version')!r}")
    payload = {k: v for k, v in manifest.items() if k not in ("content_hash", "meta")}
    if content_hash(payload) != manifest.get("content_hash"):
        raise DataError(f"{manifest_path}: content hash mismatch (manifest edited or corrupted)")

    cfg = DesignConfig.from_json(manifest["design"])
    g_star = Filter(manifest["g_star"])
    h_star = Filter(manifest["h_star"])
    entries = manifest["rollouts"]
    if len(entries) != cfg.n_rollouts:
        raise DataError(
            f"{dirpath}: manifest lists {len(entries)} rollouts, design requires {cfg.n_rollouts}"
        )
    rollouts = []
    for entry in entries:
        path = os.path.join(dirpath, entry["file"])
        if file_sha256(path) != entry["sha256"]:
            raise DataError(f"{path}: file hash does not match the manifest")
        x, y = _parse_rollout_csv(path, cfg.L, cfg.T, entry["file"])
        rollouts.append(
            Rollout(
                label=Label(entry["kind"], int(entry["j"]), int(entry["k"])),
                x=x,
                y=y,
                noise_seed=int(entry["seed"]),
                burn_in=cfg.L,
                horizon=cfg.T,
            )
        )
    return RolloutSet(cfg, g_star, h_star, tuple(rollouts)), manifest


def write_json(path, payload) -> None:
    """Deterministic pretty JSON (sorted keys, trailing newline)."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def load_json(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path} is not valid JSON: {exc}") from exc


def write_long_csv(path, rows, hashes) -> None:
    """Long-format curve file: comment lines with hashes, then series,x,y,lo,hi."""
    lines = [f"# {key}: {value}" for key, value in hashes.items()]
    lines.append("series,x,y,lo,hi")
    for series, x, y, lo, hi in rows:
        lines.append(f"{series},{_fmt(x)},{_fmt(y)},{_fmt(lo)},{_fmt(hi)}")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def write_table_csv(path, columns, rows, hashes) -> None:
    """Plain rectangular CSV with hash comment lines and one header row."""
    lines = [f"# {key}: {value}" for key, value in hashes.items()]
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def read_long_csv(path):
    """Inverse of write_long_csv: returns (hashes dict, list of row tuples)."""
    hashes = {}
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for raw in fh:
            line = raw.rstrip("\n")
            if line.startswith("#"):
                key, _, value = line[1:].partition(":")
                hashes[key.strip()] = value.strip()
            elif line and line != "series,x,y,lo,hi":
                series, x, y, lo, hi = line.split(",")
                rows.append(
                    (
                        series,
                        float(x) if x else None,
                        float(y) if y else None,
                        float(lo) if lo else None,
                        float(hi) if hi else None,
                    )
                )
    return hashes, rows
