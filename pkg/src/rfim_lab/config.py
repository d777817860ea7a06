"""Experiment configuration: file parsing, validation, grid expansion.

Configs are TOML (or JSON, chosen by extension) with a versioned schema.
Validation is collect-all: every offending key is reported in a single
ConfigError rather than failing at the first problem.

The environment variable RFIM_LAB_SEED, when set, overrides master_seed;
the effective seed is what gets echoed into reports, so reruns under the
same environment reproduce output files byte for byte.
"""

from __future__ import annotations

import dataclasses
import hashlib
import itertools
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - 3.10 fallback
    import tomli as tomllib

from .ensembles import ENSEMBLE_KINDS, FIELD_KINDS, Q_RECIPES, EnsembleSpec, FieldSpec
from .errors import ConfigError
from .measures import BaseMeasure, atoms, rademacher, uniform

SCHEMA = "rfim-lab/1"
MODES = ("quenched", "annealed", "lln", "contraction", "norms")
ANNEALED_CENTERINGS = ("zero", "population")
SEED_ENV = "RFIM_LAB_SEED"
UPSILON_FLOOR_DEFAULT = 0.05

# Grid keys a sweep may vary, with the config location each one rewrites.
GRID_KEYS = ("n", "theta", "p", "N", "M", "d", "gamma", "h")

_TOP_KEYS = {
    "schema",
    "mode",
    "master_seed",
    "rho",
    "replicates",
    "burn_in",
    "thinning",
    "samples_per_chain",
    "upsilon_floor",
    "annealed_centering",
    "ensemble",
    "field",
    "measure",
    "q_recipe",
    "output",
}

_ENSEMBLE_KEYS = {
    "curie_weiss": set(),
    "erdos_renyi": {"p", "storage"},
    "d_regular": {"d", "storage"},
    "random_regular": {"d", "storage"},
    "graphon": {"gamma", "f_constant", "f_blocks", "f_block_weights", "storage"},
    "hopfield": {"N", "z_dist", "dilution"},
}


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    mode: str
    master_seed: int
    rho: float
    replicates: int
    burn_in: Optional[int]
    thinning: int
    samples_per_chain: int
    upsilon_floor: float
    annealed_centering: str
    ensemble: EnsembleSpec
    field: FieldSpec
    measure: BaseMeasure
    measure_spec: dict
    q_recipe: dict
    out_dir: str
    tag: str

    def to_dict(self) -> dict:
        """Fully resolved echo, embedded in every report for reruns."""
        ens = {"kind": self.ensemble.kind, "n": self.ensemble.n, "theta": self.ensemble.theta}
        ens.update(self.ensemble.params)
        fld = {"kind": self.field.kind}
        if self.field.kind == "atoms":
            fld["points"] = list(self.field.points)
            fld["weights"] = list(self.field.weights)
        else:
            fld["h"] = self.field.h
        return {
            "schema": SCHEMA,
            "mode": self.mode,
            "master_seed": self.master_seed,
            "rho": self.rho,
            "replicates": self.replicates,
            "burn_in": self.burn_in,
            "thinning": self.thinning,
            "samples_per_chain": self.samples_per_chain,
            "upsilon_floor": self.upsilon_floor,
            "annealed_centering": self.annealed_centering,
            "ensemble": ens,
            "field": fld,
            "measure": dict(self.measure_spec),
            "q_recipe": dict(self.q_recipe),
            "output": {"dir": self.out_dir, "tag": self.tag},
        }


class _Checker:
    """Accumulates validation failures across the whole document."""

    def __init__(self):
        self.errors = []

    def fail(self, path, message):
        self.errors.append(f"{path}: {message}")

    def table(self, raw, key, required=True):
        val = raw.get(key)
        if val is None:
            if required:
                self.fail(key, "missing required table")
            return {}
        if not isinstance(val, dict):
            self.fail(key, "must be a table")
            return {}
        return val

    def value(self, tbl, path, key, kinds, check=None, *, required=False, default=None):
        if key not in tbl:
            if required:
                self.fail(f"{path}{key}", "missing required key")
            return default
        val = tbl[key]
        if isinstance(val, bool) or not isinstance(val, kinds):
            self.fail(f"{path}{key}", f"expected {kinds[0].__name__}")
            return default
        if check is not None:
            msg = check(val)
            if msg:
                self.fail(f"{path}{key}", msg)
                return default
        return val

    def choice(self, tbl, path, key, options, *, required=False, default=None):
        val = self.value(tbl, path, key, (str,), required=required, default=default)
        if val is not None and val not in options:
            self.fail(f"{path}{key}", f"must be one of {', '.join(options)}")
            return default
        return val

    def unknown(self, tbl, path, allowed):
        for key in sorted(set(tbl) - set(allowed)):
            self.fail(f"{path}{key}" if path else key, "unknown key")


def _positive_int(lo):
    return lambda v: None if v >= lo else f"must be >= {lo}"


def _open_unit(v):
    return None if 0.0 < v < 1.0 else "must lie in (0, 1)"


def _build_measure(chk, raw):
    tbl = chk.table(raw, "measure", required=False) or {"kind": "rademacher"}
    kind = chk.choice(tbl, "measure.", "kind", ("rademacher", "uniform", "atoms"), required=True)
    spec = {"kind": kind}
    if kind == "atoms":
        pts = chk.value(tbl, "measure.", "points", (list,), required=True)
        wts = chk.value(tbl, "measure.", "weights", (list,), required=True)
        chk.unknown(tbl, "measure.", {"kind", "points", "weights"})
        if pts is not None and wts is not None:
            try:
                measure = atoms(pts, wts)
            except (ValueError, TypeError) as exc:
                chk.fail("measure", str(exc))
                return None, spec
            spec["points"] = [float(p) for p in pts]
            spec["weights"] = [float(w) for w in wts]
            return measure, spec
        return None, spec
    chk.unknown(tbl, "measure.", {"kind"})
    if kind == "uniform":
        return uniform(), spec
    return rademacher(), spec


def _build_ensemble(chk, raw):
    tbl = chk.table(raw, "ensemble")
    kind = chk.choice(tbl, "ensemble.", "kind", ENSEMBLE_KINDS, required=True)
    n = chk.value(tbl, "ensemble.", "n", (int,), _positive_int(2), required=True)
    theta = chk.value(tbl, "ensemble.", "theta", (float, int), required=True)
    if kind is None:
        return None
    allowed = {"kind", "n", "theta"} | _ENSEMBLE_KEYS[kind]
    chk.unknown(tbl, "ensemble.", allowed)
    params = {}
    broken = n is None or theta is None
    if kind == "erdos_renyi":
        p = chk.value(
            tbl, "ensemble.", "p", (float, int),
            lambda v: None if 0.0 < v <= 1.0 else "must lie in (0, 1]",
            required=True,
        )
        if p is None:
            return None
        params["p"] = float(p)
    elif kind in ("d_regular", "random_regular"):
        d = chk.value(tbl, "ensemble.", "d", (int,), _positive_int(1), required=True)
        if d is None or broken:
            return None
        if kind == "d_regular" and (d % 2 or d >= n):
            chk.fail("ensemble.d", "circulant graph needs even d with d < n")
            return None
        if kind == "random_regular" and (d >= n or (n * d) % 2):
            chk.fail("ensemble.d", "needs d < n with n*d even")
            return None
        params["d"] = d
    elif kind == "graphon":
        gamma = chk.value(
            tbl, "ensemble.", "gamma", (float, int),
            lambda v: None if 0.0 <= v < 0.5 else "must lie in [0, 0.5)",
            default=0.0,
        )
        params["gamma"] = float(gamma)
        if "f_blocks" in tbl:
            blocks = chk.value(tbl, "ensemble.", "f_blocks", (list,), required=True)
            weights = chk.value(tbl, "ensemble.", "f_block_weights", (list,))
            f = {"blocks": blocks}
            if weights is not None:
                f["block_weights"] = weights
            params["f"] = f
        else:
            const = chk.value(
                tbl, "ensemble.", "f_constant", (float, int),
                lambda v: None if v > 0 else "must be positive",
                default=1.0,
            )
            params["f"] = {"constant": float(const)}
    elif kind == "hopfield":
        big_n = chk.value(tbl, "ensemble.", "N", (int,), _positive_int(1), required=True)
        if big_n is None:
            return None
        params["N"] = big_n
        z_dist = chk.choice(
            tbl, "ensemble.", "z_dist", ("rademacher", "gaussian"), default="rademacher"
        )
        params["z_dist"] = z_dist
        dilution = chk.value(
            tbl, "ensemble.", "dilution", (float, int),
            lambda v: None if 0.0 < v <= 1.0 else "must lie in (0, 1]",
        )
        if dilution is not None:
            params["dilution"] = float(dilution)
    if kind in ("erdos_renyi", "d_regular", "random_regular", "graphon"):
        storage = chk.choice(tbl, "ensemble.", "storage", ("dense", "csr"))
        if storage is not None:
            params["storage"] = storage
    if broken:
        return None
    try:
        return EnsembleSpec(kind=kind, n=n, theta=float(theta), params=params)
    except ValueError as exc:
        chk.fail("ensemble", str(exc))
        return None


def _build_field(chk, raw):
    tbl = chk.table(raw, "field", required=False) or {"kind": "constant", "h": 0.0}
    kind = chk.choice(tbl, "field.", "kind", FIELD_KINDS, required=True)
    if kind is None:
        return None
    if kind == "atoms":
        pts = chk.value(tbl, "field.", "points", (list,), required=True)
        wts = chk.value(tbl, "field.", "weights", (list,), required=True)
        chk.unknown(tbl, "field.", {"kind", "points", "weights"})
        if pts is None or wts is None:
            return None
        try:
            return FieldSpec(
                kind="atoms",
                points=tuple(float(p) for p in pts),
                weights=tuple(float(w) for w in wts),
            )
        except (ValueError, TypeError) as exc:
            chk.fail("field", str(exc))
            return None
    chk.unknown(tbl, "field.", {"kind", "h"})
    default_h = 0.0 if kind == "constant" else None
    h = chk.value(
        tbl, "field.", "h", (float, int),
        required=kind != "constant", default=default_h,
    )
    if h is None:
        return None
    try:
        return FieldSpec(kind=kind, h=float(h))
    except ValueError as exc:
        chk.fail("field", str(exc))
        return None


def config_from_dict(raw: dict, source_name: str = "config", env=None) -> ExperimentConfig:
    """Validate a parsed document and build the typed config.

    Raises ConfigError listing every problem found.
    """
    if not isinstance(raw, dict):
        raise ConfigError(["document root must be a table"])
    chk = _Checker()
    chk.unknown(raw, "", _TOP_KEYS)

    schema = chk.value(raw, "", "schema", (str,), required=True)
    if schema is not None and schema != SCHEMA:
        chk.fail("schema", f"unsupported schema {schema!r} (expected {SCHEMA!r})")
    mode = chk.choice(raw, "", "mode", MODES, required=True)

    master_seed = chk.value(raw, "", "master_seed", (int,), _positive_int(0), required=True)
    env = os.environ if env is None else env
    env_seed = env.get(SEED_ENV)
    if env_seed is not None:
        try:
            master_seed = int(env_seed)
            if master_seed < 0:
                raise ValueError
        except ValueError:
            chk.fail(SEED_ENV, f"environment override {env_seed!r} is not a seed")

    rho = chk.value(raw, "", "rho", (float, int), _open_unit, required=True)
    needs_chains = mode in ("quenched", "annealed", "lln", "contraction")
    replicates = chk.value(
        raw, "", "replicates", (int,), _positive_int(1),
        required=needs_chains, default=0 if mode == "norms" else None,
    )
    burn_in = chk.value(raw, "", "burn_in", (int,), _positive_int(0))
    thinning = chk.value(raw, "", "thinning", (int,), _positive_int(1), default=1)
    samples_per_chain = chk.value(
        raw, "", "samples_per_chain", (int,), _positive_int(1), default=1
    )
    upsilon_floor = chk.value(
        raw, "", "upsilon_floor", (float, int),
        lambda v: None if 0.0 <= v < 1.0 else "must lie in [0, 1)",
        default=UPSILON_FLOOR_DEFAULT,
    )
    annealed_centering = chk.choice(
        raw, "", "annealed_centering", ANNEALED_CENTERINGS, default="zero"
    )

    ensemble = _build_ensemble(chk, raw)
    fieldspec = _build_field(chk, raw)
    measure, measure_spec = _build_measure(chk, raw)

    recipe_tbl = chk.table(raw, "q_recipe", required=False) or {"kind": "flat"}
    recipe_kind = chk.choice(recipe_tbl, "q_recipe.", "kind", Q_RECIPES, required=True)
    lam = chk.value(recipe_tbl, "q_recipe.", "lam", (float, int))
    chk.unknown(recipe_tbl, "q_recipe.", {"kind", "lam"})
    if (
        recipe_kind == "graphon_eigenfunction"
        and ensemble is not None
        and ensemble.kind != "graphon"
    ):
        chk.fail("q_recipe.kind", "graphon_eigenfunction requires a graphon ensemble")

    out_tbl = chk.table(raw, "output", required=False) or {}
    out_dir = chk.value(out_tbl, "output.", "dir", (str,), default="results")
    tag = chk.value(out_tbl, "output.", "tag", (str,), default=source_name)
    chk.unknown(out_tbl, "output.", {"dir", "tag"})

    if chk.errors:
        raise ConfigError(chk.errors)

    recipe = {"kind": recipe_kind}
    if lam is not None:
        recipe["lam"] = float(lam)
    return ExperimentConfig(
        mode=mode,
        master_seed=master_seed,
        rho=float(rho),
        replicates=int(replicates or 0),
        burn_in=burn_in,
        thinning=thinning,
        samples_per_chain=samples_per_chain,
        upsilon_floor=float(upsilon_floor),
        annealed_centering=annealed_centering,
        ensemble=ensemble,
        field=fieldspec,
        measure=measure,
        measure_spec=measure_spec,
        q_recipe=recipe,
        out_dir=out_dir,
        tag=tag,
    )


def _parse_file(path: Path) -> dict:
    if path.suffix.lower() == ".json":
        try:
            return json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError([f"{path.name}: invalid JSON ({exc})"]) from exc
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([f"{path.name}: invalid TOML ({exc})"]) from exc


def read_document(path) -> dict:
    """Parse a TOML or JSON config document without validating it."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError([f"{path}: no such file"])
    return _parse_file(path)


def apply_overrides(raw: dict, overrides: Optional[dict]) -> dict:
    if overrides:
        if overrides.get("mode") is not None:
            raw["mode"] = overrides["mode"]
        if overrides.get("out_dir") is not None:
            raw.setdefault("output", {})
            raw["output"]["dir"] = overrides["out_dir"]
    return raw


def load_config(path, overrides: Optional[dict] = None, env=None) -> ExperimentConfig:
    """Parse and validate a config file; CLI flag overrides applied first."""
    path = Path(path)
    raw = apply_overrides(read_document(path), overrides)
    return config_from_dict(raw, source_name=path.stem, env=env)


# -- parameter grids -------------------------------------------------------------


def load_grid(path) -> list:
    """Read a sweep grid file: a [grid] table of lists; points are the
    Cartesian product, keys in sorted order."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError([f"{path}: no such file"])
    raw = _parse_file(path)
    errors = []
    tbl = raw.get("grid", {})
    if not isinstance(tbl, dict):
        raise ConfigError(["grid: must be a table of lists"])
    for key in sorted(set(raw) - {"grid"}):
        errors.append(f"{key}: unknown key")
    axes = []
    for key in sorted(tbl):
        if key not in GRID_KEYS:
            errors.append(f"grid.{key}: not sweepable (allowed: {', '.join(GRID_KEYS)})")
            continue
        vals = tbl[key]
        if not isinstance(vals, list) or any(
            isinstance(v, bool) or not isinstance(v, (int, float)) for v in vals
        ):
            errors.append(f"grid.{key}: must be a list of numbers")
            continue
        axes.append((key, vals))
    if errors:
        raise ConfigError(errors)
    if not axes or any(not vals for _, vals in axes):
        return []
    points = []
    for combo in itertools.product(*(vals for _, vals in axes)):
        points.append({key: combo[i] for i, (key, _) in enumerate(axes)})
    return points


def apply_grid_point(raw: dict, point: dict) -> dict:
    """Rewrite a parsed config document with one grid point's values."""
    out = json.loads(json.dumps(raw))
    ens = out.setdefault("ensemble", {})
    for key, val in point.items():
        if key == "n":
            ens["n"] = int(val)
        elif key == "theta":
            ens["theta"] = float(val)
        elif key in ("p", "gamma"):
            ens[key] = float(val)
        elif key in ("N", "d"):
            ens[key] = int(val)
        elif key == "M":
            out["replicates"] = int(val)
        elif key == "h":
            out.setdefault("field", {})["h"] = float(val)
    return out


def derive_point_seed(master_seed: int, point: dict) -> int:
    """Deterministic per-point seed; depends only on the point's values,
    so duplicate grid points reproduce identical rows."""
    payload = json.dumps(
        {"master_seed": int(master_seed), "point": point}, sort_keys=True
    ).encode()
    digest = hashlib.sha256(payload).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def config_for_point(base_raw: dict, point: dict, source_name: str, env=None) -> ExperimentConfig:
    raw = apply_grid_point(base_raw, point)
    cfg = config_from_dict(raw, source_name=source_name, env=env)
    return dataclasses.replace(cfg, master_seed=derive_point_seed(cfg.master_seed, point))
