"""Experiment runner: configuration files, cached stages and report emission.

A configuration is a flat ``key = value`` text file (``#`` starts a
comment).  Each subcommand reads the keys it needs; unknown keys are
rejected so that typos do not silently fall back to defaults.

Exit codes: 0 success, 2 invalid configuration or precondition,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import sys
import tempfile
import time
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path
from typing import Callable

import numpy as np

from . import equidist, greenmeas, manhattan, percyc
from .dynsys import ProductMap, ProjectivePoint, RationalMap, postcritical, sdist
from .mpnum import DEFAULT_PREC, MAX_PREC, MIN_PREC

log = logging.getLogger("equidyn")

KINDS = ("periodic", "rate-preimage", "rate-periodic", "tube", "manhattan", "certify", "counts")
# alternative spellings accepted in the ``kind`` key of a config file
KIND_ALIASES = {"preimage-rate": "rate-preimage", "periodic-rate": "rate-periodic"}
SCHEMA_VERSION = 1
LOCATION_KEYS = ("out", "cache")
EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3

COMMON_KEYS = {"kind": None, "map": None, "seed": "0", "precision": str(DEFAULT_PREC), "out": "out", "cache": ""}
KIND_KEYS: dict[str, dict[str, str]] = {
    "periodic": {"n_range": "1..4", "backend": "auto"},
    "counts": {"n_range": "1..6", "gamma": "0.5", "backend": "newton-seeded"},
    "rate-periodic": {"n_range": "2..9", "gamma": "0.5", "q_choice": "P_nγ", "test_family": "smooth-chart",
                      "test_count": "5", "reference_atoms": "100000", "smoothing": "5", "bootstrap": "200"},
    "rate-preimage": {"m_range": "2..14", "point": "0.3,0.7", "test_family": "smooth-chart", "test_count": "5",
                      "reference_atoms": "100000", "smoothing": "5", "n0": "5"},
    "tube": {"deltas": "4,16,64", "kappa": "2", "trials": "20", "atoms": "200000", "burn_in": "50"},
    "manhattan": {"n": "4", "m_max": "6", "ell": "0,2", "cells": "4", "cell_radius": "0.005", "grid": "9",
                  "calibrate_max_m": "4"},
    "certify": {"n": "4", "gamma": "0.5", "zeta": "", "gamma0": "", "gamma1": "", "kappa": "2", "r_cap": "0.0078125",
                "atoms": "100000", "grid": "9", "n0": "5"},
}


class ValidationError(ValueError):
    """Invalid configuration; the message names the violated constraint."""


class NumericalFailure(ArithmeticError):
    pass


# ---------------------------------------------------------------------------
# configuration


def _parse_range(text: str) -> list[int]:
    text = text.strip()
    if ".." in text:
        a, b = text.split("..")
        return list(range(int(a), int(b) + 1))
    return [int(t) for t in text.replace(" ", "").split(",") if t]


def _parse_complex(text: str) -> complex:
    parts = text.replace(" ", "").split(",")
    if len(parts) == 1:
        return complex(float(parts[0]), 0.0)
    return complex(float(parts[0]), float(parts[1]))


def parse_map_spec(spec: str, prec: int = 256):
    """Map from a one-line spec.

    ``quadratic <c>``, ``poly <c0> <c1> ...``, ``rational <P coeffs> / <Q coeffs>``,
    ``product <spec> x <spec>`` and ``file <path>`` (multi-line map text).
    Coefficients are ``re`` or ``re,im`` with optional ``<index>=`` prefix.
    """
    spec = spec.strip()
    head, _, rest = spec.partition(" ")
    head = head.lower()
    try:
        if head == "product":
            left, sep, right = rest.partition(" x ")
            if not sep:
                raise ValidationError("product map spec needs '<spec> x <spec>'")
            return ProductMap(parse_map_spec(left, prec), parse_map_spec(right, prec))
        if head == "quadratic":
            c = rest.strip()
            return RationalMap.parse(f"P {c} 0 1\nQ 1\n", prec)
        if head == "poly":
            return RationalMap.parse(f"P {rest}\nQ 1\n", prec)
        if head == "rational":
            num, sep, den = rest.partition("/")
            if not sep:
                raise ValidationError("rational map spec needs '<P coeffs> / <Q coeffs>'")
            return RationalMap.parse(f"P {num}\nQ {den}\n", prec)
        if head == "file":
            return RationalMap.parse(Path(rest.strip()).read_text(), prec)
    except ValidationError:
        raise
    except (ValueError, KeyError, IndexError, OSError) as exc:
        raise ValidationError(f"map spec {spec!r} is invalid: {exc}") from exc
    raise ValidationError(f"unknown map spec kind {head!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    entries: tuple  # sorted (key, value) pairs, values as written

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        seen: dict[str, str] = {}
        for num, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValidationError(f"line {num}: expected 'key = value'")
            key = key.strip()
            if key in seen:
                raise ValidationError(f"line {num}: key {key!r} given twice")
            seen[key] = value.strip()
        return cls(tuple(sorted(seen.items())))

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> "ExperimentConfig":
        try:
            return cls.from_text(Path(path).read_text())
        except OSError as exc:
            raise ValidationError(f"cannot read config {path}: {exc}") from exc

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.entries)

    @property
    def hash(self) -> str:
        """sha256 of the canonical text, ignoring where outputs and cache live."""
        body = "".join(f"{k} = {v}\n" for k, v in self.entries if k not in LOCATION_KEYS)
        return hashlib.sha256(body.encode()).hexdigest()

    def get(self, key: str, default: str | None = None) -> str | None:
        return dict(self.entries).get(key, default)

    def with_overrides(self, **kw) -> "ExperimentConfig":
        d = dict(self.entries)
        for k, v in kw.items():
            if v is not None:
                d[k] = str(v)
        return ExperimentConfig(tuple(sorted(d.items())))

    def resolved(self, kind: str) -> "ExperimentConfig":
        """Fill defaults for ``kind`` and validate every key."""
        if kind not in KINDS:
            raise ValidationError(f"unknown experiment kind {kind!r}")
        given = dict(self.entries)
        if "kind" in given:
            given["kind"] = KIND_ALIASES.get(given["kind"], given["kind"])
        if given.get("kind", kind) != kind:
            raise ValidationError(f"config kind {given['kind']!r} does not match subcommand {kind!r}")
        allowed = {**COMMON_KEYS, **KIND_KEYS[kind]}
        unknown = sorted(set(given) - set(allowed))
        if unknown:
            raise ValidationError(f"unknown keys for {kind}: {', '.join(unknown)}")
        full = {k: v for k, v in allowed.items() if v is not None}
        full.update(given)
        full["kind"] = kind
        if "map" not in full:
            raise ValidationError("the 'map' key is required")
        cfg = ExperimentConfig(tuple(sorted(full.items())))
        cfg.validate()
        return cfg

    # typed accessors -------------------------------------------------------
    def get_int(self, key: str) -> int:
        try:
            return int(self.get(key))
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"{key} must be an integer") from exc

    def get_float(self, key: str) -> float | None:
        v = self.get(key)
        if v in (None, ""):
            return None
        try:
            return float(v)
        except ValueError as exc:
            raise ValidationError(f"{key} must be a number") from exc

    def get_range(self, key: str) -> list[int]:
        try:
            r = _parse_range(self.get(key))
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"{key} must be 'a..b' or a comma list") from exc
        if not r:
            raise ValidationError(f"{key} is empty")
        return r

    def validate(self) -> None:
        kind = self.get("kind")
        prec = self.get_int("precision")
        if not MIN_PREC <= prec <= MAX_PREC:
            raise ValidationError(f"precision must lie in [{MIN_PREC}, {MAX_PREC}] bits")
        self.get_int("seed")
        f = self.map()
        gamma = self.get_float("gamma") if "gamma" in KIND_KEYS[kind] else None
        if gamma is not None and not 0 < gamma < 1:
            raise ValidationError("gamma must satisfy 0 < gamma < 1 (multiplier-filter exponent)")
        if kind in ("periodic", "counts", "rate-periodic"):
            ns = self.get_range("n_range")
            if min(ns) < 1:
                raise ValidationError("periods must be >= 1")
        if kind == "periodic" and self.get("backend") not in ("auto", "expand", "newton-seeded", "both"):
            raise ValidationError("backend must be auto, expand, newton-seeded or both")
        if kind == "rate-periodic" and self.get("q_choice") not in ("P_nγ", "P_ngamma", "repelling", "all"):
            raise ValidationError("q_choice must be P_nγ, repelling or all")
        if kind in ("rate-periodic", "rate-preimage"):
            equidist._parse_kind(self.get("test_family"))
            if self.get_int("reference_atoms") < 100_000:
                raise ValidationError("reference_atoms must be >= 100000")
        if kind == "rate-preimage" and len(self.get_range("m_range")) < 2:
            raise ValidationError("m_range needs at least two orders for a rate fit")
        if kind == "tube":
            if self.get_float("kappa") < 1:
                raise ValidationError("kappa must be >= 1")
            if min(self.get_range("deltas")) < 2:
                raise ValidationError("deltas must be >= 2 (a tube needs two points)")
        if kind in ("manhattan", "certify") and not isinstance(f, RationalMap):
            raise ValidationError("the Manhattan pipeline takes a map of P^1")
        if kind == "certify":
            self.pipeline_params().resolved()

    def map(self):
        return parse_map_spec(self.get("map"))

    def pipeline_params(self) -> manhattan.PipelineParams:
        try:
            return manhattan.PipelineParams(
                gamma=self.get_float("gamma"), zeta=self.get_float("zeta"), gamma0=self.get_float("gamma0"),
                gamma1=self.get_float("gamma1"), kappa=self.get_float("kappa"), r_cap=self.get_float("r_cap"),
                sample_size=self.get_int("atoms"), grid_density=self.get_int("grid"), rng_seed=self.get_int("seed"),
                n0=self.get_int("n0"))
        except manhattan.PreconditionError as exc:
            raise ValidationError(str(exc)) from exc


# ---------------------------------------------------------------------------
# cache


class Cache:
    """Content-addressed text artifacts under ``root``.

    Each entry stores a sha256 of its body on the first line; an entry
    whose body no longer matches is evicted and recomputed.  Writes go
    through a temporary file and an atomic rename, so concurrent readers
    never see partial entries.
    """

    def __init__(self, root: str | os.PathLike | None):
        self.root = Path(root) if root else None
        self.hits = 0
        self.misses = 0
        if self.root is not None:
            self.root.mkdir(parents=True, exist_ok=True)

    @staticmethod
    def key(map_key: str, operation: str, params: dict) -> str:
        blob = json.dumps({"map": map_key, "op": operation, "params": params}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()

    def _path(self, key: str) -> Path:
        return self.root / key[:2] / f"{key}.txt"

    def lookup(self, key: str) -> str | None:
        if self.root is None:
            return None
        path = self._path(key)
        if not path.exists():
            return None
        text = path.read_text()
        head, _, body = text.partition("\n")
        if head != f"# sha256={hashlib.sha256(body.encode()).hexdigest()}":
            log.warning("cache entry %s is corrupt; evicting", key[:12])
            path.unlink(missing_ok=True)
            return None
        self.hits += 1
        return body

    def store(self, key: str, body: str) -> None:
        if self.root is None:
            return
        path = self._path(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        text = f"# sha256={hashlib.sha256(body.encode()).hexdigest()}\n{body}"
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)

    def fetch(self, key: str, compute: Callable[[], str]) -> str:
        body = self.lookup(key)
        if body is None:
            self.misses += 1
            body = compute()
            self.store(key, body)
        return body


def cache_lookup(cache: Cache, map_key: str, operation: str, params: dict) -> str | None:
    return cache.lookup(Cache.key(map_key, operation, params))


# ---------------------------------------------------------------------------
# runner


@dataclass
class RunManifest:
    config_hash: str
    kind: str
    versions: dict
    stages: list = field(default_factory=list)
    cache_hits: int = 0
    cache_misses: int = 0
    outputs: list = field(default_factory=list)
    incomplete: bool = False
    summary: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({
            "schema_version": SCHEMA_VERSION,
            "config_hash": self.config_hash,
            "kind": self.kind,
            "versions": self.versions,
            "stages": self.stages,
            "cache_hits": self.cache_hits,
            "cache_misses": self.cache_misses,
            "outputs": self.outputs,
            "incomplete": self.incomplete,
            "summary": self.summary,
        }, indent=2, sort_keys=True)

    def output_hashes(self) -> dict:
        return {o["path"]: o["sha256"] for o in self.outputs}


def _versions() -> dict:
    out = {}
    for dist in ("artifact", "numpy", "scipy", "gmpy2"):
        try:
            out[dist] = metadata.version(dist)
        except metadata.PackageNotFoundError:
            out[dist] = "unknown"
    return out


class _Run:
    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.out = Path(cfg.get("out"))
        self.out.mkdir(parents=True, exist_ok=True)
        self.cache = Cache(cfg.get("cache") or self.out / ".cache")
        self.manifest = RunManifest(cfg.hash, cfg.get("kind"), _versions())
        self.header = f"config_hash={cfg.hash}"

    def stage(self, name: str):
        run = self

        class _Stage:
            def __enter__(self):
                self.t = time.perf_counter()
                log.info("stage %s", name)

            def __exit__(self, exc_type, exc, tb):
                run.manifest.stages.append({"name": name, "wall_s": round(time.perf_counter() - self.t, 3),
                                            "ok": exc_type is None})
                if exc is not None:
                    run.manifest.summary["failed_stage"] = name
                    log.error("stage %s failed: %s", name, exc)
                return False

        return _Stage()

    def write(self, name: str, body: str, comment: str = "#") -> None:
        text = body if comment is None else f"{comment} {self.header}\n{body}"
        path = self.out / name
        path.write_text(text)
        self.manifest.outputs.append({"path": name, "sha256": hashlib.sha256(text.encode()).hexdigest()})

    def cycles(self, f, n: int, backend: str = "auto") -> percyc.CycleSet:
        prec = self.cfg.get_int("precision")
        key = Cache.key(f.key, "find_periodic", {"n": n, "backend": backend, "prec": prec})
        body = self.cache.fetch(key, lambda: percyc.cycles_to_text(percyc.find_periodic(f, n, backend, prec)))
        return percyc.cycles_from_text(body)

    def backward(self, f, count: int, seed: int, burn_in: int = 50) -> greenmeas.MeasureSample:
        key = Cache.key(f.key, "sample_backward", {"count": count, "seed": seed, "burn_in": burn_in, "chains": 256})
        body = self.cache.fetch(
            key, lambda: greenmeas.sample_backward(f, None, burn_in, count, seed, chains=256).to_text())
        return greenmeas.MeasureSample.from_text(body)

    def finish(self) -> RunManifest:
        self.manifest.cache_hits = self.cache.hits
        self.manifest.cache_misses = self.cache.misses
        (self.out / "manifest.json").write_text(self.manifest.to_json() + "\n")
        return self.manifest


def _csv(rows: list, columns: tuple) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(columns)
    wr.writerows(rows)
    return buf.getvalue()


def _g(x) -> str:
    return "nan" if x is None else format(float(x), ".17g")


def _run_periodic(run: _Run, f) -> None:
    for n in run.cfg.get_range("n_range"):
        with run.stage(f"find_periodic n={n}"):
            cs = run.cycles(f, n, run.cfg.get("backend"))
        run.write(f"periodic_n{n}.csv", percyc.cycle_csv(cs))
        run.manifest.summary[f"n={n}"] = {"points": len(cs), "with_multiplicity": cs.total_with_multiplicity}


def _run_counts(run: _Run, f) -> None:
    gamma = run.cfg.get_float("gamma")
    k = 2 if isinstance(f, ProductMap) else 1
    d = f.degree
    rows, ns, ratios = [], [], []
    for n in run.cfg.get_range("n_range"):
        with run.stage(f"cycles n={n}"):
            cs = run.cycles(f, n, run.cfg.get("backend"))
        A, B = percyc.count_exceptional(cs)
        good = percyc.filter_repelling_gamma(cs, gamma)
        scale = float(d) ** (k * n)
        rows.append([n, cs.total_with_multiplicity, len(good), A, B, _g(A / scale), _g(B / scale)])
        ns.append(n)
        ratios.append((A / scale, B / scale))
    fits = {}
    for idx, name in ((0, "A"), (1, "B")):
        vals = [r[idx] for r in ratios]
        try:
            fits[name] = equidist.fit_rate(ns, vals, min_points=2).xi
        except equidist.FitRefused:
            fits[name] = None
    body = _csv(rows, ("n", "P_n", "P_n_gamma", "A_n", "B_n", "A_n_over_dkn", "B_n_over_dkn"))
    body += f"# fitted_base_A={_g(fits['A'])} fitted_base_B={_g(fits['B'])}\n"
    run.write("counts.csv", body)
    run.manifest.summary.update({"fitted_base_A": fits["A"], "fitted_base_B": fits["B"]})


def _reference(run: _Run, f) -> equidist.Reference:
    cfg = run.cfg
    return equidist.reference_measure(f, cfg.get_int("reference_atoms"), cfg.get_int("seed"), cfg.get_int("smoothing"))


def _emit_fits(run: _Run, f, fits: list, q_choice: str, stem: str) -> None:
    body = ""
    for i, fit in enumerate(fits):
        text = equidist.rate_csv(f.key, fit, q_choice)
        body += text if i == 0 else text.split("\n", 1)[1]
    run.write(f"{stem}.csv", body)
    payload = [json.loads(fit.to_json()) for fit in fits]
    run.write(f"{stem}_fit.json", json.dumps(payload, indent=2, sort_keys=True) + "\n", comment=None)
    run.manifest.summary["fits"] = {p["label"]: {"xi": p["xi"], "xi_ci": p["xi_ci"]} for p in payload}


def _run_rate_periodic(run: _Run, f) -> None:
    cfg = run.cfg
    phis = equidist.make_test_family(cfg.get("test_family"), cfg.get_int("test_count"), cfg.get_int("seed"))
    with run.stage("reference"):
        ref = _reference(run, f)
    cycles = {}
    for n in cfg.get_range("n_range"):
        with run.stage(f"cycles n={n}"):
            cycles[n] = run.cycles(f, n)
    fits = []
    with run.stage("fits"):
        for phi in phis:
            try:
                fits.append(equidist.periodic_discrepancy(
                    f, cfg.get_range("n_range"), phi, cfg.get("q_choice"), cfg.get_float("gamma"), ref, cycles,
                    cfg.get_int("bootstrap"), cfg.get_int("seed")))
            except equidist.FitRefused as exc:
                log.warning("%s: %s", phi.ident, exc)
                run.manifest.incomplete = True
    if not fits:
        raise NumericalFailure("no test function produced a usable rate fit")
    _emit_fits(run, f, fits, cfg.get("q_choice"), "rate_periodic")


def _run_rate_preimage(run: _Run, f) -> None:
    cfg = run.cfg
    if isinstance(f, ProductMap):
        raise ValidationError("rate-preimage takes a map of P^1")
    phis = equidist.make_test_family(cfg.get("test_family"), cfg.get_int("test_count"), cfg.get_int("seed"))
    a = ProjectivePoint.from_affine(_parse_complex(cfg.get("point")))
    with run.stage("reference"):
        ref = _reference(run, f)

    def notice(msg):
        log.warning(msg)
        run.manifest.incomplete = True

    fits = []
    with run.stage("fits"):
        for phi in phis:
            fits.append(equidist.preimage_discrepancy(f, a, cfg.get_range("m_range"), phi, ref, cfg.get_int("seed"),
                                                      n0=cfg.get_int("n0"), notice=notice))
    _emit_fits(run, f, fits, "preimage", "rate_preimage")


def tube_battery(sample: greenmeas.MeasureSample, deltas, kappa: float, trials: int, seed: int) -> list:
    """Rows (trial, delta, eps, estimate, ci, bound, ok) with V drawn from the sample."""
    rng = greenmeas.rng_for(seed)
    aff = sample.affine()
    rows = []
    for delta in deltas:
        for t in range(trials):
            idx = rng.choice(len(sample), size=delta, replace=False)
            V = [ProjectivePoint.from_affine(complex(aff[i])) for i in idx]
            q = greenmeas.TubeQuery(tuple(V), float(delta) ** (-kappa), kappa)
            p, half = greenmeas.tube_mass(sample, q)
            rows.append((t, delta, q.eps, p, half, 1.0 / delta, p <= 1.0 / delta + half))
    return rows


def _run_tube(run: _Run, f) -> None:
    cfg = run.cfg
    if isinstance(f, ProductMap):
        raise ValidationError("the tube battery takes a map of P^1")
    with run.stage("sample"):
        s = run.backward(f, cfg.get_int("atoms"), cfg.get_int("seed"), cfg.get_int("burn_in"))
    with run.stage("battery"):
        rows = tube_battery(s, cfg.get_range("deltas"), cfg.get_float("kappa"), cfg.get_int("trials"), cfg.get_int("seed") + 1)
    out = [[t, d, _g(e), _g(p), _g(h), _g(b), int(ok)] for t, d, e, p, h, b, ok in rows]
    run.write("tube.csv", _csv(out, ("trial", "delta", "eps", "estimate", "ci", "bound", "ok")))
    run.manifest.summary["violations"] = sum(1 for r in rows if not r[-1])


def _run_manhattan(run: _Run, f) -> None:
    cfg = run.cfg
    atlas = manhattan.build_atlas()
    d = f.degree
    with run.stage("sample"):
        s = run.backward(f, 100_000, cfg.get_int("seed"))
    n = cfg.get_int("n")
    params = manhattan.PipelineParams(rng_seed=cfg.get_int("seed")).resolved()
    r = min(float(d) ** (-params.gamma1 * n), params.r_cap)
    with run.stage("good translations"):
        man = manhattan.build_manhattan(atlas, r, s, postcritical(f, n + 10), cfg.get_int("seed"), log.warning)
    rows, records = [], []
    aff = s.affine()
    rng = greenmeas.rng_for(cfg.get_int("seed") + 7)
    with run.stage("branches"):
        for ell in cfg.get_range("ell"):
            pc = postcritical(f, ell)
            cells = []
            for i in rng.permutation(len(s))[:2000]:
                cell = manhattan.cell_around(atlas, ProjectivePoint.from_affine(complex(aff[i])), cfg.get_float("cell_radius"))
                try:
                    manhattan.trace_branches(f, cell, 1, ell, pc, cfg.get_int("grid"), atlas)
                except manhattan.PreconditionError:
                    continue
                cells.append(cell)
                if len(cells) == cfg.get_int("cells"):
                    break
            for ci, cell in enumerate(cells):
                for m in range(1, cfg.get_int("m_max") + 1):
                    brs = manhattan.trace_branches(f, cell, m, grid_density=cfg.get_int("grid"), atlas=atlas)
                    diams = np.array([b.diameter for b in brs if b.valid])
                    records.append((m, ell, diams))
                    rows.append([ell, ci, cell.chart, _g(cell.centre.real), _g(cell.centre.imag), m, len(brs),
                                 len(diams), _g(diams.max() if diams.size else math.nan),
                                 _g(np.median(diams) if diams.size else math.nan)])
    law = manhattan.fit_diameter_law(records, d, cfg.get_int("calibrate_max_m"))
    run.write("manhattan_cells.csv", _csv(rows, ("ell", "cell", "chart", "centre_re", "centre_im", "m", "branches",
                                                 "valid", "max_diameter", "median_diameter")))
    report = {
        "r": r,
        "taus": {str(j): [t.real, t.imag] for j, t in man.taus.items()},
        "street_mass": {str(j): v for j, v in man.street_mass.items()},
        "street_ci": {str(j): v for j, v in man.street_ci.items()},
        "good": {str(j): bool(v) for j, v in man.good.items()},
        "A2": atlas.A2,
        "diameter_law": {"A": law["A"], "violations": law["violations"]},
    }
    run.write("manhattan.json", json.dumps(report, indent=2, sort_keys=True) + "\n", comment=None)
    run.manifest.summary.update({"r": r, "diameter_A": law["A"], "diameter_violations": law["violations"]})


def _run_certify(run: _Run, f) -> None:
    cfg = run.cfg
    n = cfg.get_int("n")
    params = cfg.pipeline_params()
    with run.stage("sample"):
        s = run.backward(f, params.sample_size, params.rng_seed)
    with run.stage("pipeline"):
        res = manhattan.certified_repelling_pipeline(f, n, params, sample=s, warn=log.warning)
    with run.stage("cross-check"):
        ref = run.cycles(f, n)
        worst = 0.0
        for p in res.cycles:
            worst = max(worst, min(float(sdist(p.location, q.location)) for q in ref))
        filtered = percyc.filter_repelling_gamma(res.cycles, params.resolved().gamma)
    run.write("certified_points.csv", percyc.cycle_csv(res.cycles))
    cells = [[c["chart"], c["eta"][0], c["eta"][1], _g(c["mass"]), _g(c["inner_mass"]), _g(c["q"]), _g(c["p"]),
              c["branches"]] for c in res.cells]
    run.write("certify_cells.csv", _csv(cells, ("chart", "eta_x", "eta_y", "mass", "inner_mass", "q", "p", "branches")))
    manifest = res.manifest()
    manifest.update({"subset_distance": worst, "filter_passed": len(filtered) == len(res.cycles),
                     "branch_residual_max": max((b.residual_mp or 0.0 for _, b, _ in res.branches), default=0.0)})
    run.write("certify.json", json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n", comment=None)
    run.manifest.summary.update({"points": len(res.cycles), "subset_distance": worst})
    if worst > 1e-12 or len(filtered) != len(res.cycles):
        raise NumericalFailure("certified points disagree with the periodic solver")


RUNNERS = {
    "periodic": _run_periodic,
    "counts": _run_counts,
    "rate-periodic": _run_rate_periodic,
    "rate-preimage": _run_rate_preimage,
    "tube": _run_tube,
    "manhattan": _run_manhattan,
    "certify": _run_certify,
}


def run(config: ExperimentConfig, kind: str | None = None) -> RunManifest:
    """Execute one experiment; reports and ``manifest.json`` land in ``out``."""
    kind = kind or config.get("kind")
    kind = KIND_ALIASES.get(kind, kind)
    cfg = config.resolved(kind)
    r = _Run(cfg)
    f = cfg.map()
    try:
        RUNNERS[kind](r, f)
    except BaseException:
        r.manifest.incomplete = True
        r.finish()
        raise
    return r.finish()


# ---------------------------------------------------------------------------
# command line


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="equidyn", description="Equidistribution experiments for holomorphic maps.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="kind", required=True)
    for kind in KINDS:
        sp = sub.add_parser(kind)
        sp.add_argument("--config", required=True)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--precision", type=int)
        sp.add_argument("--out")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = ExperimentConfig.from_file(args.config).with_overrides(
            seed=args.seed, precision=args.precision, out=args.out)
        manifest = run(cfg, args.kind)
    except (ValidationError, manhattan.PreconditionError, greenmeas.CapacityError) as exc:
        log.error("invalid: %s", exc)
        return EXIT_INVALID
    except (ArithmeticError, equidist.FitRefused, FloatingPointError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERICAL
    except ValueError as exc:
        log.error("invalid: %s", exc)
        return EXIT_INVALID
    print(json.dumps({"config_hash": manifest.config_hash, "outputs": manifest.output_hashes()}, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
