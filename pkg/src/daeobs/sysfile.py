"""Strict JSON system files: load, validate, save.

Matrices are stored as ``{"shape": [rows, cols], "data": [[...], ...]}`` so
empty blocks keep their dimensions. Unknown fields are rejected.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .model import DaeSystem, ModelError, ObserverGains
from .synth import LmiCertificate, SamplingPlan

FORMAT_VERSION = 1
BUILTIN = ("ex1", "ex2", "ex3", "ex3_copy", "counterexample")


class SystemFileError(ValueError):
    """Malformed or inconsistent system file."""


def _schema() -> dict:
    text = resources.files("daeobs.systems").joinpath("system.schema.json").read_text("utf-8")
    return json.loads(text)


def _reject_constant(name):
    raise SystemFileError(f"non-finite number {name} is not allowed")


def resolve_path(name) -> Path:
    """Path of a system file; bare builtin names map to the shipped files."""
    if str(name) in BUILTIN:
        return Path(str(resources.files("daeobs.systems").joinpath(f"{name}.json")))
    return Path(name)


def dumps(doc) -> str:
    """JSON text with number lists and shapes kept on one line."""
    def fmt(obj, ind):
        pad = "  " * (ind + 1)
        if isinstance(obj, dict):
            if not obj:
                return "{}"
            items = [f"{pad}{json.dumps(k)}: {fmt(v, ind + 1)}" for k, v in obj.items()]
            return "{\n" + ",\n".join(items) + "\n" + "  " * ind + "}"
        if isinstance(obj, list) and any(isinstance(v, (dict, list)) for v in obj):
            if all(isinstance(v, list) for v in obj):
                return "[" + ", ".join(fmt(v, ind + 1) for v in obj) + "]"
            items = [pad + fmt(v, ind + 1) for v in obj]
            return "[\n" + ",\n".join(items) + "\n" + "  " * ind + "]"
        return json.dumps(obj)
    return fmt(doc, 0) + "\n"


def matrix_to_json(M) -> dict:
    M = np.atleast_2d(np.asarray(M, float))
    return {"shape": [int(M.shape[0]), int(M.shape[1])],
            "data": [[float(v) for v in row] for row in M]}


def matrix_from_json(obj, name="matrix") -> np.ndarray:
    rows, cols = obj["shape"]
    data = obj["data"]
    if len(data) != rows or any(len(r) != cols for r in data):
        raise SystemFileError(f"{name}: data does not match shape {rows}x{cols}")
    return np.array(data, dtype=float).reshape(rows, cols)


@dataclass
class SystemFile:
    """Parsed system file; ``doc`` keeps the validated JSON document."""

    doc: dict
    path: Path | None = None

    @classmethod
    def from_dict(cls, doc: dict, path=None) -> "SystemFile":
        try:
            jsonschema.Draft202012Validator(_schema()).validate(doc)
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise SystemFileError(f"schema violation at {where}: {exc.message}") from exc
        sf = cls(copy.deepcopy(doc), Path(path) if path else None)
        sf.system()
        sf.gains()
        sf.certificate()
        sf._check_simulation()
        return sf

    @classmethod
    def load(cls, name) -> "SystemFile":
        path = resolve_path(name)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise SystemFileError(f"cannot read {path}: {exc}") from exc
        try:
            doc = json.loads(text, parse_constant=_reject_constant)
        except json.JSONDecodeError as exc:
            raise SystemFileError(f"{path}: invalid JSON: {exc}") from exc
        return cls.from_dict(doc, path)

    def to_dict(self) -> dict:
        return copy.deepcopy(self.doc)

    def save(self, path) -> None:
        Path(path).write_text(dumps(self.doc), encoding="utf-8")

    def _mat(self, key):
        obj = self.doc["matrices"].get(key)
        return None if obj is None else matrix_from_json(obj, key)

    def system(self) -> DaeSystem:
        d = self.doc
        try:
            return DaeSystem(E=self._mat("E"), A=self._mat("A"), C=self._mat("C"),
                             B_L=self._mat("B_L"), B_M=self._mat("B_M"), J=self._mat("J"),
                             F=self._mat("F"), Theta=self._mat("Theta"), mu=d.get("mu", 0.0),
                             f_L=d.get("f_L"), f_M=d.get("f_M"), h=d.get("h"),
                             m=len(d.get("u", [])))
        except (ModelError, ValueError) as exc:
            raise SystemFileError(str(exc)) from exc

    def gains(self) -> ObserverGains | None:
        g = self.doc.get("gains")
        if g is None:
            return None
        dims = self.system().dims
        L1, L2 = matrix_from_json(g["L1"], "L1"), matrix_from_json(g["L2"], "L2")
        if L1.shape[0] != dims["l"] or L2.shape[0] != dims["p"] or L1.shape[1] != L2.shape[1]:
            raise SystemFileError(f"gain shapes {L1.shape}, {L2.shape} do not fit "
                                  f"l={dims['l']}, p={dims['p']}")
        return ObserverGains(L1, L2)

    @property
    def delta(self) -> float | None:
        return self.doc.get("delta")

    def certificate(self, delta: float | None = None) -> LmiCertificate | None:
        c = self.doc.get("certificate")
        if c is None:
            return None
        dims = self.system().dims
        g = self.gains()
        k = 0 if g is None else g.k
        P, K = matrix_from_json(c["P"], "P"), matrix_from_json(c["K"], "K")
        nk = dims["n"] + k
        if P.shape != (dims["l"] + dims["p"], nk) or K.shape != (nk, nk):
            raise SystemFileError(f"certificate shapes P {P.shape}, K {K.shape} do not fit "
                                  f"({dims['l'] + dims['p']}, {nk}) and ({nk}, {nk})")
        dl = delta if delta is not None else self.delta
        if dl is None:
            raise SystemFileError("a delta is required with a certificate")
        try:
            return LmiCertificate(P, K, dl, n=dims["n"])
        except ValueError as exc:
            raise SystemFileError(f"certificate: {exc}") from exc

    def sampling(self) -> SamplingPlan:
        return SamplingPlan(**self.doc.get("sampling", {}))

    def solver(self) -> dict:
        return dict(self.doc.get("solver", {}))

    def simulation(self) -> dict:
        return dict(self.doc.get("simulation", {}))

    def inputs(self) -> list[str]:
        return list(self.doc.get("u", []))

    def _check_simulation(self):
        s = self.simulation()
        n = self.system().dims["n"]
        for key in ("x0", "z0"):
            if key in s and len(s[key]) != n:
                raise SystemFileError(f"simulation.{key} has {len(s[key])} entries, expected {n}")
        if "t_span" in s and not s["t_span"][1] > s["t_span"][0]:
            raise SystemFileError("simulation.t_span must be increasing")

    def with_solution(self, gains: ObserverGains, cert: LmiCertificate) -> "SystemFile":
        """Copy with gains, certificate and delta replaced."""
        doc = self.to_dict()
        doc["gains"] = {"L1": matrix_to_json(gains.L1), "L2": matrix_to_json(gains.L2)}
        doc["certificate"] = {"P": matrix_to_json(cert.P), "K": matrix_to_json(cert.K)}
        doc["delta"] = float(cert.delta)
        return SystemFile.from_dict(doc)
