"""JSON model documents: strict parsing, validation, and built-in presets.

A spec document looks like

    {
      "dim": 2,
      "hamiltonian": [[[0.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [0.0, 0.0]]],
      "lindblad_ops": [ <matrix>, ... ],
      "measurement": {"effects": [<matrix>, ...], "eigenvalues": [-1.0, 1.0]},
      "initial_state": [[0.0, 0.0], [1.0, 0.0]],
      "grid": {"t0": 0.0, "dt": 0.001, "steps": 2000},
      "ensemble": {"n_traj": 10000, "seed": 20260810, "unraveling": "wiener"}
    }

with every complex number as an [re, im] pair. Parsing is strict: unknown
keys are rejected, and every violated invariant is reported with the path
of the offending field. Hermiticity, effect completeness and state
normalization are validated at 1e-8; inputs passing at that tolerance are
then projected exactly (Hermitian part, renormalization) so the in-memory
objects meet their tighter construction invariants.
"""

from __future__ import annotations

import json
from typing import Mapping, Sequence

import numpy as np

from .core import LindbladModel, Measurement, TimeGrid
from .ensemble import EnsembleConfig
from .errors import ModelValidationError

LOAD_TOL = 1e-8

_TOP_KEYS = {
    "dim",
    "hamiltonian",
    "lindblad_ops",
    "measurement",
    "initial_state",
    "grid",
    "ensemble",
}
_GRID_KEYS = {"t0", "dt", "steps"}
_ENSEMBLE_KEYS = {"n_traj", "seed", "unraveling"}
_MEAS_KEYS = {"effects", "eigenvalues"}

PRESETS = ("damping", "rabi")


def _require_mapping(doc, path: str) -> Mapping:
    if not isinstance(doc, Mapping):
        raise ModelValidationError(f"{path}: expected an object, got {type(doc).__name__}")
    return doc


def _check_keys(doc: Mapping, allowed: set, required: set, path: str) -> None:
    for key in doc:
        if key not in allowed:
            raise ModelValidationError(f"{path}: unknown key {key!r}")
    for key in required:
        if key not in doc:
            raise ModelValidationError(f"{path}: missing key {key!r}")


def _number(v, path: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ModelValidationError(f"{path}: expected a number, got {v!r}")
    return float(v)


def _integer(v, path: str) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise ModelValidationError(f"{path}: expected an integer, got {v!r}")
    return v


def _complex_entry(v, path: str) -> complex:
    if not isinstance(v, Sequence) or isinstance(v, (str, bytes)) or len(v) != 2:
        raise ModelValidationError(f"{path}: expected an [re, im] pair, got {v!r}")
    return complex(_number(v[0], f"{path}[0]"), _number(v[1], f"{path}[1]"))


def _matrix(v, dim: int, path: str) -> np.ndarray:
    if not isinstance(v, Sequence) or isinstance(v, (str, bytes)) or len(v) != dim:
        raise ModelValidationError(f"{path}: expected {dim} rows")
    out = np.empty((dim, dim), dtype=complex)
    for i, row in enumerate(v):
        if not isinstance(row, Sequence) or isinstance(row, (str, bytes)) or len(row) != dim:
            raise ModelValidationError(f"{path}[{i}]: expected {dim} entries")
        for j, entry in enumerate(row):
            out[i, j] = _complex_entry(entry, f"{path}[{i}][{j}]")
    if not np.all(np.isfinite(out.view(float))):
        raise ModelValidationError(f"{path}: entries must be finite")
    return out


def _check_hermitian(mat: np.ndarray, path: str) -> np.ndarray:
    defect = np.abs(mat - mat.conj().T)
    worst = float(defect.max())
    if worst > LOAD_TOL:
        i, j = np.unravel_index(int(np.argmax(defect)), defect.shape)
        raise ModelValidationError(
            f"{path}[{i}][{j}]: not the conjugate of {path}[{j}][{i}] "
            f"(difference {worst:.3g}, tol {LOAD_TOL:g})"
        )
    return 0.5 * (mat + mat.conj().T)


def parse_model_data(doc, source: str = "spec") -> EnsembleConfig:
    """Validate a spec document (already decoded from JSON) into a config."""
    doc = _require_mapping(doc, source)
    _check_keys(
        doc,
        _TOP_KEYS,
        {"dim", "hamiltonian", "measurement", "initial_state", "grid", "ensemble"},
        source,
    )
    dim = _integer(doc["dim"], "dim")
    if dim < 1:
        raise ModelValidationError(f"dim: must be >= 1, got {dim}")

    hamiltonian = _check_hermitian(_matrix(doc["hamiltonian"], dim, "hamiltonian"), "hamiltonian")

    raw_ops = doc.get("lindblad_ops", [])
    if not isinstance(raw_ops, Sequence) or isinstance(raw_ops, (str, bytes)):
        raise ModelValidationError("lindblad_ops: expected a list of matrices")
    ops = tuple(_matrix(op, dim, f"lindblad_ops[{k}]") for k, op in enumerate(raw_ops))
    model = LindbladModel(hamiltonian=hamiltonian, lindblad_ops=ops)

    mdoc = _require_mapping(doc["measurement"], "measurement")
    _check_keys(mdoc, _MEAS_KEYS, {"effects"}, "measurement")
    raw_eff = mdoc["effects"]
    if not isinstance(raw_eff, Sequence) or isinstance(raw_eff, (str, bytes)) or not raw_eff:
        raise ModelValidationError("measurement.effects: expected a non-empty list of matrices")
    effects = [_matrix(e, dim, f"measurement.effects[{k}]") for k, e in enumerate(raw_eff)]
    total = np.sum(effects, axis=0)
    dev = float(np.max(np.abs(total - np.eye(dim))))
    if dev > LOAD_TOL:
        raise ModelValidationError(
            f"measurement.effects: sum deviates from identity by {dev:.3g} (max entry)"
        )
    eigenvalues = None
    if "eigenvalues" in mdoc:
        raw_lam = mdoc["eigenvalues"]
        if not isinstance(raw_lam, Sequence) or isinstance(raw_lam, (str, bytes)):
            raise ModelValidationError("measurement.eigenvalues: expected a list of numbers")
        eigenvalues = tuple(
            _number(x, f"measurement.eigenvalues[{k}]") for k, x in enumerate(raw_lam)
        )
    effects = [_check_hermitian(e, f"measurement.effects[{k}]") for k, e in enumerate(effects)]
    meas = Measurement(effects=tuple(effects), eigenvalues=eigenvalues)

    if not isinstance(doc["initial_state"], Sequence) or len(doc["initial_state"]) != dim:
        raise ModelValidationError(f"initial_state: expected {dim} amplitudes")
    psi0 = np.array(
        [_complex_entry(a, f"initial_state[{k}]") for k, a in enumerate(doc["initial_state"])]
    )
    nrm = float(np.linalg.norm(psi0))
    if abs(nrm - 1.0) > LOAD_TOL:
        raise ModelValidationError(
            f"initial_state: norm {nrm:.10g} deviates from 1 beyond {LOAD_TOL:g}"
        )
    psi0 = psi0 / nrm

    gdoc = _require_mapping(doc["grid"], "grid")
    _check_keys(gdoc, _GRID_KEYS, {"dt", "steps"}, "grid")
    grid = TimeGrid(
        t0=_number(gdoc.get("t0", 0.0), "grid.t0"),
        dt=_number(gdoc["dt"], "grid.dt"),
        steps=_integer(gdoc["steps"], "grid.steps"),
    )

    edoc = _require_mapping(doc["ensemble"], "ensemble")
    _check_keys(edoc, _ENSEMBLE_KEYS, {"n_traj", "seed"}, "ensemble")
    unraveling = edoc.get("unraveling", "wiener")
    if unraveling not in ("wiener", "poisson"):
        raise ModelValidationError(
            f"ensemble.unraveling: expected 'wiener' or 'poisson', got {unraveling!r}"
        )
    return EnsembleConfig(
        model=model,
        psi0=psi0,
        meas=meas,
        grid=grid,
        n_traj=_integer(edoc["n_traj"], "ensemble.n_traj"),
        master_seed=_integer(edoc["seed"], "ensemble.seed"),
        unraveling=unraveling,
    )


def parse_model(path) -> EnsembleConfig:
    """Load and validate a JSON spec file into an EnsembleConfig."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelValidationError(f"{path}: invalid JSON: {exc}") from exc
    return parse_model_data(doc, source=str(path))


def _re_im(z: complex):
    return [float(np.real(z)), float(np.imag(z))]


def _matrix_doc(mat) -> list:
    a = np.asarray(mat, dtype=complex)
    return [[_re_im(a[i, j]) for j in range(a.shape[1])] for i in range(a.shape[0])]


def preset_spec(name: str) -> dict:
    """Built-in two-level specs so tests and CI need no external files.

    ``damping``: spontaneous decay at unit rate (H = 0, L = sigma_minus)
    from the excited state. ``rabi``: the same decay with a unit-frequency
    sigma_x drive. Basis ordering is (ground, excited); the measurement is
    the basis projector family with eigenvalues (-1, +1).
    """
    if name not in PRESETS:
        raise ModelValidationError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}")
    sigma_minus = [[0.0, 1.0], [0.0, 0.0]]
    hamiltonian = [[0.0, 0.0], [0.0, 0.0]]
    if name == "rabi":
        hamiltonian = [[0.0, 1.0], [1.0, 0.0]]  # Omega = 1 drive
    return {
        "dim": 2,
        "hamiltonian": _matrix_doc(hamiltonian),
        "lindblad_ops": [_matrix_doc(sigma_minus)],
        "measurement": {
            "effects": [
                _matrix_doc([[1.0, 0.0], [0.0, 0.0]]),
                _matrix_doc([[0.0, 0.0], [0.0, 1.0]]),
            ],
            "eigenvalues": [-1.0, 1.0],
        },
        "initial_state": [[0.0, 0.0], [1.0, 0.0]],
        "grid": {"t0": 0.0, "dt": 0.001, "steps": 2000},
        "ensemble": {"n_traj": 10000, "seed": 20260810, "unraveling": "wiener"},
    }
