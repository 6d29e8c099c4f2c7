"""Scenario files: parsing, validation and execution.

A scenario is a TOML document::

    name = "ls_gamma2"
    dim = 2
    equation = "normalization"        # master | normalization | modified
                                      # or {kind = "semigroup_example", lambda = 1.0}
    [hamiltonian]                     # optional, default 0
    re = [[0.5, 0.0], [0.0, -0.5]]
    im = [[0.0, 0.0], [0.0, 0.0]]
    [[kraus]]                         # optional GKSL Kraus operators
    re = ...
    [kernel]
    type = "lidar_shabani"            # none | lidar_shabani | table
    kappa = 1.0
    gamma = 2.0
    channel = "dephasing"             # or "random_unital", or [[kernel.channel_kraus]]
    [solver]
    dt = 1e-3
    t_max = 10.0
    [outputs]
    trajectory = true
    certificate = true
    resolvent_check = {p_values = [2.0, 4.0, 8.0]}

Matrices are given as ``re``/``im`` nested arrays; ``im`` may be omitted.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Optional

import numpy as np
import tomli

from .generators import (
    GkslSpec,
    KernelFamily,
    KernelSpec,
    LidarShabaniParams,
    dephasing_channel,
    gksl,
    lidar_shabani,
)
from .operator_core import (
    SuperOperator,
    certify,
    check_dim,
    random_unital_channel,
)
from .volterra import (
    SolverConfig,
    Trajectory,
    solve_master,
    solve_modified,
    solve_normalization,
    solve_semigroup_example,
)

EQUATIONS = ("master", "normalization", "modified", "semigroup_example")
KERNEL_TYPES = ("none", "lidar_shabani", "table")


class ScenarioError(ValueError):
    """Invalid or unreadable scenario; the message names the offending key."""


@dataclass
class Scenario:
    name: str
    dim: int
    hamiltonian: np.ndarray
    kraus: list
    kernel: dict
    equation: str
    solver: SolverConfig
    outputs: dict = field(default_factory=dict)
    lam: Optional[float] = None
    p_kraus: list = field(default_factory=list)
    seed: int = 0

    def with_gamma(self, gamma: float) -> "Scenario":
        if self.kernel.get("type") != "lidar_shabani":
            raise ScenarioError("gamma sweeps need a lidar_shabani kernel")
        return dataclasses.replace(self, kernel={**self.kernel, "gamma": float(gamma)},
                                   name=f"{self.name}@gamma={gamma:g}")


def bundled_scenarios() -> list[str]:
    root = resources.files("nonmarkov") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".toml"))


def resolve_config(path) -> Path | Any:
    """A filesystem path, or the name of a bundled scenario."""
    p = Path(path)
    if p.exists():
        return p
    name = p.name[:-5] if p.name.endswith(".toml") else p.name
    candidate = resources.files("nonmarkov") / "scenarios" / f"{name}.toml"
    if candidate.is_file():
        return candidate
    raise ScenarioError(f"config {path} not found (bundled: {', '.join(bundled_scenarios())})")


def _matrix(obj, d: int, where: str) -> np.ndarray:
    if not isinstance(obj, dict) or "re" not in obj:
        raise ScenarioError(f"{where}: expected a table with 're' (and optional 'im')")
    try:
        re_part = np.array(obj["re"], dtype=float)
        im_part = np.array(obj.get("im", np.zeros_like(re_part)), dtype=float)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{where}: {exc}") from None
    if re_part.shape != (d, d) or im_part.shape != (d, d):
        raise ScenarioError(f"{where}: expected {d}x{d} arrays, got {re_part.shape}/{im_part.shape}")
    return re_part + 1j * im_part


def _require(table: dict, key: str, where: str):
    if key not in table:
        raise ScenarioError(f"{where}: missing key '{key}'")
    return table[key]


def parse_scenario(text: str, source: str = "<string>", allow_large: bool = False,
                   seed: int = 0) -> Scenario:
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ScenarioError(f"{source}: {exc}") from None

    name = str(raw.get("name", Path(source).stem))
    try:
        d = check_dim(_require(raw, "dim", source), allow_large)
    except ValueError as exc:
        raise ScenarioError(f"{source}: dim: {exc}") from None

    h = (_matrix(raw["hamiltonian"], d, f"{source}: hamiltonian")
         if "hamiltonian" in raw else np.zeros((d, d), dtype=complex))
    kraus = [_matrix(k, d, f"{source}: kraus[{i}]") for i, k in enumerate(raw.get("kraus", []))]

    eq = raw.get("equation", "master")
    lam = None
    if isinstance(eq, dict):
        kind = _require(eq, "kind", f"{source}: equation")
        if kind == "semigroup_example":
            lam = float(_require(eq, "lambda", f"{source}: equation"))
        eq = kind
    if eq not in EQUATIONS:
        raise ScenarioError(f"{source}: equation must be one of {EQUATIONS}, got {eq!r}")

    kernel = dict(raw.get("kernel", {"type": "none"}))
    ktype = kernel.get("type", "none")
    if ktype not in KERNEL_TYPES:
        raise ScenarioError(f"{source}: kernel.type must be one of {KERNEL_TYPES}")
    if "channel_kraus" in kernel:
        kernel["channel_kraus"] = [
            _matrix(k, d, f"{source}: kernel.channel_kraus[{i}]")
            for i, k in enumerate(kernel["channel_kraus"])
        ]
    if ktype == "lidar_shabani":
        for key in ("kappa", "gamma"):
            kernel[key] = float(_require(kernel, key, f"{source}: kernel"))
    if ktype == "table":
        for key in ("times", "weights"):
            _require(kernel, key, f"{source}: kernel")

    solver_raw = _require(raw, "solver", source)
    try:
        solver = SolverConfig(
            dt=float(_require(solver_raw, "dt", f"{source}: solver")),
            t_max=float(_require(solver_raw, "t_max", f"{source}: solver")),
            corrector_iterations=int(solver_raw.get("corrector_iterations", 2)),
        )
    except ValueError as exc:
        raise ScenarioError(f"{source}: solver: {exc}") from None

    p_kraus = [_matrix(k, d, f"{source}: modified.p_kraus[{i}]")
               for i, k in enumerate(raw.get("modified", {}).get("p_kraus", []))]
    outputs = dict(raw.get("outputs", {"trajectory": True, "certificate": True}))
    return Scenario(name, d, h, kraus, kernel, eq, solver, outputs, lam, p_kraus, seed)


def load_scenario(path, allow_large: bool = False, seed: int = 0) -> Scenario:
    src = resolve_config(path)
    try:
        text = src.read_text()
    except OSError as exc:
        raise ScenarioError(f"{path}: {exc}") from None
    return parse_scenario(text, str(path), allow_large, seed)


def build_channel(sc: Scenario) -> SuperOperator:
    k = sc.kernel
    if "channel_kraus" in k:
        return SuperOperator.from_kraus(k["channel_kraus"], sc.dim)
    choice = k.get("channel", "dephasing")
    if choice == "dephasing":
        return dephasing_channel(sc.dim)
    if choice == "random_unital":
        return random_unital_channel(sc.dim, int(k.get("rank", 3)), np.random.default_rng(sc.seed))
    raise ScenarioError(f"{sc.name}: unknown kernel.channel {choice!r}")


def build_kernel(sc: Scenario) -> KernelSpec:
    k = sc.kernel
    ktype = k.get("type", "none")
    if ktype == "none":
        return KernelSpec.zero(sc.dim)
    channel = build_channel(sc)
    if ktype == "lidar_shabani":
        try:
            return lidar_shabani(LidarShabaniParams(k["kappa"], k["gamma"], channel))
        except ValueError as exc:
            raise ScenarioError(f"{sc.name}: kernel: {exc}") from None
    # tabulated nonnegative weights times a fixed CP channel, linearly interpolated
    ts = np.asarray(k["times"], dtype=float)
    ws = np.asarray(k["weights"], dtype=float)
    if ts.shape != ws.shape or ts.ndim != 1 or np.any(np.diff(ts) <= 0):
        raise ScenarioError(f"{sc.name}: kernel table needs increasing times matching weights")
    if np.any(ws < 0):
        raise ScenarioError(f"{sc.name}: kernel table weights must be nonnegative")
    cert = certify(channel)
    if not cert.is_cp:
        raise ScenarioError(f"{sc.name}: kernel channel is not CP")
    base = channel.matrix
    family = KernelFamily(
        sc.dim, lambda t: np.interp(t, ts, ws, right=0.0) * base,
        smoothness=k.get("smoothness", "piecewise-continuous"),
    )
    return KernelSpec(family, validate_times=None)


def generator(sc: Scenario) -> SuperOperator:
    try:
        return gksl(GkslSpec(sc.hamiltonian, sc.kraus))
    except ValueError as exc:
        raise ScenarioError(f"{sc.name}: {exc}") from None


@dataclass
class ScenarioRun:
    scenario: Scenario
    trajectory: Trajectory
    generator: SuperOperator
    kernel: Any  # KernelSpec, or the CP family for modified-type equations


def solve_scenario(sc: Scenario) -> ScenarioRun:
    """Dispatch to the solver matching ``sc.equation``."""
    L = generator(sc)
    kernel = build_kernel(sc)
    try:
        if sc.equation == "master":
            traj = solve_master(L, kernel, sc.solver)
            return ScenarioRun(sc, traj, L, kernel)
        if sc.equation == "normalization":
            traj = solve_normalization(L, kernel, sc.solver)
            return ScenarioRun(sc, traj, L, kernel)
        if sc.equation == "modified":
            P = SuperOperator.from_kraus(sc.p_kraus, sc.dim)
            traj = solve_modified(P, kernel.cp_part, sc.solver)
            return ScenarioRun(sc, traj, P, kernel.cp_part)
        traj = solve_semigroup_example(L, sc.lam, sc.solver)
        return ScenarioRun(sc, traj, L, KernelFamily.semigroup(L, sc.lam**2))
    except ValueError as exc:
        raise ScenarioError(f"{sc.name}: {exc}") from None
