"""Scenario-driven runs: JSON config, frame loop, convergence CSVs, OBJ export."""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from qnsim.dynamics import (
    HalfSpace,
    SimState,
    SphereCollider,
    TorusCollider,
    build_system,
)
from qnsim.materials import (
    BUILTIN_NAMES,
    FitInterval,
    MaterialError,
    PDMaterial,
    make_builtin,
)
from qnsim.mesh import SpringNetwork, TetMesh, load_obj_springs, load_tet_mesh, surface_triangles
from qnsim.solvers import (
    ConvergenceRecord,
    SolverConfig,
    SolverError,
    newton_reference,
    relative_error,
    simulate_frame,
)

CSV_HEADER = "frame,iteration,g,rel_error,ls_trials,cum_ms"

MATERIAL_TYPES = BUILTIN_NAMES + ("mass_spring", "arap")


class ScenarioError(Exception):
    """Configuration file does not match the scenario schema."""


def _check_keys(block: dict, allowed, where: str):
    for key in block:
        if key not in allowed:
            raise ScenarioError(f"unknown key {key!r} in {where} (allowed: {sorted(allowed)})")


@dataclass
class FixedGroup:
    indices: np.ndarray
    motion: dict | None = None


@dataclass
class Scenario:
    mesh_spec: dict
    material_spec: dict
    solver: SolverConfig
    frames: int
    h: float
    gravity: tuple
    fixed_specs: list
    colliders: list
    collision_weight: float | None
    anisotropy: dict | None
    perturbation: dict | None
    initial_velocity: tuple
    outputs: dict
    fit_interval: FitInterval
    base_dir: str = "."


def load_scenario(path) -> Scenario:
    """Load and validate a scenario JSON file; unknown keys are rejected."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: invalid JSON: {exc}") from exc
    return parse_scenario(raw, base_dir=os.path.dirname(os.path.abspath(path)))


def parse_scenario(raw: dict, base_dir: str = ".") -> Scenario:
    _check_keys(
        raw,
        {
            "mesh",
            "material",
            "solver",
            "frames",
            "h",
            "gravity",
            "fixed",
            "colliders",
            "collision_weight",
            "anisotropy",
            "perturbation",
            "initial_velocity",
            "outputs",
            "fit_interval",
        },
        "scenario",
    )
    if "mesh" not in raw or "material" not in raw:
        raise ScenarioError("scenario requires 'mesh' and 'material' blocks")

    mesh_spec = dict(raw["mesh"])
    _check_keys(mesh_spec, {"type", "node", "ele", "obj", "density"}, "mesh")
    mesh_type = mesh_spec.get("type", "tet")
    if mesh_type not in ("tet", "cloth"):
        raise ScenarioError(f"mesh type must be 'tet' or 'cloth', got {mesh_type!r}")
    if mesh_type == "tet" and ("node" not in mesh_spec or "ele" not in mesh_spec):
        raise ScenarioError("tet mesh needs 'node' and 'ele' paths")
    if mesh_type == "cloth" and "obj" not in mesh_spec:
        raise ScenarioError("cloth mesh needs an 'obj' path")

    material_spec = dict(raw["material"])
    _check_keys(
        material_spec,
        {"type", "mu", "lambda", "mu1", "mu2", "k", "spline_a", "spline_b", "spline_c"},
        "material",
    )
    mtype = material_spec.get("type")
    if mtype not in MATERIAL_TYPES:
        raise ScenarioError(f"unknown material type {mtype!r}; valid: {sorted(MATERIAL_TYPES)}")

    solver_block = dict(raw.get("solver", {}))
    _check_keys(
        solver_block,
        {
            "kind",
            "iterations",
            "m",
            "gamma",
            "alpha_init",
            "alpha_shrink",
            "rho",
            "S",
            "lbfgs_init",
            "line_search",
        },
        "solver",
    )
    try:
        solver = SolverConfig(**solver_block)
    except SolverError as exc:
        raise ScenarioError(str(exc)) from exc

    fixed_specs = []
    for i, sel in enumerate(raw.get("fixed", [])):
        _check_keys(sel, {"box", "indices", "motion"}, f"fixed[{i}]")
        motion = sel.get("motion")
        if motion is not None:
            mtype_ = motion.get("type")
            if mtype_ == "twist":
                _check_keys(motion, {"type", "axis", "center", "degrees_per_second"}, "motion")
            elif mtype_ == "oscillate":
                _check_keys(motion, {"type", "axis", "amplitude", "frequency"}, "motion")
            else:
                raise ScenarioError(f"unknown motion type {mtype_!r} (twist | oscillate)")
        fixed_specs.append(sel)

    colliders = []
    for i, col in enumerate(raw.get("colliders", [])):
        ctype = col.get("type")
        if ctype == "halfspace":
            _check_keys(col, {"type", "point", "normal"}, f"colliders[{i}]")
            colliders.append(HalfSpace(col["point"], col["normal"]))
        elif ctype == "sphere":
            _check_keys(col, {"type", "center", "radius"}, f"colliders[{i}]")
            colliders.append(SphereCollider(col["center"], col["radius"]))
        elif ctype == "torus":
            _check_keys(col, {"type", "center", "major_radius", "minor_radius"}, f"colliders[{i}]")
            colliders.append(TorusCollider(col["center"], col["major_radius"], col["minor_radius"]))
        else:
            raise ScenarioError(f"unknown collider type {ctype!r} (halfspace | sphere | torus)")

    aniso = raw.get("anisotropy")
    if aniso is not None:
        _check_keys(aniso, {"direction", "kappa"}, "anisotropy")

    pert = raw.get("perturbation")
    if pert is not None:
        _check_keys(pert, {"seed", "magnitude"}, "perturbation")

    outputs = dict(raw.get("outputs", {}))
    _check_keys(outputs, {"csv", "obj_dir", "record_frames"}, "outputs")

    iv = raw.get("fit_interval", [0.5, 1.5])
    try:
        fit_interval = FitInterval(float(iv[0]), float(iv[1]))
    except (MaterialError, IndexError, TypeError) as exc:
        raise ScenarioError(f"bad fit_interval {iv!r}: {exc}") from exc

    return Scenario(
        mesh_spec=mesh_spec,
        material_spec=material_spec,
        solver=solver,
        frames=int(raw.get("frames", 1)),
        h=float(raw.get("h", 1.0 / 30.0)),
        gravity=tuple(raw.get("gravity", (0.0, 0.0, -9.8))),
        fixed_specs=fixed_specs,
        colliders=colliders,
        collision_weight=raw.get("collision_weight"),
        anisotropy=aniso,
        perturbation=pert,
        initial_velocity=tuple(raw.get("initial_velocity", (0.0, 0.0, 0.0))),
        outputs=outputs,
        fit_interval=fit_interval,
        base_dir=base_dir,
    )


def _resolve(base_dir, path):
    return path if os.path.isabs(path) else os.path.join(base_dir, path)


def _load_mesh(scn: Scenario):
    spec = scn.mesh_spec
    density = float(spec.get("density", 1000.0))
    if spec.get("type", "tet") == "tet":
        return load_tet_mesh(
            _resolve(scn.base_dir, spec["node"]), _resolve(scn.base_dir, spec["ele"]), density
        )
    return load_obj_springs(_resolve(scn.base_dir, spec["obj"]), density)


def _make_material(spec: dict):
    mtype = spec["type"]
    params = {k: v for k, v in spec.items() if k != "type"}
    if mtype in ("mass_spring", "arap"):
        if "k" not in params:
            raise ScenarioError(f"material {mtype!r} requires stiffness 'k'")
        return PDMaterial(kind=mtype, k=float(params["k"]))
    return make_builtin(mtype, params)


def _resolve_fixed(scn: Scenario, vertices: np.ndarray):
    groups = []
    for sel in scn.fixed_specs:
        if "indices" in sel:
            idx = np.asarray(sel["indices"], dtype=np.int64)
        else:
            lo, hi = np.asarray(sel["box"][0]), np.asarray(sel["box"][1])
            inside = np.all((vertices >= lo) & (vertices <= hi), axis=1)
            idx = np.nonzero(inside)[0]
        groups.append(FixedGroup(indices=idx, motion=sel.get("motion")))
    return groups


def _motion_positions(group: FixedGroup, rest: np.ndarray, t: float) -> np.ndarray:
    pos = rest[group.indices].copy()
    m = group.motion
    if m is None:
        return pos
    if m["type"] == "twist":
        axis = np.asarray(m["axis"], dtype=np.float64)
        axis = axis / np.linalg.norm(axis)
        center = np.asarray(m.get("center", rest[group.indices].mean(axis=0)), dtype=np.float64)
        angle = np.deg2rad(m["degrees_per_second"]) * t
        K = np.array(
            [[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]]
        )
        R = np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * (K @ K)
        return (pos - center) @ R.T + center
    if m["type"] == "oscillate":
        axis = np.asarray(m["axis"], dtype=np.float64)
        amp = float(m["amplitude"])
        freq = float(m["frequency"])
        return pos + amp * np.sin(2.0 * np.pi * freq * t) * axis
    raise ScenarioError(f"unknown motion type {m['type']!r}")


@dataclass
class BenchmarkReport:
    records: list = field(default_factory=list)  # per-frame ConvergenceRecord
    states: list = field(default_factory=list)  # per-frame (n,3) positions
    avg_ls_trials: float = 0.0
    frame_ms: list = field(default_factory=list)
    final_rel_errors: dict = field(default_factory=dict)  # frame -> last rel error


class SimulationRun:
    """Frame-stepping driver built from a Scenario; reusable by tests."""

    def __init__(self, scn: Scenario, seed: int | None = None):
        self.scn = scn
        mesh = _load_mesh(scn)
        material = _make_material(scn.material_spec)
        self.fixed_groups = _resolve_fixed(scn, mesh.vertices)
        fixed = np.concatenate([g.indices for g in self.fixed_groups]) if self.fixed_groups else []

        aniso = None
        if scn.anisotropy is not None:
            if not isinstance(mesh, TetMesh):
                raise ScenarioError("anisotropy applies to tet meshes only")
            d = scn.anisotropy["direction"]
            kappa = float(scn.anisotropy["kappa"])
            aniso = [(e, d, kappa) for e in range(mesh.tets.shape[0])]

        self.system = build_system(
            mesh,
            material,
            h=scn.h,
            gravity=scn.gravity,
            fixed=fixed,
            aniso=aniso,
            colliders=scn.colliders,
            collision_weight=scn.collision_weight,
            fit_interval=scn.fit_interval,
        )

        q = mesh.vertices.copy()
        pert = scn.perturbation
        if pert is not None:
            use_seed = seed if seed is not None else int(pert.get("seed", 0))
            rng = np.random.default_rng(use_seed)
            mag = float(pert["magnitude"])
            disp = rng.uniform(-mag, mag, size=q.shape)
            disp[self.system.fixed] = 0.0
            q = q + disp
        v0 = np.asarray(scn.initial_velocity, dtype=np.float64)
        self.state = SimState(q_l=q, q_prev=q - v0 * scn.h)
        self.frame = 0

    def fixed_targets(self, frame_index: int):
        """Prescribed fixed-vertex positions at the end of the given frame."""
        if not self.fixed_groups:
            return None
        t = (frame_index + 1) * self.scn.h
        rest = self.system.mesh.vertices
        parts = {
            int(i): None for i in self.system.fixed
        }
        for grp in self.fixed_groups:
            pos = _motion_positions(grp, rest, t)
            for local, v in enumerate(grp.indices):
                parts[int(v)] = pos[local]
        return np.array([parts[int(i)] for i in self.system.fixed])

    def step(self, config: SolverConfig | None = None):
        config = config or self.scn.solver
        targets = self.fixed_targets(self.frame)
        self.state, rec = simulate_frame(self.system, self.state, config, fixed_targets=targets)
        self.frame += 1
        return rec


def run(scn: Scenario, out_dir: str | None = None, seed: int | None = None) -> BenchmarkReport:
    """Simulate all frames; computes normalized objective errors on recorded
    frames (reference solution from the Newton baseline) and writes outputs."""
    sim = SimulationRun(scn, seed=seed)
    record_frames = set(scn.outputs.get("record_frames", []))
    report = BenchmarkReport()

    for frame in range(scn.frames):
        g_star = None
        if frame in record_frames:
            targets = sim.fixed_targets(frame)
            _, g_star = newton_reference(sim.system, sim.state, fixed_targets=targets)
        t0 = time.perf_counter()
        rec = sim.step()
        report.frame_ms.append(1000.0 * (time.perf_counter() - t0))
        if g_star is not None:
            rec.rel_error = [relative_error(g, rec.g0, g_star) for g in rec.g]
            report.final_rel_errors[frame] = rec.rel_error[-1]
        report.records.append(rec)
        report.states.append(sim.state.q_l.copy())
        if not np.all(np.isfinite(sim.state.q_l)):
            raise SolverError(f"frame {frame}: simulation diverged (non-finite state)")

    trials = [t for rec in report.records for t in rec.ls_trials if t > 0]
    report.avg_ls_trials = float(np.mean(trials)) if trials else 0.0

    out_base = out_dir if out_dir is not None else scn.base_dir
    csv_path = scn.outputs.get("csv")
    if csv_path:
        write_csv(_resolve(out_base, csv_path), report)
    obj_dir = scn.outputs.get("obj_dir")
    if obj_dir:
        export_frames(report.states, _resolve(out_base, obj_dir), _mesh_faces(sim.system.mesh))
    return report


def write_csv(path, report: BenchmarkReport):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        fh.write(CSV_HEADER + "\n")
        for frame, rec in enumerate(report.records):
            for it, g in enumerate(rec.g):
                rel = f"{rec.rel_error[it]:.17g}" if rec.rel_error else ""
                fh.write(
                    f"{frame},{it + 1},{g:.17g},{rel},{rec.ls_trials[it]},{rec.cum_ms[it]:.3f}\n"
                )


def _mesh_faces(mesh):
    if isinstance(mesh, SpringNetwork):
        return mesh.faces
    return surface_triangles(mesh)


def export_frames(states, directory, faces):
    """One OBJ per frame: frame_0000.obj, frame_0001.obj, ..."""
    os.makedirs(directory, exist_ok=True)
    paths = []
    for i, x in enumerate(states):
        path = os.path.join(directory, f"frame_{i:04d}.obj")
        with open(path, "w") as fh:
            for vx, vy, vz in x:
                fh.write(f"v {vx:.12g} {vy:.12g} {vz:.12g}\n")
            for a, b, c in faces:
                fh.write(f"f {a + 1} {b + 1} {c + 1}\n")
        paths.append(path)
    return paths


def calibrate_rho(rel_errors, S: int = 10) -> float:
    """Spectral-radius estimate from the error decay of a base-method run.

    The per-iteration error factor of the underlying fixed-point iteration is
    roughly rho^2 in objective error, hence the square root."""
    e = [max(x, 1e-16) for x in rel_errors]
    j = min(S, len(e) - 1)
    k = len(e) - 1
    if k <= j or e[j] <= 1e-15:
        return 0.9
    ratio = (e[k] / e[j]) ** (1.0 / (k - j))
    ratio = min(max(ratio, 0.0), 0.9999)
    return float(np.sqrt(ratio))


def compare_solvers(scn: Scenario, frames_to_record, iterations: int, kinds=("pd_qn", "chebyshev", "lbfgs")):
    """Run several solver kinds from identical frame states.

    The scenario's own solver advances the simulation; at each recorded frame
    every requested kind is run for `iterations` iterations from a copy of the
    state, against the same Newton reference solution.  Chebyshev's rho is
    calibrated per frame from the base method's error decay.  Returns a list
    of dicts: frame -> kind -> list of relative errors per iteration."""
    sim = SimulationRun(scn)
    record = set(frames_to_record)
    results = []
    for frame in range(scn.frames):
        if frame in record:
            targets = sim.fixed_targets(frame)
            _, g_star = newton_reference(sim.system, sim.state, fixed_targets=targets)
            entry = {"frame": frame}
            base_errors = None
            for kind in kinds:
                cfg_kwargs = dict(kind=kind, iterations=iterations)
                if kind == "chebyshev" and base_errors is not None:
                    cfg_kwargs["rho"] = calibrate_rho(base_errors)
                cfg = SolverConfig(**cfg_kwargs)
                _, rec = simulate_frame(
                    sim.system, sim.state.copy(), cfg, fixed_targets=targets
                )
                errors = [relative_error(g, rec.g0, g_star) for g in rec.g]
                entry[kind] = errors
                if kind == "pd_qn":
                    base_errors = errors
            # one Newton iteration as the per-frame accuracy yardstick
            _, rec_n = simulate_frame(
                sim.system, sim.state.copy(), SolverConfig(kind="newton", iterations=1),
                fixed_targets=targets,
            )
            entry["newton1"] = [relative_error(g, rec_n.g0, g_star) for g in rec_n.g]
            results.append(entry)
        sim.step()
    return results
