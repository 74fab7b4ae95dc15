"""
Batch experiment runner.

A run validates one JSON configuration, executes the named experiment,
writes CSV/JSON artifacts into an output directory and records a
``manifest.json`` from which the run can be replayed.
"""

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Mapping, Sequence

from cryptography.hazmat.primitives import hashes

from . import __version__
from .dirichlet import (
    DirichletInstance,
    improvability_profile,
    is_improvable_at,
    scan_di,
    scan_dimp0,
    solve_dirichlet,
)
from .exceptions import InvalidInputError, SAdicError
from .good_measures import (
    besicovitch_constant,
    certify_good,
    check_nonplanar,
    combination_family,
    estimate_rho_v,
    federer_constant,
    sample_ball,
)
from .lattice_dynamics import (
    SLatticeBasis,
    check_correspondence,
    correspondence_threshold,
    delta_lattice,
    enumerate_primitive_submodules,
)
from .nondivergence import FlowFamily, QNConfig, di_measure_scan, prop_constants, qn_empirical_check
from .parallel import ordered_map
from .serializers import validate_config

logger = logging.getLogger(__name__)

CERTIFICATION_EPS_GRID = [0.01, 0.05, 0.1, 0.25, 0.5]


def canonical_json(payload) -> bytes:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str).encode("utf-8")


def sha256_hex(data: bytes) -> str:
    digest = hashes.Hash(hashes.SHA256())
    digest.update(data)
    return digest.finalize().hex()


def config_hash(config: Mapping) -> str:
    """SHA-256 of the canonical JSON form of a configuration."""
    return sha256_hex(canonical_json(config))


def _cell(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(out: Path, name: str, columns: Sequence[tuple], rows: Sequence[Mapping]) -> list[str]:
    """``<name>.csv`` plus its ``<name>.columns.json`` column contract."""
    path = out / f"{name}.csv"
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([c for c, _ in columns])
        for row in rows:
            writer.writerow([_cell(row[c]) for c, _ in columns])
    sidecar = out / f"{name}.columns.json"
    contract = {"file": path.name, "columns": [{"name": c, "description": d} for c, d in columns]}
    sidecar.write_text(json.dumps(contract, indent=2) + "\n", encoding="utf-8")
    logger.debug(f"Wrote {len(rows)} rows to {path}")
    return [path.name, sidecar.name]


def write_json(out: Path, name: str, payload) -> list[str]:
    path = out / f"{name}.json"
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
    return [path.name]


@dataclass
class RunManifest:
    run_id: str
    experiment: str
    config_hash: str
    seed: int
    version: str
    started_at: str
    finished_at: str = ""
    artifacts: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return asdict(self)

    def write(self, out: Path) -> Path:
        path = out / "manifest.json"
        path.write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path) -> "RunManifest":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
            return cls(**data)
        except (OSError, ValueError, TypeError) as e:
            raise InvalidInputError(f"cannot read manifest {path}: {e}")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _digest_artifacts(out: Path, names: Sequence[str]) -> list[dict]:
    return [{"name": n, "sha256": sha256_hex((out / n).read_bytes())} for n in names]


def _require(data: Mapping, *keys: str):
    missing = [k for k in keys if data.get(k) is None]
    if missing:
        raise InvalidInputError(f"experiment '{data['experiment']}' needs {', '.join(missing)}")


def _instance(data: Mapping) -> DirichletInstance:
    _require(data, "t")
    return DirichletInstance(data["A"], data["t"], data["cfg"])


SCAN_COLUMNS = [
    ("t_index", "position in the ray schedule"),
    ("place", "place v of S the ray components belong to"),
    ("t_components", "t_v^(1..m+n) joined by ';'"),
    ("t_norm", "||t||_inf"),
    ("included", "ray point lies past the horizon t0"),
    ("improvable", "the eps-tightened system has a solution"),
    ("witness_x", "witness x as JSON coordinate lists, empty when none"),
    ("witness_y", "witness y as JSON coordinate lists, empty when none"),
    ("residual_content", "largest row residual content of the witness, empty when none"),
]


def _compact(value) -> str:
    return json.dumps(value, separators=(",", ":"), default=str)


def _scan_rows(result) -> list[dict]:
    rows = []
    for r in result.rows:
        components = r.t.to_json()
        witness = r.witness.to_json() if r.witness is not None else None
        for v in r.t.cfg.S:
            rows.append(
                {
                    "t_index": r.t_index,
                    "place": v.label,
                    "t_components": ";".join(components[v.label]),
                    "t_norm": r.t.norm_inf,
                    "included": r.included,
                    "improvable": r.improvable,
                    "witness_x": _compact(witness["x"]) if witness else "",
                    "witness_y": _compact(witness["y"]) if witness else "",
                    "residual_content": r.witness.residual_content if witness else "",
                }
            )
    return rows


def dirichlet_solve(data: Mapping, out: Path) -> list[str]:
    inst = _instance(data)
    solution = solve_dirichlet(inst, data.get("cap"))
    return write_json(out, "solution", {"t": inst.t.to_json(), "solution": solution.to_json()})


def dirichlet_improvable(data: Mapping, out: Path) -> list[str]:
    _require(data, "eps")
    inst = _instance(data)
    witness = is_improvable_at(inst, data["eps"], data.get("cap"))
    payload = {
        "t": inst.t.to_json(),
        "epsilon": repr(data["eps"]),
        "improvable": witness is not None,
        "witness": witness.to_json() if witness else None,
    }
    return write_json(out, "improvable", payload)


def di_scan(data: Mapping, out: Path) -> list[str]:
    _require(data, "schedule")
    cfg = data["cfg"]
    if data.get("eps_grid"):
        profile = improvability_profile(
            data["A"], cfg, data["schedule"], data["eps_grid"], data["t0"], data.get("workers"), data.get("cap")
        )
        payload = {
            "verdicts": {repr(e): ok for e, ok in profile["verdicts"].items()},
            "smallest": profile["smallest"],
        }
        return write_json(out, "profile", payload)
    _require(data, "eps")
    result = scan_di(data["A"], cfg, data["schedule"], data["eps"], data["t0"], data.get("workers"), data.get("cap"))
    artifacts = write_csv(out, "di_scan", SCAN_COLUMNS, _scan_rows(result))
    summary = {"epsilon": repr(result.eps), "t0": repr(result.t0), "aggregate": result.aggregate}
    artifacts += write_json(out, "di_scan_summary", summary)
    return artifacts


def di_scan_grid(data: Mapping, out: Path) -> list[str]:
    _require(data, "grid", "eps", "M")
    result = scan_dimp0(
        data["A"], data["cfg"], data["eps"], data["M"], data["grid"], data.get("workers"), data.get("cap")
    )
    artifacts = write_csv(out, "di_scan_grid", SCAN_COLUMNS, _scan_rows(result))
    summary = {"epsilon": repr(result.eps), "M": repr(result.t0), "aggregate": result.aggregate}
    artifacts += write_json(out, "di_scan_grid_summary", summary)
    return artifacts


LATTICE_COLUMNS = [
    ("instance_id", "first 12 hex digits of the SHA-256 of the instance (A, t)"),
    ("epsilon", "eps, empty when none was given"),
    ("threshold", "(m+n)^(|S_r|/2+|S_c|) eps, empty without eps"),
    ("min_content", "smallest content found, empty when no point was found"),
    ("box", "searched coordinate box as JSON, empty for a witness-built point"),
    ("verdict", "strict | boundary | violated | not_improvable | below_threshold | above_threshold"),
]


def instance_id(inst: DirichletInstance) -> str:
    payload = {"A": {v.label: rows for v, rows in inst.A.items()}, "t": inst.t.to_json()}
    return sha256_hex(canonical_json(payload))[:12]


def lattice_delta(data: Mapping, out: Path) -> list[str]:
    inst = _instance(data)
    result = delta_lattice(SLatticeBasis.from_instance(inst), cap=data.get("cap"))
    eps = data.get("eps")
    row = {
        "instance_id": instance_id(inst),
        "epsilon": eps if eps is not None else "",
        "threshold": "",
        "min_content": result.value if result.witness is not None else "",
        "box": _compact(result.box),
        "verdict": "",
    }
    if eps is not None:
        threshold = correspondence_threshold(inst.cfg, inst.m + inst.n, eps)
        row["threshold"] = threshold
        row["verdict"] = "below_threshold" if result.value < threshold else "above_threshold"
    artifacts = write_csv(out, "delta", LATTICE_COLUMNS, [row])
    artifacts += write_json(out, "delta", {"t": inst.t.to_json(), **result.to_json()})
    return artifacts


def lattice_correspond(data: Mapping, out: Path) -> list[str]:
    _require(data, "eps")
    inst = _instance(data)
    report = check_correspondence(inst, data["eps"], data.get("cap"))
    row = {
        "instance_id": instance_id(inst),
        "epsilon": report.eps,
        "threshold": report.threshold,
        "min_content": report.content if report.point else "",
        "box": "",
        "verdict": report.verdict,
    }
    artifacts = write_csv(out, "correspondence", LATTICE_COLUMNS, [row])
    artifacts += write_json(out, "correspondence", report.to_json())
    return artifacts


TRAJECTORY_COLUMNS = [
    ("t_index", "position in the ray schedule"),
    ("t_norm", "||t||_inf"),
    ("delta_upper_bound", "smallest content found in the search region"),
    ("threshold", "(m+n)^(|S_r|/2+|S_c|) eps"),
    ("below_threshold", "delta_upper_bound < threshold"),
]


def _trajectory_item(payload) -> float:
    inst, cap = payload
    return delta_lattice(SLatticeBasis.from_instance(inst), cap=cap).value


def trajectory(A, cfg, eps: float, schedule, out: Path, workers=None, cap=None) -> list[str]:
    """Shortest content along the flow next to the improvability threshold, one row per ray point."""
    if not schedule:
        raise InvalidInputError("empty ray schedule")
    if not 0 < eps <= 1:
        raise InvalidInputError(f"epsilon must lie in (0, 1], got {eps}")
    instances = [DirichletInstance(A, t, cfg) for t in schedule]
    threshold = correspondence_threshold(cfg, instances[0].m + instances[0].n, eps)
    deltas = ordered_map(_trajectory_item, [(inst, cap) for inst in instances], workers)
    rows = [
        {
            "t_index": k,
            "t_norm": t.norm_inf,
            "delta_upper_bound": float(d),
            "threshold": threshold,
            "below_threshold": d < threshold,
        }
        for k, (t, d) in enumerate(zip(schedule, deltas))
    ]
    return write_csv(out, "trajectory", TRAJECTORY_COLUMNS, rows)


def delta_trajectory(data: Mapping, out: Path) -> list[str]:
    _require(data, "schedule", "eps")
    return trajectory(data["A"], data["cfg"], data["eps"], data["schedule"], out, data.get("workers"), data.get("cap"))


GOOD_COLUMNS = [
    ("ball_id", "index of the ball"),
    ("function_id", "index of the linear combination"),
    ("epsilon", "sublevel threshold"),
    ("fraction", "empirical measure of {|f| < eps} relative to the ball"),
    ("stderr", "binomial standard error of the fraction"),
    ("norm", "sup estimate of |f| on the ball"),
    ("bound", "C (eps / norm)^alpha"),
    ("margin", "bound + 3 stderr - fraction"),
    ("pass", "margin >= 0"),
]


def _families(data: Mapping) -> list:
    fmap, cfg = data["map"], data["cfg"]
    functions = []
    for k, v in enumerate(cfg.S):
        functions += combination_family(fmap, v, data["family_size"], data["seed"] + k)
    return functions


def good_certify(data: Mapping, out: Path) -> list[str]:
    cert = certify_good(
        _families(data), data["balls"], data["C"], data["alpha"], data["eps_grid"], data["N"], data["seed"]
    )
    artifacts = write_csv(out, "good_cert", GOOD_COLUMNS, cert.rows())
    summary = {
        "C": repr(cert.C),
        "alpha": repr(cert.alpha),
        "passed": cert.passed,
        "N": cert.N,
        "seed": cert.seed,
        "federer": [repr(float(federer_constant(spec))) for spec in data["balls"]],
    }
    return artifacts + write_json(out, "good_cert_summary", summary)


def _rho_v(data: Mapping) -> list[float]:
    if data.get("rho_v"):
        return list(data["rho_v"])
    ball, fmap = data["ball"], data["map"]
    return [
        estimate_rho_v(fmap, v, ball.ball(v), data["N"], data["net_size"], data["seed"], data["conservative"])
        for v in data["cfg"].S
    ]


def good_rho(data: Mapping, out: Path) -> list[str]:
    ball, fmap = data["ball"], data["map"]
    samples = sample_ball(ball, data["N"], data["seed"])
    evidence = {}
    for v in data["cfg"].S:
        ev = check_nonplanar(fmap, v, samples)
        evidence[v.label] = {
            "nonplanar": ev.nonplanar,
            "rank": ev.rank,
            "singular_values": [repr(s) for s in ev.singular_values],
        }
    rho = _rho_v(data)
    payload = {"rho_v": {v.label: repr(r) for v, r in zip(data["cfg"].S, rho)}, "nonplanarity": evidence}
    return write_json(out, "rho", payload)


def _measure_constants(data: Mapping):
    ball = data["ball"]
    D = data.get("D") or float(federer_constant(ball))
    N_X = data.get("N_X") or besicovitch_constant(ball)
    constants = prop_constants(data["map"].n, data["C"], data["alpha"], D, N_X, data["cfg"].K, _rho_v(data))
    return D, N_X, constants


def _constants_block(data: Mapping, D, N_X, constants) -> dict:
    return {**constants.to_json(), "C": repr(data["C"]), "alpha": repr(data["alpha"]), "D": repr(D), "N_X": repr(N_X)}


def nondiv_constants(data: Mapping, out: Path) -> list[str]:
    constants = prop_constants(
        data["n"], data["C"], data["alpha"], data["D"], data["N_X"], data["cfg"].K, data["rho_v"], data["j"]
    )
    return write_json(out, "constants", constants.to_json())


NONDIV_COLUMNS = [
    ("epsilon", "grid epsilon"),
    ("lhs", "empirical measure of {delta(h(x) O_S^m) < eps}"),
    ("stderr", "binomial standard error of lhs"),
    ("rhs", "m C (N_X D^2)^m (eps sqrt(D_K) / rho)^alpha"),
    ("pass", "lhs - 3 stderr <= rhs"),
]


def nondiv_check(data: Mapping, out: Path) -> list[str]:
    _require(data, "t")
    cfg, fmap, ball = data["cfg"], data["map"], data["ball"]
    n = fmap.n
    D, N_X, constants = _measure_constants(data)
    cert = certify_good(
        _families(data), [ball], data["C"], data["alpha"], CERTIFICATION_EPS_GRID, data["N"], data["seed"]
    )
    eps_cap = constants.rho / math.sqrt(abs(cfg.K.discriminant))
    eps_grid = data.get("eps_grid") or [eps_cap * f for f in (1.0, 0.5, 0.25, 0.1, 0.05)]
    qcfg = QNConfig(
        n + 1, data["C"], data["alpha"], N_X, D, cfg.K.discriminant, constants.rho, eps_grid, data["N"], data["seed"]
    )
    deltas = []
    for j in range(1, n + 2):
        deltas += enumerate_primitive_submodules(cfg, n + 1, j, data["height"], data.get("cap"))
    report = qn_empirical_check(
        FlowFamily(cfg, data["t"], fmap),
        ball,
        deltas,
        qcfg,
        truncation_height=data["height"],
        good_cert=cert,
        workers=data.get("workers"),
        cap=data.get("cap"),
    )
    artifacts = write_csv(out, "nondiv_check", NONDIV_COLUMNS, report.csv_rows())
    artifacts += write_json(out, "constants", _constants_block(data, D, N_X, constants))
    artifacts += write_json(out, "nondiv_report", report.to_json())
    return artifacts


DISCAN_COLUMNS = [
    ("t_index", "position in the ray schedule"),
    ("t_norm", "||t||_inf"),
    ("included", "ray point lies past the horizon t0"),
    ("lhs", "empirical measure of flow points with delta below (n+1)^(|S_r|/2+|S_c|) eps"),
    ("stderr", "binomial standard error of lhs"),
    ("rhs", "C~ eps^alpha"),
    ("pass", "lhs - 3 stderr <= rhs"),
]


def nondiv_discan(data: Mapping, out: Path) -> list[str]:
    _require(data, "schedule")
    D, N_X, constants = _measure_constants(data)
    eps = data.get("eps") or constants.eps0 / 2
    result = di_measure_scan(
        data["map"],
        data["ball"],
        eps,
        data["schedule"],
        constants,
        data["alpha"],
        data["N"],
        data["seed"],
        data["t0"],
        data.get("workers"),
        data.get("cap"),
    )
    artifacts = write_csv(out, "nondiv_discan", DISCAN_COLUMNS, result.csv_rows())
    block = {**_constants_block(data, D, N_X, constants), "epsilon": repr(eps), "threshold": repr(result.threshold)}
    return artifacts + write_json(out, "constants", block)


EXPERIMENTS: dict[str, Callable[[Mapping, Path], list[str]]] = {
    "dirichlet-solve": dirichlet_solve,
    "dirichlet-improvable": dirichlet_improvable,
    "di-scan": di_scan,
    "di-scan-grid": di_scan_grid,
    "lattice-delta": lattice_delta,
    "lattice-correspond": lattice_correspond,
    "delta-trajectory": delta_trajectory,
    "good-certify": good_certify,
    "good-rho": good_rho,
    "nondiv-check": nondiv_check,
    "nondiv-constants": nondiv_constants,
    "nondiv-discan": nondiv_discan,
}


def load_config(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise InvalidInputError(f"cannot read config {path}: {e}")
    except ValueError as e:
        raise InvalidInputError(f"config {path} is not valid JSON: {e}")


def run(config, out, overrides: Mapping | None = None) -> RunManifest:
    """Validate ``config`` (a path or a mapping), run its experiment into ``out`` and write the manifest."""
    raw = dict(load_config(config) if isinstance(config, (str, Path)) else config)
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    data = validate_config(raw)
    name = data["experiment"]
    digest = config_hash(raw)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)

    manifest = RunManifest(
        run_id=f"{digest[:12]}-{data['seed']}",
        experiment=name,
        config_hash=digest,
        seed=data["seed"],
        version=__version__,
        started_at=_now(),
        config=raw,
    )
    logger.info(f"Starting {name} run {manifest.run_id}")
    try:
        names = EXPERIMENTS[name](data, out)
    except SAdicError as e:
        logger.error(f"❌ {name} failed: {e}")
        raise
    manifest.artifacts = _digest_artifacts(out, names)
    manifest.finished_at = _now()
    manifest.write(out)
    logger.info(f"✅ {name} finished: {len(names)} artifacts in {out}")
    return manifest


def replay(manifest_path, out) -> RunManifest:
    """Re-run a recorded configuration and compare the CSV bodies with the recorded digests."""
    recorded = RunManifest.load(manifest_path)
    manifest = run(recorded.config, out)
    before = {a["name"]: a["sha256"] for a in recorded.artifacts if a["name"].endswith(".csv")}
    after = {a["name"]: a["sha256"] for a in manifest.artifacts if a["name"].endswith(".csv")}
    differing = sorted(n for n in before if before[n] != after.get(n))
    if differing:
        logger.error(f"❌ Replay of {recorded.run_id} differs in {differing}")
        raise SAdicError(f"replayed artifacts differ from the manifest: {', '.join(differing)}")
    return manifest
