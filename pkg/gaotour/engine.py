"""Pipeline orchestration: configuration, logging, stages, artifacts and verification."""

import json
import logging
import os
from contextlib import contextmanager
from fractions import Fraction
from pathlib import Path
from typing import Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator

from gaotour.analysis import (
    bound_report, check_benefit_inequality, half_lp_in_polyhedron, leftover_problems, tree_certificates,
)
from gaotour.cuts import narrow_cuts
from gaotour.decompose import (
    combination_errors, decompose, default_epsilon, exact_ensemble, round_distribution,
)
from gaotour.instance import brute_force_opt, dump_instance, parse_instance
from gaotour.lp import check_feasible, cut_value, dump_solution, load_solution, solve_relaxation
from gaotour.models import (
    AnalysisParams, ExchangeTrace, FractionalSolution, NarrowCutChain, RoundedEnsemble, SolverError,
    StructureViolation, TreeDistribution, fraction_str, to_fraction, tree_key,
)
from gaotour.parity import correct_trees
from gaotour.reassembly import is_global_gao_tree, reassemble, replay_trace, theta_profile, verify_structure

logger = logging.getLogger(__name__)

CACHE_ENV = "GAOTOUR_CACHE_DIR"
ARTIFACTS = ("instance.json", "lp.json", "cuts.json", "distribution.json", "rounded.json",
             "reassembled.json", "trace.jsonl", "report.json")


class RunConfig(BaseModel):
    """Validated run settings: config.yaml defaults plus command-line overrides."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    epsilon: Optional[Union[Fraction, float, str]] = None
    exact: bool = False
    target_r: int = Field(100000, gt=0)
    max_exact_r: int = Field(200000, gt=0)
    max_brute_n: int = Field(12, gt=0)
    max_matching_t: int = Field(22, gt=0)
    separation_exhaustive_n: int = Field(15, gt=0)
    narrow_cut_exhaustive_n: int = Field(20, gt=0)
    polyhedron_exhaustive_n: int = Field(12, gt=0)
    lp_max_rounds: int = Field(200, gt=0)
    float_tolerance: float = Field(1e-9, gt=0)
    boundary_margin: float = Field(1e-7, ge=0)
    parity_workers: int = Field(1, gt=0)
    brute_force: bool = True
    report_dir: str = "./reports"
    log_level: str = "INFO"
    log_file: str = "gaotour.log"

    @field_validator("epsilon", mode="before")
    @classmethod
    def _exact_epsilon(cls, value):
        if value is None:
            return None
        # 0.01 in YAML means 1/100, not the nearest binary float
        value = to_fraction(repr(value) if isinstance(value, float) else value)
        if value < 0:
            raise ValueError(f"epsilon must be nonnegative, got {value}")
        return value


def load_config(path="config.yaml", **overrides):
    """RunConfig from the YAML sections, the cache env var and non-None overrides."""
    raw = {}
    if path and Path(path).exists():
        with open(path, "r") as f:
            raw = yaml.safe_load(f) or {}
    values = dict(raw.get("solver") or {})
    if "report_dir" in (raw.get("paths") or {}):
        values["report_dir"] = raw["paths"]["report_dir"]
    if raw.get("logging"):
        values["log_level"] = raw["logging"].get("level", "INFO")
        values["log_file"] = raw["logging"].get("file", "gaotour.log")
    if os.environ.get(CACHE_ENV):
        values["report_dir"] = os.environ[CACHE_ENV]
    values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**values)


def setup_logging(config):
    logging.basicConfig(
        level=getattr(logging, config.log_level),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(config.log_file),
            logging.StreamHandler()
        ]
    )


@contextmanager
def stage(name):
    """Tag any failure inside the block with the stage name."""
    try:
        yield
    except SolverError as e:
        if e.stage is None:
            e.stage = name
        logger.error(f"Stage {e.stage} failed: {e}")
        raise
    except (ValueError, ArithmeticError, KeyError) as e:
        logger.error(f"Stage {name} failed: {e}")
        raise SolverError(str(e), stage=name) from e


def _write(directory, name, text):
    path = Path(directory) / name
    path.write_text(text)
    return path


def _json(data):
    return json.dumps(data, sort_keys=True, indent=2) + "\n"


class SolverEngine:
    """Runs parse -> LP -> cuts -> decompose -> round -> reassemble -> parity -> analysis."""

    def __init__(self, config=None):
        self.config = config or RunConfig()
        self.logger = logging.getLogger(__name__)

    def accept_solution(self, inst, solution):
        """Exact feasibility check of a stored LP point; its value is recomputed from the instance costs."""
        if solution.n != inst.n:
            raise SolverError(f"LP point is for n={solution.n}, instance has n={inst.n}", stage="lp")
        x = {e: to_fraction(val) for e, val in solution.x.items()}
        if any(val < 0 for val in x.values()):
            raise SolverError("LP point has negative entries", stage="lp")
        if sum(x.values(), Fraction(0)) != inst.n - 1:
            raise SolverError(f"LP point has x(E) = {sum(x.values(), Fraction(0))}, expected {inst.n - 1}",
                              stage="lp")
        report = check_feasible(x, inst, 0, exhaustive_n=self.config.separation_exhaustive_n)
        if not report.feasible:
            raise SolverError(f"LP point is infeasible (worst violation {report.worst})", stage="lp",
                              payload=report.dict())
        value = inst.vector_cost(x)
        self.logger.info(f"Using supplied LP point: value {value} ({float(value):.6f}), support {len(x)} edges")
        return FractionalSolution(inst.n, x, value, exact=True)

    def solve(self, inst, artifact_dir=None, solution=None):
        """Runs every stage; a supplied LP point replaces the LP solve once it checks out as feasible."""
        cfg = self.config
        n = inst.n
        self.logger.info(f"Solving {inst.name}: n={n}, s={inst.s}, t={inst.t}")

        supplied = solution is not None
        with stage("lp"):
            if supplied:
                solution = self.accept_solution(inst, solution)
            else:
                solution = solve_relaxation(inst, exact=True if cfg.exact else None,
                                            max_rounds=cfg.lp_max_rounds, tol=cfg.float_tolerance)
        with stage("cuts"):
            chain = narrow_cuts(solution, inst, exhaustive_n=cfg.narrow_cut_exhaustive_n,
                                margin=cfg.boundary_margin)
        with stage("decompose"):
            dist = decompose(solution, inst.s, inst.t)
        with stage("round"):
            if cfg.epsilon == 0:
                ensemble = exact_ensemble(dist, max_r=cfg.max_exact_r)
            else:
                epsilon = cfg.epsilon if cfg.epsilon is not None else default_epsilon(n, cfg.target_r)
                ensemble = round_distribution(dist, epsilon, n, x_star=solution.x, s=inst.s, t=inst.t)
        with stage("reassemble"):
            profile = theta_profile(chain, ensemble.r, ensemble.epsilon)
            reassembled, trace = reassemble(ensemble, chain, profile)
            structure = verify_structure(ensemble, reassembled, chain, profile)
            if structure:
                raise StructureViolation(structure[0], trace=trace, stage="reassemble",
                                         payload={"errors": structure})

        with stage("parity"):
            items, seen = [], set()
            for b, block in enumerate(reassembled.blocks):
                if tree_key(block.tree) not in seen:
                    seen.add(tree_key(block.tree))
                    items.append((block.tree, "reassembled", f"block-{b}"))
            reassembled_count = len(items)
            for index, (tree, _) in enumerate(ensemble.leftover.blocks):
                if tree_key(tree) not in seen:
                    seen.add(tree_key(tree))
                    items.append((tree, "leftover", f"leftover-{index}"))
            candidates = correct_trees(inst, items, workers=cfg.parity_workers, max_t=cfg.max_matching_t)
            kept, leftover = candidates[:reassembled_count], candidates[reassembled_count:]
            join_costs = {tree_key(c.tree): c.join_cost for c in candidates}

        with stage("analysis"):
            params = AnalysisParams(ensemble.epsilon, ensemble.r)
            audits = check_benefit_inequality(reassembled, chain, params, strict=False)
            rows, poly_mode, poly_problems = tree_certificates(
                inst, reassembled, chain, params, solution.x, join_costs, cfg.polyhedron_exhaustive_n)
            poly_problems += leftover_problems(inst, ensemble, solution.x, join_costs, cfg.polyhedron_exhaustive_n)
            first = reassembled.blocks[0].tree
            half_checked, half_violations = half_lp_in_polyhedron(inst, solution.x, first, chain,
                                                                  cfg.polyhedron_exhaustive_n)
            best, ratio, bound = bound_report(inst, kept, leftover, params, solution.value, ensemble=reassembled,
                                              x_star=solution.x,
                                              y_costs=[(row["count"], row["y_cost"]) for row in rows])

        opt = None
        if cfg.brute_force and n <= cfg.max_brute_n:
            opt = brute_force_opt(inst, max_n=cfg.max_brute_n)

        benefit_ok = all(a.passed and a.even_fraction <= a.xi - 1 for a in audits)
        certificates = {
            "structure": {"pass": True, "exchanges": len(trace)},
            "benefit": {"pass": benefit_ok},
            "tjoin_polyhedron": {"pass": not poly_problems, "mode": poly_mode, "problems": poly_problems,
                                 "half_lp_checked": half_checked, "half_lp_pass": not half_violations},
            "bound": bound,
        }
        report = {
            "instance": inst.name,
            "n": n,
            "lp_value": fraction_str(solution.value),
            "lp_mode": "supplied" if supplied else "exact" if solution.exact else "float-snapped",
            "ell": chain.ell,
            "boundary": chain.boundary,
            "cuts": [dict(row, audit=audit.dict()) for row, audit in zip(chain.rows(profile), audits)],
            "r": ensemble.r,
            "epsilon": fraction_str(ensemble.epsilon),
            "beta": fraction_str(params.beta),
            "delta": fraction_str(params.delta),
            "kept_mass": fraction_str(ensemble.kept_mass),
            "num_trees": len(dist),
            "num_blocks": len(reassembled.blocks),
            "num_blocks_peak": trace.peak_blocks,
            "num_candidates": len(candidates),
            "global_gao_tree": is_global_gao_tree(first, chain, n),
            "best_cost": fraction_str(best.cost),
            "best_tour": best.path.order,
            "best_source": best.source,
            "ratio_lp": float(ratio),
            "certificates": certificates,
        }
        if opt is not None:
            report["opt_cost"] = fraction_str(to_fraction(opt.cost))
            report["ratio_opt"] = float(best.cost / to_fraction(opt.cost)) if opt.cost else 1.0
        report["pass"] = all(c["pass"] for c in certificates.values()) and half_violations == []

        if artifact_dir is not None:
            self.write_artifacts(artifact_dir, inst, solution, chain, dist, ensemble, reassembled, trace, report)
        self.logger.info(f"{inst.name}: best {float(best.cost):.6g}, ratio_lp {report['ratio_lp']:.6f}, "
                         f"pass={report['pass']}")
        return report

    def write_artifacts(self, directory, inst, solution, chain, dist, ensemble, reassembled, trace, report):
        Path(directory).mkdir(parents=True, exist_ok=True)
        _write(directory, "instance.json", dump_instance(inst) + "\n")
        _write(directory, "lp.json", dump_solution(solution) + "\n")
        _write(directory, "cuts.json", _json(chain.dict()))
        _write(directory, "distribution.json", _json(dist.dict()))
        _write(directory, "rounded.json", _json(ensemble.dict()))
        _write(directory, "reassembled.json", _json(reassembled.dict()))
        _write(directory, "trace.jsonl", trace.to_jsonl())
        _write(directory, "report.json", _json(report))
        self.logger.info(f"Artifacts written to {directory}")


def load_chain(data):
    return NarrowCutChain([frozenset(level) for level in data["levels"]],
                          [to_fraction(v) for v in data["values"]], mode=data.get("mode", "exhaustive"),
                          boundary=data.get("boundary", False))


def verify_artifacts(directory, max_exact_r=200000):
    """Re-check a run from its serialized artifacts only; returns the list of problems."""
    directory = Path(directory)
    missing = [name for name in ARTIFACTS if not (directory / name).exists()]
    if missing:
        return [f"missing artifacts: {missing}"]

    inst = parse_instance((directory / "instance.json").read_text(), fmt="native-json")
    solution = load_solution((directory / "lp.json").read_text(), inst.n)
    chain = load_chain(json.loads((directory / "cuts.json").read_text()))
    dist = TreeDistribution.from_dict(json.loads((directory / "distribution.json").read_text()), inst.n)
    before = RoundedEnsemble.from_dict(json.loads((directory / "rounded.json").read_text()))
    after = RoundedEnsemble.from_dict(json.loads((directory / "reassembled.json").read_text()))
    trace = ExchangeTrace.from_jsonl((directory / "trace.jsonl").read_text())
    report = json.loads((directory / "report.json").read_text())

    problems = combination_errors(dist, solution.x)
    for i, (level, value) in enumerate(zip(chain.levels, chain.values)):
        if cut_value(solution.x, inst.n, level) != value:
            problems.append(f"cut {i}: stored value {value} differs from x*(C_{i})")
    if before.epsilon == 0:
        expected = exact_ensemble(dist, max_r=max_exact_r)
    else:
        expected = round_distribution(dist, before.epsilon, inst.n)
    if expected.canonical() != before.canonical():
        problems.append("rounded ensemble does not match the rounding of the stored distribution")

    profile = theta_profile(chain, before.r, before.epsilon)
    try:
        replayed = replay_trace(before, trace)
        if replayed.canonical() != after.canonical():
            problems.append("trace replay does not reproduce the reassembled ensemble")
    except (StructureViolation, ValueError, IndexError) as e:
        problems.append(f"trace replay failed: {e}")
    problems.extend(verify_structure(before, after, chain, profile))

    params = AnalysisParams(after.epsilon, after.r)
    audits = check_benefit_inequality(after, chain, params, strict=False)
    problems.extend(f"cut {a.index}: benefit {a.benefit} < required {a.required}" for a in audits if not a.passed)
    if report.get("r") != after.r or report.get("epsilon") != fraction_str(after.epsilon):
        problems.append("report r/epsilon do not match the reassembled ensemble")
    if not report.get("pass", False):
        problems.append("report records a failed certificate")

    for problem in problems:
        logger.error(f"Verify: {problem}")
    if not problems:
        logger.info(f"Verify: artifacts in {directory} pass")
    return problems
