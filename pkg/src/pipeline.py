# src/pipeline.py

import logging
from multiprocessing import Pool
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from .services.cmdp_solver_service import CmdpSolverService
from .services.kernel_builder_service import Kernel, KernelBuilderService
from .services.output_formatter_service import OutputFormatterService, summary_record
from .services.policy_evaluator_service import PolicyEvaluatorService
from .services.rvi_solver_service import RviSolverService
from .services.simulator_service import SimConfig, calibrate_random_baseline, compare_policies, run_trial
from .services.structure_analyzer_service import StructureAnalyzerService, boundary_dominance
from .utils.caching import CacheManager, FileSystemCacheManager, NoOpCacheManager, settings_fingerprint
from .utils.config import ExperimentSpec
from .utils.errors import GridPointError
from .utils.policies import MixturePolicy
from .utils.state_space import ModelParams

logger = logging.getLogger(__name__)

# Slack on the budget for a mixture that is reported as compliant.
BUDGET_SLACK = 1e-6


def point_tag(params: ModelParams) -> str:
    return f"p{params.p:g}_g{params.gamma:g}_G{params.gamma_max:g}"


class GridPointPipeline:
    """
    Runs the stages of a single (p, gamma, gamma_max) grid point.

    The CMDP solution is cached per grid point, so a `verify` or `simulate`
    run after a `solve` only rebuilds the kernel. Every stage writes its
    artifacts under `<output_dir>/<tag>/`.
    """

    def __init__(self, params: ModelParams, spec: ExperimentSpec, cache_manager: CacheManager):
        self.params = params
        self.spec = spec
        self.cache_manager = cache_manager
        self.tag = point_tag(params)
        self._initialize_services()
        self._initialize_data_holders()

    def _initialize_services(self):
        self.kernel_builder = KernelBuilderService()
        self.evaluator = PolicyEvaluatorService(**self.spec.evaluation.model_dump())
        self.cmdp_solver = CmdpSolverService(
            RviSolverService(**self.spec.solver.rvi_kwargs()),
            self.evaluator,
            epsilon_lambda=self.spec.solver.epsilon_lambda,
            max_doublings=self.spec.solver.max_doublings,
        )
        self.structure_analyzer = StructureAnalyzerService()
        self.formatter = OutputFormatterService(Path(self.spec.experiment.output_dir) / self.tag)

    def _initialize_data_holders(self):
        self.kernel: Optional[Kernel] = None
        self.mixture: Optional[MixturePolicy] = None
        self.summary: Dict[str, Any] = {}
        self.verification: Dict[str, Any] = {}
        self.simulation: Dict[str, Any] = {}

    @property
    def cache_key(self) -> str:
        return f"{self.tag}_dmax{self.params.delta_max}_lmax{self.params.l_max}"

    def run(self, pipelines: Sequence[str]) -> Dict[str, Any]:
        """
        Executes the requested stages in order; solving always runs first.

        Returns:
            A picklable record with the summary, the number of verification
            violations and, when simulated, both policies' Monte Carlo results.
        """
        logger.info(f"--- Grid point {self.tag} ({', '.join(pipelines)}) ---")
        self._step_1_build_kernel()
        self._step_2_solve_cmdp()
        if "verify" in pipelines:
            self._step_3_verify()
        if "simulate" in pipelines or "sweep" in pipelines:
            self._step_4_simulate()
        logger.info(f"Grid point {self.tag} complete.")
        return {
            "tag": self.tag,
            "summary": self.summary,
            "violations": self.verification.get("violations", 0),
            "simulation": self.simulation,
        }

    def _step_1_build_kernel(self):
        """Step 1: Enumerate the truncated state space and its transition kernel."""
        logger.info("Step 1: Building transition kernel...")
        self.kernel = self.kernel_builder.run(self.params)

    def _step_2_solve_cmdp(self):
        """Step 2: Solve the constrained problem and export both policy maps."""
        logger.info("Step 2: Solving the constrained MDP...")
        cached_data = self.cache_manager.load(self.cache_key)
        if cached_data:
            self.mixture = MixturePolicy.from_dict(self.kernel.space, cached_data)
        else:
            self.mixture = self.cmdp_solver.run(self.kernel)
            self.cache_manager.save(self.cache_key, self.mixture.to_dict())

        self.summary = summary_record(self.mixture, self.params)
        self.formatter.write_json("summary.json", self.summary)
        self.formatter.write_policy_map("policy_lambda1.csv", self.mixture.pi1)
        self.formatter.write_policy_map("policy_lambda2.csv", self.mixture.pi2)

    def _step_3_verify(self):
        """Step 3: Check the kernel, the threshold structure and the solver's convergence."""
        logger.info("Step 3: Verifying kernel and policy structure...")
        kernel_violations = self.kernel.check_invariants()

        policies = {"lambda1": self.mixture.pi1, "lambda2": self.mixture.pi2}
        structure, boundaries = {}, {}
        for name, policy in policies.items():
            result = self.structure_analyzer.run(policy)
            boundaries[name] = result.pop("boundary")
            structure[name] = result
            if boundaries[name] is not None:
                self.formatter.write_boundary(f"boundary_{name}.csv", boundaries[name])

        dominance = None
        if boundaries["lambda1"] is not None and boundaries["lambda2"] is not None:
            dominance = boundary_dominance(boundaries["lambda1"], boundaries["lambda2"])

        probes = self.mixture.probes
        unconverged = [probe.lam for probe in probes if not probe.converged]
        over_budget = self.summary["expected_tx"] > self.params.gamma_max + BUDGET_SLACK

        violations = len(kernel_violations) + len(unconverged) + int(over_budget)
        for result in structure.values():
            violations += sum(len(result[check]["violations"]) for check in
                              ("monotone_in_delta", "monotone_in_l", "fresh_action_independent_of_l"))
            violations += int(not result["round_trip"])
        violations += len(dominance) if dominance is not None else 1

        self.verification = {
            "kernel_invariants": kernel_violations,
            "structure": structure,
            "lambda_dominance": dominance,
            "rvi": {
                "max_residual": max((probe.residual for probe in probes), default=0.0),
                "unconverged_lambdas": unconverged,
            },
            "budget": {"expected_tx": self.summary["expected_tx"], "gamma_max": self.params.gamma_max,
                       "within_budget": not over_budget},
            "violations": violations,
        }
        self.formatter.write_json("verify.json", self.verification)
        if violations:
            logger.warning(f"Verification of {self.tag} found {violations} violation(s).")

    def _step_4_simulate(self):
        """Step 4: Simulate the optimal mixture against the calibrated random baseline."""
        logger.info("Step 4: Simulating optimal and random policies...")
        sim = self.spec.simulation
        baseline = calibrate_random_baseline(self.params, self.kernel, self.evaluator)
        cfg = SimConfig(params=self.params, horizon=sim.horizon, trials=sim.trials,
                        seed=sim.seed, chunk_size=sim.chunk_size)
        reports = compare_policies(cfg, {"optimal": self.mixture, "random": baseline})

        self.simulation = {
            "analytic": {"expected_aoi": self.summary["expected_aoi"], "expected_tx": self.summary["expected_tx"],
                         "fresh_tx_given_b1": self.summary["fresh_tx_given_b1"]},
            "random_baseline": {"q": baseline.q, "achieved_tx": baseline.achieved_tx, "max_tx": baseline.max_tx},
            "horizon": sim.horizon,
            "trials": sim.trials,
            **{name: report.to_dict() for name, report in reports.items()},
        }
        self.formatter.write_json("simulation.json", self.simulation)

        if sim.trace:
            trial = run_trial(self.mixture, cfg, 0, trace=True)
            self.formatter.write_trace("trace.csv", trial.trace)


def _cache_manager(spec: ExperimentSpec, use_cache: bool) -> CacheManager:
    if not (use_cache and spec.cache.enabled):
        return NoOpCacheManager()
    fingerprint = settings_fingerprint({"solver": spec.solver.model_dump(), "evaluation": spec.evaluation.model_dump()})
    return FileSystemCacheManager(spec.cache.directory, fingerprint)


def run_grid_point(params: ModelParams, spec: ExperimentSpec, pipelines: Sequence[str],
                   use_cache: bool = True) -> Dict[str, Any]:
    """Module-level worker so grid points can be shipped to a process pool."""
    tag = point_tag(params)
    try:
        return GridPointPipeline(params, spec, _cache_manager(spec, use_cache)).run(pipelines)
    except Exception as e:
        logger.error(f"Grid point {tag} failed: {e}")
        raise GridPointError(f"{type(e).__name__}: {e}", tag) from e


def _run_grid_point_task(task) -> Dict[str, Any]:
    return run_grid_point(*task)


class ExperimentPipeline:
    """
    Runs the requested pipelines over every point of the experiment grid.

    Grid points are independent; with more than one worker they are spread
    over a process pool, and results come back in grid order. Each point
    writes only its own directory, and the sweep table is written once all
    points have finished.
    """

    def __init__(self, spec: ExperimentSpec, use_cache: bool = True):
        self.spec = spec
        self.use_cache = use_cache
        self.output_dir = Path(spec.experiment.output_dir)
        logger.info(f"ExperimentPipeline initialized ({len(spec.grid_points())} grid point(s), "
                    f"workers={spec.experiment.workers}, cache={'on' if use_cache and spec.cache.enabled else 'off'}).")

    def run(self, pipelines: Optional[Sequence[str]] = None) -> Dict[str, Any]:
        """
        Executes the pipelines and returns the per-point records plus the total violation count.

        Raises:
            GridPointError: If any grid point fails; the error names the point.
        """
        pipelines = list(pipelines or self.spec.experiment.pipelines)
        points = self.spec.grid_points()
        if not points:
            logger.info("Empty grid; nothing to do.")
            return {"points": [], "violations": 0}

        tasks = [(params, self.spec, pipelines, self.use_cache) for params in points]
        workers = min(self.spec.experiment.workers, len(tasks))
        if workers > 1:
            with Pool(processes=workers) as pool:
                records = pool.map(_run_grid_point_task, tasks)
        else:
            records = [_run_grid_point_task(task) for task in tasks]

        if "sweep" in pipelines:
            self._write_tradeoff(records)

        violations = sum(record["violations"] for record in records)
        logger.info(f"✅ Experiment complete: {len(records)} grid point(s), {violations} violation(s).")
        return {"points": records, "violations": violations}

    def _write_tradeoff(self, records: List[Dict[str, Any]]):
        rows = []
        for record in records:
            summary, simulation = record["summary"], record["simulation"]
            rows.append({
                **{key: summary[key] for key in ("p", "gamma", "gamma_max", "lambda1", "lambda2", "mu",
                                                 "expected_aoi", "expected_tx", "fresh_tx_given_b1")},
                "optimal_mean_aoi": simulation["optimal"]["mean_aoi"],
                "optimal_se_aoi": simulation["optimal"]["se_aoi"],
                "optimal_fresh_tx_given_b1": simulation["optimal"]["fresh_tx_given_b1"],
                "random_mean_aoi": simulation["random"]["mean_aoi"],
                "random_se_aoi": simulation["random"]["se_aoi"],
                "random_q": simulation["random_baseline"]["q"],
            })
        OutputFormatterService(self.output_dir).write_tradeoff("tradeoff.csv", rows)


def run_solve(spec: ExperimentSpec, use_cache: bool = True) -> Dict[str, Any]:
    """Solves every grid point and writes policy maps and summaries."""
    return ExperimentPipeline(spec, use_cache).run(["solve"])


def run_sweep(spec: ExperimentSpec, use_cache: bool = True) -> Dict[str, Any]:
    """Solves and simulates every grid point and writes tradeoff.csv."""
    return ExperimentPipeline(spec, use_cache).run(["sweep"])
