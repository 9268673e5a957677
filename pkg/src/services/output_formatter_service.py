# src/services/output_formatter_service.py

import csv
import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence

from ..utils.policies import DeterministicPolicy, MixturePolicy
from ..utils.state_space import ModelParams
from .cmdp_solver_service import mixture_targets
from .structure_analyzer_service import ThresholdBoundary

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

POLICY_MAP_COLUMNS = ["delta", "l", "b", "action", "schema_version"]
BOUNDARY_COLUMNS = ["l", "b", "delta_star", "schema_version"]
TRACE_COLUMNS = ["t", "delta", "l", "b", "action", "outcome", "schema_version"]
TRADEOFF_COLUMNS = [
    "p", "gamma", "gamma_max", "lambda1", "lambda2", "mu", "expected_aoi", "expected_tx",
    "fresh_tx_given_b1", "optimal_mean_aoi", "optimal_se_aoi", "optimal_fresh_tx_given_b1",
    "random_mean_aoi", "random_se_aoi", "random_q", "schema_version",
]


def summary_record(mixture: MixturePolicy, params: ModelParams) -> Dict[str, Any]:
    """Flat summary of a solved grid point: the bracketing pair, the mixture weight and its long-run targets."""
    expected_aoi, expected_tx = mixture_targets(mixture, params.gamma_max)
    return {
        "p": params.p,
        "gamma": params.gamma,
        "gamma_max": params.gamma_max,
        "delta_max": params.delta_max,
        "l_max": params.l_max,
        "lambda1": mixture.lambda1,
        "lambda2": mixture.lambda2,
        "mu": mixture.mu,
        "C1": mixture.eval1.avg_aoi,
        "C2": mixture.eval2.avg_aoi,
        "D1": mixture.eval1.avg_tx,
        "D2": mixture.eval2.avg_tx,
        "expected_aoi": expected_aoi,
        "expected_tx": expected_tx,
        "fresh_tx_given_b1": mixture.fresh_tx_given_b1,
        "probes": len(mixture.probes),
        "schema_version": SCHEMA_VERSION,
    }


class OutputFormatterService:
    """
    Writes the machine-readable artifacts of a grid point.

    Every CSV gets a trailing schema_version column and every JSON document a
    schema_version key, so downstream plotting scripts can detect format
    changes. Floats are written with repr precision, which keeps re-runs with
    the same seed byte-identical.
    """

    def __init__(self, output_dir: Path | str):
        self.output_dir = Path(output_dir)
        logger.info(f"OutputFormatterService initialized (output_dir={self.output_dir}).")

    def _path(self, relative: str) -> Path:
        path = self.output_dir / relative
        path.parent.mkdir(parents=True, exist_ok=True)
        return path

    def write_table(self, relative: str, columns: Sequence[str], rows: Iterable[Dict[str, Any]]) -> Path:
        path = self._path(relative)
        with open(path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=list(columns), lineterminator="\n")
            writer.writeheader()
            for row in rows:
                writer.writerow({**row, "schema_version": SCHEMA_VERSION})
        logger.info(f"Wrote {path}")
        return path

    def write_json(self, relative: str, data: Dict[str, Any]) -> Path:
        path = self._path(relative)
        with open(path, "w") as f:
            json.dump({**data, "schema_version": SCHEMA_VERSION}, f, indent=2, sort_keys=True)
            f.write("\n")
        logger.info(f"Wrote {path}")
        return path

    def write_policy_map(self, relative: str, policy: DeterministicPolicy) -> Path:
        """One row per state, ready to plot as a policy map."""
        space = policy.space
        rows = (
            {"delta": int(d), "l": int(l), "b": int(b), "action": int(a)}
            for d, l, b, a in zip(space.delta, space.l, space.b, policy.actions)
        )
        return self.write_table(relative, POLICY_MAP_COLUMNS, rows)

    def write_boundary(self, relative: str, boundary: ThresholdBoundary) -> Path:
        return self.write_table(relative, BOUNDARY_COLUMNS, boundary.to_rows())

    def write_trace(self, relative: str, rows: List[Dict[str, Any]]) -> Path:
        return self.write_table(relative, TRACE_COLUMNS, rows)

    def write_tradeoff(self, relative: str, rows: List[Dict[str, Any]]) -> Path:
        return self.write_table(relative, TRADEOFF_COLUMNS, rows)
