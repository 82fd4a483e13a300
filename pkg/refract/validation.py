"""
Analytic-versus-Monte-Carlo validation harness.

A validation config names fixtures (refracted models) and cases (a query, a
path count and a scheme). Every case is evaluated analytically and by
simulation; the verdict is

    |analytic - mean| <= max(3 * stderr + bias_bound, band)

with band = 2e-2 for the Euler scheme and 0 for the exact scheme.
"""

import logging
import math
import zlib
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from typing import Dict, List, Optional, Union

import numpy as np
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    NonNegativeFloat,
    PositiveFloat,
    PositiveInt,
    ValidationError,
    model_validator,
)

from refract import __version__
from refract.config import DEFAULT_FIXTURES, get_settings
from refract.errors import ModelConfigError, RefractError
from refract.fixture_manager import FixtureManager, load_json
from refract.occupation import OccupationQuery, laplace_transform
from refract.simulator import DEFAULT_STEP, EULER, EXACT, MCEstimate, mc_laplace

logger = logging.getLogger(__name__)

EULER_BAND = 2e-2
Z_LIMIT = 3.0


class ValidationCase(BaseModel):
    """One comparison; lo/hi omitted (null) means that barrier is absent."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    id: str
    fixture: str
    theta: NonNegativeFloat
    lo: Optional[float] = None
    hi: Optional[float] = None
    n: PositiveInt = 100_000
    scheme: str = Field(default=EXACT, pattern=f"^({EXACT}|{EULER})$")
    h: PositiveFloat = DEFAULT_STEP
    analytic_scale: float = 1.0

    def query(self) -> OccupationQuery:
        lo = -math.inf if self.lo is None else self.lo
        hi = math.inf if self.hi is None else self.hi
        return OccupationQuery(theta=self.theta, lo=lo, hi=hi)

    @property
    def band(self) -> float:
        return EULER_BAND if self.scheme == EULER else 0.0


class ValidationConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    seed: int = 0
    fixtures: Dict[str, Union[str, dict]] = Field(default_factory=dict)
    cases: List[ValidationCase] = Field(default_factory=list)

    @model_validator(mode="after")
    def _unique_ids(self):
        ids = [case.id for case in self.cases]
        if len(ids) != len(set(ids)):
            raise ValueError("case ids must be unique")
        return self


class CaseRecord(BaseModel):
    id: str
    fixture: str
    query: Dict[str, Optional[float]]
    scheme: str
    analytic: Optional[float] = None
    mc_mean: Optional[float] = None
    mc_stderr: Optional[float] = None
    bias_bound: float = 0.0
    z_score: Optional[float] = None
    passed: bool = False
    error: Optional[str] = None


class ValidationReport(BaseModel):
    tool_version: str = __version__
    timestamp: str = ""
    seed: int
    config: ValidationConfig
    records: List[CaseRecord]
    summary: Dict[str, int]

    @property
    def all_passed(self) -> bool:
        return self.summary.get("failed", 0) == 0

    def body_json(self) -> str:
        """The report without its timestamp; identical for identical (config, seed)."""
        return self.model_dump_json(exclude={"timestamp"}, indent=2)


def load_config(path: str) -> ValidationConfig:
    try:
        return ValidationConfig.model_validate(load_json(path))
    except ValidationError as e:
        raise ModelConfigError(f"invalid validation config {path}: {e}") from e


def case_seed(seed: int, case_id: str) -> int:
    """Seed of one case: a function of the run seed and the case id only."""
    state = np.random.SeedSequence([seed, zlib.crc32(case_id.encode("utf-8"))]).generate_state(1)
    return int(state[0])


def verdict(analytic: float, estimate: MCEstimate, band: float) -> tuple:
    diff = analytic - estimate.mean
    allowed = max(Z_LIMIT * estimate.stderr + estimate.bias_bound, band)
    if estimate.stderr > 0.0:
        z_score = diff / estimate.stderr
    else:
        z_score = 0.0 if diff == 0.0 else math.copysign(math.inf, diff)
    return abs(diff) <= allowed, z_score


def run_validation(
    config: ValidationConfig,
    seed: Optional[int] = None,
    fixtures: Optional[FixtureManager] = None,
) -> ValidationReport:
    """
    Evaluate every case of `config`.

    Analytic values are computed first, one case after another; simulations
    then run concurrently. Records come back sorted by case id. A failure in
    either half marks the case failed and is kept in its `error` field.
    """
    seed = config.seed if seed is None else seed
    records: Dict[str, CaseRecord] = {}
    analytic: Dict[str, float] = {}
    models = {}

    for case in config.cases:
        query = case.query()
        record = CaseRecord(
            id=case.id,
            fixture=case.fixture,
            query={"theta": case.theta, "lo": case.lo, "hi": case.hi},
            scheme=case.scheme,
        )
        records[case.id] = record
        try:
            if case.fixture not in models:
                models[case.fixture] = _fixture(config, fixtures, case.fixture)
            result = laplace_transform(models[case.fixture], query)
            analytic[case.id] = result.value * case.analytic_scale
            record.analytic = analytic[case.id]
        except RefractError as e:
            logger.warning("Case %s: analytic evaluation failed: %s", case.id, e)
            record.error = str(e)

    def simulate(case: ValidationCase) -> None:
        record = records[case.id]
        try:
            estimate = mc_laplace(models[case.fixture], case.query(), case.n, case.scheme, case_seed(seed, case.id), case.h)
        except RefractError as e:
            logger.warning("Case %s: simulation failed: %s", case.id, e)
            record.error = str(e)
            return
        record.mc_mean = estimate.mean
        record.mc_stderr = estimate.stderr
        record.bias_bound = estimate.bias_bound
        record.passed, record.z_score = verdict(analytic[case.id], estimate, case.band)
        logger.info(
            "Case %s: analytic=%.6f mc=%.6f+-%.6f z=%.2f %s",
            case.id, record.analytic, estimate.mean, estimate.stderr, record.z_score,
            "PASS" if record.passed else "FAIL",
        )

    runnable = [case for case in config.cases if case.id in analytic]
    if runnable:
        workers = max(1, min(get_settings().threads, len(runnable)))
        with ThreadPoolExecutor(max_workers=workers) as executor:
            list(executor.map(simulate, runnable))

    ordered = [records[case_id] for case_id in sorted(records)]
    passed = sum(r.passed for r in ordered)
    return ValidationReport(
        timestamp=datetime.now(timezone.utc).isoformat(),
        seed=seed,
        config=config,
        records=ordered,
        summary={"total": len(ordered), "passed": passed, "failed": len(ordered) - passed},
    )


def _fixture(config: ValidationConfig, manager: Optional[FixtureManager], fixture_id: str):
    entry = config.fixtures.get(fixture_id)
    if entry is None:
        raise ModelConfigError(f"unknown fixture {fixture_id!r}")
    return (manager or FixtureManager(DEFAULT_FIXTURES)).resolve(entry)
