from enum import Enum
from typing import List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from src.utils.transforms import Transform, jacobian_diagonal, to_constrained, to_raw


class CouplingStrategy(str, Enum):
    """Forward-coupling strategy used by the coupled CBPF"""
    JMC = "JMC"  # joint maximal coupling of the N-fold predictive products
    IMC = "IMC"  # independent maximal couplings, one per particle pair
    IIC = "IIC"  # independent index coupling
    JIC = "JIC"  # joint index coupling

    @property
    def complexity_power(self) -> int:
        """Exponent of N in the per-iteration cost (N for index couplings, N^2 otherwise)"""
        return 2 if self in (CouplingStrategy.JMC, CouplingStrategy.IMC) else 1


class SVParams(BaseModel):
    """Stochastic volatility parameters theta = (mu, phi, rho, sigma)"""
    model_config = ConfigDict(frozen=True)

    mu: float = Field(description="Mean log-volatility")
    phi: float = Field(gt=-1.0, lt=1.0, description="AR coefficient of the log-volatility")
    rho: float = Field(gt=-1.0, lt=1.0, description="Correlation between return and volatility noise")
    sigma: float = Field(gt=0.0, description="Scale of the log-volatility noise")


class KernelOutput(BaseModel):
    """Output of one single-chain kernel update"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    path: np.ndarray = Field(description="Output trajectory, path[t] = particles[t][J_t]")
    selected_indices: np.ndarray = Field(description="Selected particle index J_t per time")
    reference_retained: np.ndarray = Field(description="Flag J_t == 0 per time")


class CoupledOutput(BaseModel):
    """Output of one coupled CBPF update"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    path_a: np.ndarray = Field(description="Output trajectory of the first chain")
    path_b: np.ndarray = Field(description="Output trajectory of the second chain")
    fully_met: bool = Field(description="Whether the two outputs are equal elementwise")
    holes: int = Field(description="Number of time indices where the outputs differ")
    forward_couple_events: np.ndarray = Field(
        description="Per-time flag: all non-reference particles equal across the two clouds")


class MeetingRecord(BaseModel):
    """Meeting-time bookkeeping of one coupled run"""
    tau: Optional[int] = Field(default=None, description="First iteration with equal paths (None if not met)")
    tau_per_time: List[int] = Field(default_factory=list,
                                    description="Per-time final coupling iteration tau_t")
    seed: Optional[int] = Field(default=None, description="Seed of the generator that produced the run")
    iterations_run: int = Field(default=0, description="Coupled iterations performed")
    wall_nanos: int = Field(default=0, description="Wall-clock duration (0 unless timing is recorded)")

    @property
    def met(self) -> bool:
        return self.tau is not None


class UnbiasedEstimate(BaseModel):
    """Output of the L-lagged, k-offset unbiased estimator (or its time average)"""
    value: Union[float, List[float]] = Field(description="Z_k, or the average Z_{k:ell}")
    k: int = Field(description="Offset")
    ell: int = Field(description="Last offset of the average (equals k for a single estimate)")
    L: int = Field(description="Lag")
    meeting: MeetingRecord = Field(description="Meeting record of the coupled run")

    def as_array(self) -> np.ndarray:
        return np.atleast_1d(np.asarray(self.value, dtype=float))


class CostRecord(BaseModel):
    """Per-cell summary of a meeting-time benchmark"""
    strategy: CouplingStrategy = Field(description="Forward-coupling strategy")
    N: int = Field(description="Number of particles besides the reference")
    T: int = Field(description="Time horizon")
    replicates: int = Field(description="Replicates that completed")
    mean_tau: Optional[float] = Field(description="Mean meeting iterations over completed replicates")
    cost_factor: Optional[float] = Field(description="mean_tau x N (index couplings) or x N^2 (state couplings)")
    completed: bool = Field(description="Whether every requested replicate ran")


class TraceRow(BaseModel):
    """One iteration of the stochastic-gradient MLE loop"""
    iteration: int = Field(description="Iteration number (0 = initial point)")
    wall_seconds: float = Field(description="Elapsed wall time (0 unless timing is recorded)")
    raw: List[float] = Field(description="Unconstrained parameters")
    constrained: List[float] = Field(description="Parameters in model coordinates")
    grad_norm: float = Field(description="Euclidean norm of the raw gradient estimate")
    meeting_tau: Optional[int] = Field(default=None, description="Meeting time of the estimator, if any")


class TransformedParams(BaseModel):
    """Parameters held in unconstrained coordinates with a per-coordinate transform"""
    raw: List[float] = Field(description="Unconstrained coordinates")
    transforms: List[Transform] = Field(description="identity | log | logit per coordinate")

    @field_validator("transforms")
    @classmethod
    def same_length(cls, v, info):
        raw = info.data.get("raw")
        if raw is not None and len(raw) != len(v):
            raise ValueError("raw and transforms must have the same length")
        return v

    @classmethod
    def from_constrained(cls, values, transforms) -> "TransformedParams":
        return cls(raw=to_raw(values, transforms).tolist(), transforms=list(transforms))

    def raw_array(self) -> np.ndarray:
        return np.asarray(self.raw, dtype=float)

    def constrained(self) -> np.ndarray:
        return to_constrained(self.raw_array(), self.transforms)

    def jacobian(self) -> np.ndarray:
        return jacobian_diagonal(self.raw_array(), self.transforms)

    def shifted(self, delta) -> "TransformedParams":
        return TransformedParams(raw=(self.raw_array() + np.asarray(delta)).tolist(),
                                 transforms=self.transforms)


class AdamState(BaseModel):
    """Moment estimates of the Adam optimiser"""
    step: int = Field(default=0, ge=0, description="Number of updates taken")
    m: List[float] = Field(description="First-moment estimate")
    v: List[float] = Field(description="Second-moment estimate")
    alpha: float = Field(default=0.01, gt=0.0, description="Learning rate")
    beta1: float = Field(default=0.9, ge=0.0, lt=1.0, description="First-moment decay")
    beta2: float = Field(default=0.999, ge=0.0, lt=1.0, description="Second-moment decay")
    eps: float = Field(default=1e-8, gt=0.0, description="Stabilizer")

    @classmethod
    def fresh(cls, dim: int, **kwargs) -> "AdamState":
        return cls(m=[0.0] * dim, v=[0.0] * dim, **kwargs)


class ExperimentConfig(BaseModel):
    """Validated experiment configuration (file values merged with CLI flags)"""
    model_family: Literal["barriers", "lg", "sv", "uniform", "discrete"] = Field(
        default="barriers", description="Built-in model family")
    model_params: List[float] = Field(default_factory=list, description="Family parameters")
    T: List[int] = Field(default_factory=lambda: [64], description="Time horizons")
    N: List[int] = Field(default_factory=lambda: [15], description="Particle counts")
    strategies: List[CouplingStrategy] = Field(default_factory=lambda: [CouplingStrategy.IMC],
                                               description="Forward-coupling strategies")
    replicates: int = Field(default=10, ge=1, description="Replicates per cell")
    seed: int = Field(default=0, ge=0, description="Root seed")
    iteration_cap: int = Field(default=10_000, ge=1, description="Coupled iterations allowed per replicate")
    time_budget_secs: Optional[float] = Field(default=None, gt=0.0, description="Per-cell wall-clock budget")
    out_dir: str = Field(default="out", description="Output directory")
    record_timing: bool = Field(default=False, description="Write wall-clock columns")
    sv_stationary_variance: Literal["printed", "phi"] = Field(
        default="printed", description="Initial SV variance: sigma^2/(1-rho^2) or sigma^2/(1-phi^2)")
    data_seed: int = Field(default=12345, ge=0, description="Seed of the synthetic SV observations")

    @field_validator("T", "N", "strategies")
    @classmethod
    def non_empty(cls, v):
        if not v:
            raise ValueError("list must not be empty")
        return v

    @field_validator("T", "N")
    @classmethod
    def positive(cls, v):
        if any(x < 1 for x in v):
            raise ValueError("values must be positive integers")
        return v
