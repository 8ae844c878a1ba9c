"""Pydantic schemas: validated configuration and serialized records"""
from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class TrainConfig(_Strict):
    steps: int = Field(1500, ge=1)
    batch_replicas: int = Field(256, ge=1)
    lr_init: float = Field(0.02, gt=0)
    kl_weight: Optional[float] = Field(None, gt=0)  # None -> 1 / batch_replicas
    seed: int = Field(0, ge=0)
    log_std_init: float = -3.0
    reduction: Literal["mean", "sum"] = "mean"
    log_every: int = Field(250, ge=1)

    @property
    def beta(self) -> float:
        return self.kl_weight if self.kl_weight is not None else 1.0 / self.batch_replicas


class RbfKernelSpec(_Strict):
    lengthscale: float = Field(8.0, gt=0)
    variance: float = Field(0.125, gt=0)
    jitter: Optional[float] = Field(None, ge=0)  # None -> 1e-8 * variance

    @property
    def effective_jitter(self) -> float:
        return self.jitter if self.jitter is not None else 1e-8 * self.variance


class WindowPlanSpec(_Strict):
    window: int = Field(32, ge=1)
    stride: Optional[int] = Field(None, ge=1)  # None -> window // 2

    @model_validator(mode="after")
    def _stride_within_window(self):
        if self.stride is not None and self.stride > self.window:
            raise ValueError("stride must not exceed window")
        return self

    @property
    def effective_stride(self) -> int:
        return self.stride if self.stride is not None else max(1, self.window // 2)


class LtiSettings(_Strict):
    length: int = Field(2048, ge=2)
    p: int = Field(16, ge=1)
    snr_db: Optional[float] = 0.0  # None -> noiseless
    n_pairs: int = Field(1, ge=1)
    input_kind: Literal["white", "pulse"] = "white"
    n_pulses: int = Field(24, ge=1)
    sample_rate: float = Field(1.0, gt=0)
    n_samples: int = Field(1000, ge=1)
    n_freqs: int = Field(256, ge=1)
    max_lag: int = Field(64, ge=0)
    train: TrainConfig = TrainConfig()

    @model_validator(mode="after")
    def _consistent(self):
        if self.n_freqs < self.p:
            raise ValueError("n_freqs must be at least p")
        if self.max_lag + self.p >= self.length:
            raise ValueError("max_lag + p must be shorter than the signal")
        return self


class LtvSettings(_Strict):
    n: int = Field(2048, ge=2)
    p: int = Field(8, ge=1)
    snr_db: Optional[float] = 10.0
    input_kind: Literal["white", "pulse"] = "white"
    n_pulses: int = Field(48, ge=1)
    sample_rate: float = Field(1.0, gt=0)
    transitions: List[Tuple[float, float]] = [(0.3, 0.4), (0.6, 0.7)]
    plan: WindowPlanSpec = WindowPlanSpec()
    kernel: Optional[RbfKernelSpec] = None  # None -> lengthscale 8, variance 1/p
    # summed window reconstruction; kl_weight = 2 x noise variance of a unit-power output at 10 dB
    train: TrainConfig = TrainConfig(steps=800, batch_replicas=64, reduction="sum", kl_weight=0.2)

    @field_validator("transitions")
    @classmethod
    def _two_ordered_transitions(cls, value):
        if len(value) != 2:
            raise ValueError("exactly two transition regions are required")
        (a0, a1), (b0, b1) = value
        if not (0.0 <= a0 < a1 <= b0 < b1 <= 1.0):
            raise ValueError("transitions must be ordered, disjoint and inside [0, 1]")
        return value

    @model_validator(mode="after")
    def _window_fits(self):
        if self.plan.window < self.p:
            raise ValueError("plan.window must be at least p")
        if self.plan.window > self.n:
            raise ValueError("plan.window must not exceed n")
        return self

    def kernel_spec(self) -> RbfKernelSpec:
        return self.kernel or RbfKernelSpec(lengthscale=8.0, variance=1.0 / self.p)


class AntScenario(_Strict):
    receiver_distance: float = Field(2000.0, gt=0)  # m
    dispersion_freqs: List[float] = [0.5, 1.0, 2.0, 3.0, 4.0]  # Hz
    dispersion_velocities: List[float] = [3000.0, 2700.0, 2350.0, 2150.0, 2000.0]  # m/s
    n_pairs: int = Field(200, ge=1)
    sources_per_pair: int = Field(8, ge=1)
    source_kind: Literal["pulse", "impulse"] = "pulse"
    snr_db: Optional[float] = 10.0
    sample_rate: float = Field(20.0, gt=0)
    signal_length: int = Field(512, ge=2)
    n_taps: int = Field(32, ge=1)
    taper_width: float = Field(0.25, ge=0)  # Hz, cosine taper outside the band
    seed: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _valid_curve(self):
        if len(self.dispersion_freqs) != len(self.dispersion_velocities) or not self.dispersion_freqs:
            raise ValueError("dispersion_freqs and dispersion_velocities must be nonempty and aligned")
        if any(b <= a for a, b in zip(self.dispersion_freqs, self.dispersion_freqs[1:])):
            raise ValueError("dispersion_freqs must be strictly increasing")
        if any(v <= 0 for v in self.dispersion_velocities):
            raise ValueError("dispersion_velocities must be positive")
        if self.dispersion_freqs[-1] >= self.sample_rate / 2:
            raise ValueError("dispersion band must lie below Nyquist")
        return self


class AntSettings(_Strict):
    scenario: AntScenario = AntScenario()
    fit_band: Tuple[float, float] = (1.0, 4.0)
    freq_step: float = Field(0.05, gt=0)
    velocity_min: float = Field(1500.0, gt=0)
    velocity_max: float = Field(3500.0, gt=0)
    velocity_step: float = Field(10.0, gt=0)
    max_jump: int = Field(3, ge=0)
    max_ridge_misfit: float = Field(0.05, gt=0)
    ccf_window: int = Field(128, ge=2)
    water_level: float = Field(1e-4, gt=0)
    pair_counts: List[int] = [25, 50, 100, 200]
    seeds: List[int] = [0, 1, 2, 3, 4]
    quantize: bool = False
    train: TrainConfig = TrainConfig(steps=600, batch_replicas=64, lr_init=0.01)

    @model_validator(mode="after")
    def _consistent(self):
        lo, hi = self.fit_band
        if not 0 < lo < hi:
            raise ValueError("fit_band must be an increasing pair of positive frequencies")
        if self.velocity_max <= self.velocity_min:
            raise ValueError("velocity_max must exceed velocity_min")
        if sorted(self.pair_counts) != self.pair_counts or not self.pair_counts or self.pair_counts[0] < 1:
            raise ValueError("pair_counts must be ascending positive integers")
        if self.pair_counts[-1] > self.scenario.n_pairs:
            raise ValueError("largest pair count exceeds scenario.n_pairs")
        if self.ccf_window > self.scenario.signal_length:
            raise ValueError("ccf_window longer than the signals")
        if self.scenario.n_taps >= self.ccf_window:
            raise ValueError("scenario.n_taps must be shorter than ccf_window")
        return self


class RunConfig(_Strict):
    kind: Literal["lti", "ltv", "ant"] = "lti"
    seed: int = Field(0, ge=0)
    output_dir: str = "runs"
    lti: LtiSettings = LtiSettings()
    ltv: LtvSettings = LtvSettings()
    ant: AntSettings = AntSettings()


class LtiFitRecord(BaseModel):
    p: int
    mean: List[float]
    std: List[float]
    config: TrainConfig
    final_loss: float
    trace_downsampled: List[float]
    sample_rate: float = 1.0


class ManifestEntry(BaseModel):
    path: str
    kind: str
    seed: int


class Manifest(BaseModel):
    experiment: Literal["lti", "ltv", "ant"]
    root_seed: int
    files: List[ManifestEntry] = []


class SweepRow(BaseModel):
    pair_count: int
    mir_error: float
    ccf_error: float
    seed: int
    mir_valid: bool = True
    ccf_valid: bool = True
