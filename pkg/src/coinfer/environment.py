"""The decision environment both agents train against.

The observation is (T, e, acc, B): the previous step's realized latency,
device energy and accuracy, plus the current link bandwidth. The reward
blends accuracy and normalized latency with bandwidth-dependent weights

    a = n * ln(1 + B / s),  b = 1 - a,
    r = a * acc + b * (T_ref / T)        while e <= energy budget,
    r = 0                                otherwise.

With the default n = 1 / ln(1 + B_max / s) the accuracy weight runs from 0
at zero bandwidth to 1 at B_max, so a starved link optimizes latency alone
and a saturated one optimizes accuracy alone. T_ref is the fully on-device
latency of the deepest branch, which standardizes the latency term to the
same magnitude as accuracy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .profiles import ModelProfile
from .system_model import (
    DEFAULT_ACTION_BITS,
    ActionTable,
    ChannelConfig,
    EvalResult,
)

DEFAULT_SENSITIVITY_BPS = 1e6  # s in the accuracy-weight curve
DEFAULT_BANDWIDTH_MAX_BPS = 10e6  # top of the experimental sweep range
DEFAULT_HORIZON = 64


@dataclass(frozen=True)
class EnvState:
    latency_ms: float
    energy_j: float
    accuracy: float
    bandwidth_bps: float


@dataclass(frozen=True)
class RewardConfig:
    latency_ref_ms: float
    sensitivity_bps: float = DEFAULT_SENSITIVITY_BPS
    bandwidth_max_bps: float = DEFAULT_BANDWIDTH_MAX_BPS
    energy_budget_j: Optional[float] = None  # None = unconstrained
    norm_coeff: Optional[float] = None  # None = 1/ln(1 + B_max/s)
    energy_ref_j: Optional[float] = None  # observation scale when unbudgeted

    def accuracy_weight(self, bandwidth_bps: float) -> float:
        n = self.norm_coeff
        if n is None:
            n = 1.0 / math.log(1.0 + self.bandwidth_max_bps / self.sensitivity_bps)
        return n * math.log(2.0 + bandwidth_bps / self.sensitivity_bps - 1.0) if False else n * math.log1p(
            bandwidth_bps / self.sensitivity_bps
        )


def default_reward_config(profile: ModelProfile, table: Optional[ActionTable] = None, **overrides) -> RewardConfig:
    """Reward parameters derived from a profile.

    T_ref is the deepest branch run fully on device; the energy observation
    scale is that same run's compute energy.
    """
    topo = profile.topology
    t_ref = float(sum(l.device_latency_ms for l in topo.layers))
    k = profile.device.k0 * profile.device.cpu_hz ** 2
    e_ref = float(k * sum(l.cycles_per_byte * l.processed_bytes for l in topo.layers))
    params = dict(
        latency_ref_ms=t_ref,
        energy_budget_j=profile.device.energy_budget_j,
        energy_ref_j=e_ref,
    )
    params.update(overrides)
    return RewardConfig(**params)


def reward(result: EvalResult, bandwidth_bps: float, config: RewardConfig) -> float:
    """Eq.-style scalar reward for one evaluated action."""
    budget = config.energy_budget_j
    if budget is not None and result.total_energy_j > budget:
        return 0.0
    if result.total_latency_ms == 0.0:
        raise ValueError("zero total latency; profile must give every action positive latency")
    a = config.accuracy_weight(bandwidth_bps)
    b = 1.0 - a
    return a * result.accuracy + b * (config.latency_ref_ms / result.total_latency_ms)


def normalize_state(state: EnvState, config: RewardConfig) -> np.ndarray:
    """Map an EnvState to the 4-vector fed to the networks.

    latency -> T_ref/T clipped to [0, 1.5]; energy -> e/budget (or e/e_ref
    when unbudgeted), clipped likewise so a pathological transmission step
    cannot blow up the network input; accuracy passes through; bandwidth ->
    B/B_max.
    """
    t = 0.0 if state.latency_ms == 0 else config.latency_ref_ms / state.latency_ms
    scale = config.energy_budget_j if config.energy_budget_j is not None else config.energy_ref_j
    e = state.energy_j / scale if scale else 0.0
    return np.array(
        [
            min(max(t, 0.0), 1.5),
            min(max(e, 0.0), 1.5),
            state.accuracy,
            state.bandwidth_bps / config.bandwidth_max_bps,
        ],
        dtype=np.float64,
    )


def action_mask(profile: ModelProfile, bits_set=DEFAULT_ACTION_BITS) -> np.ndarray:
    """Validity of every slot of the flattened (ep, pp, bits) grid."""
    return ActionTable(profile, bits_set).valid.copy()


@dataclass
class BandwidthProcess:
    """Generator of the bandwidth trajectory an episode experiences.

    ``fixed`` repeats one value; ``grid_sweep`` cycles through an evenly
    spaced grid; ``bounded_random_walk`` takes uniform steps of at most
    ``step_bps`` and reflects off the range bounds. Replaying with the same
    seed reproduces the trajectory exactly.
    """

    kind: str = "bounded_random_walk"
    low_bps: float = 0.0
    high_bps: float = DEFAULT_BANDWIDTH_MAX_BPS
    step_bps: float = 1e6
    grid_points: int = 11
    seed: int = 0
    _rng: np.random.Generator = field(init=False, repr=False, default=None)
    _value: float = field(init=False, repr=False, default=0.0)
    _tick: int = field(init=False, repr=False, default=0)

    def __post_init__(self):
        if self.kind not in ("fixed", "grid_sweep", "bounded_random_walk"):
            raise ValueError(f"unknown bandwidth process {self.kind!r}")
        if self.high_bps < self.low_bps:
            raise ValueError("bandwidth range is inverted")
        self.reset()

    def reset(self) -> float:
        self._rng = np.random.Generator(np.random.PCG64(self.seed))
        self._tick = 0
        if self.kind == "fixed":
            self._value = self.high_bps
        elif self.kind == "grid_sweep":
            self._value = self._grid()[0]
        else:
            self._value = self._rng.uniform(self.low_bps, self.high_bps)
        return self._value

    def _grid(self):
        return np.linspace(self.low_bps, self.high_bps, self.grid_points)

    @property
    def value(self) -> float:
        return self._value

    def advance(self) -> float:
        self._tick += 1
        if self.kind == "fixed":
            pass
        elif self.kind == "grid_sweep":
            grid = self._grid()
            self._value = float(grid[self._tick % len(grid)])
        else:
            step = self._rng.uniform(-self.step_bps, self.step_bps)
            nxt = self._value + step
            if nxt > self.high_bps:
                nxt = 2 * self.high_bps - nxt
            if nxt < self.low_bps:
                nxt = 2 * self.low_bps - nxt
            self._value = float(min(max(nxt, self.low_bps), self.high_bps))
        return self._value


class CoInferEnv:
    """Gym-style episodic wrapper around the action table.

    reset() seeds the observation with the on-device reference decision so
    the first state already carries a realized (T, e, acc); each step
    evaluates the chosen action under the current bandwidth, rewards it, and
    advances the bandwidth process. Episodes are fixed-horizon.

    Invalid actions (a pp beyond the chosen branch) and actions that cannot
    transmit at the current rate yield reward 0 and leave the realized part
    of the state unchanged; ``info`` flags them. Under the default
    ``invalid_actions="mask"`` policy agents never sample such slots.
    """

    def __init__(
        self,
        profile: ModelProfile,
        table: Optional[ActionTable] = None,
        reward_config: Optional[RewardConfig] = None,
        bandwidth: Optional[BandwidthProcess] = None,
        bits_set=DEFAULT_ACTION_BITS,
        channel_mode: str = "raw_rate",
        horizon: int = DEFAULT_HORIZON,
        invalid_actions: str = "mask",
    ):
        if invalid_actions not in ("mask", "zero_reward"):
            raise ValueError(f"unknown invalid-action policy {invalid_actions!r}")
        self.profile = profile
        self.table = table if table is not None else ActionTable(profile, bits_set)
        self.reward_config = (
            reward_config if reward_config is not None else default_reward_config(profile)
        )
        self.bandwidth = bandwidth if bandwidth is not None else BandwidthProcess()
        self.channel_mode = channel_mode
        self.horizon = horizon
        self.invalid_actions = invalid_actions
        self.mask = self.table.valid.copy()
        self.n_actions = self.table.size
        self.state_dim = 4
        self._state: EnvState = None
        self._t = 0

    def _channel(self, bandwidth_bps: float) -> ChannelConfig:
        return ChannelConfig(
            bandwidth_bps=bandwidth_bps,
            mode=self.channel_mode,
            tx_power_w=self.profile.device.tx_power_w,
            sinr=self.profile.device.sinr,
        )

    @property
    def state(self) -> EnvState:
        return self._state

    def observe(self) -> np.ndarray:
        return normalize_state(self._state, self.reward_config)

    def reset(self, bandwidth_bps: Optional[float] = None) -> np.ndarray:
        if bandwidth_bps is not None:
            self.bandwidth = BandwidthProcess(
                kind="fixed", low_bps=bandwidth_bps, high_bps=bandwidth_bps
            )
        b = self.bandwidth.reset()
        ref_flat = self.table.flat_index(_reference_action(self.table))
        res = self.table.evaluate_flat(ref_flat, self._channel(max(b, 1.0)))
        self._state = EnvState(
            latency_ms=res.total_latency_ms,
            energy_j=res.total_energy_j,
            accuracy=res.accuracy,
            bandwidth_bps=b,
        )
        self._t = 0
        return self.observe()

    def step(self, action_index: int):
        if self._state is None:
            raise RuntimeError("step() before reset()")
        b = self._state.bandwidth_bps
        info = {"bandwidth_bps": b, "invalid": False, "untransmittable": False}
        r = 0.0
        if not self.mask[action_index]:
            info["invalid"] = True
            new = self._state
        else:
            channel = self._channel(b)
            rate = channel.rate_bps()
            if self.table.tx_bytes[action_index] > 0 and rate <= 0:
                info["untransmittable"] = True
                new = self._state
            else:
                res = self.table.evaluate_flat(action_index, channel)
                r = reward(res, b, self.reward_config)
                info["result"] = res
                info["action"] = self.table.action_at(action_index)
                new = EnvState(
                    latency_ms=res.total_latency_ms,
                    energy_j=res.total_energy_j,
                    accuracy=res.accuracy,
                    bandwidth_bps=b,
                )
        next_b = self.bandwidth.advance()
        self._state = EnvState(new.latency_ms, new.energy_j, new.accuracy, next_b)
        self._t += 1
        done = self._t >= self.horizon
        return self.observe(), r, done, info


def _reference_action(table: ActionTable):
    from .system_model import on_device_reference

    return on_device_reference(table.profile, table)
