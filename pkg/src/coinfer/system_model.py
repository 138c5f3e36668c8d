"""Deterministic evaluation of co-inference decisions.

An action is the triple (exit point, partition point, quantization bits).
Layers 1..pp run on the device, the (compressed) feature map at pp crosses
the link, and layers pp+1..exit run on the edge. pp = 0 ships the raw input
to the edge; pp = branch length keeps everything local.

Latency is the sum of the three stages. Device compute energy is
k0 * f^2 * sum(cycles_per_byte_i * processed_bytes_i) over device-side
layers; transmission energy is P * transmitted_bytes / rate, so it equals
P times the transmission latency. Edge-side compute energy is excluded:
the budget constrains the end device only.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .profiles import ModelProfile
from .quantization import CompressionModel, accuracy_after

DEFAULT_ACTION_BITS = (8, 12, 16)

MB_PER_S = 1e6  # bandwidth figures in this package are bytes/second


@dataclass(frozen=True)
class Action:
    ep: int  # exit point, 1-based
    pp: int  # partition point, 0..layer_count(ep)
    bits: int  # quantization bit width for the transmitted map

    def is_valid(self, profile: ModelProfile, bits_set=DEFAULT_ACTION_BITS) -> bool:
        try:
            count = profile.topology.layer_count(self.ep)
        except KeyError:
            return False
        return 0 <= self.pp <= count and self.bits in bits_set


@dataclass(frozen=True)
class ChannelConfig:
    """Link model: ``raw_rate`` uses the bandwidth as the byte rate directly;
    ``shannon`` scales it by log2(1 + P * sinr)."""

    bandwidth_bps: float  # bytes per second
    mode: str = "raw_rate"
    tx_power_w: float = 1.0
    sinr: float = 1.0

    def rate_bps(self) -> float:
        if self.mode == "raw_rate":
            return self.bandwidth_bps
        if self.mode == "shannon":
            return self.bandwidth_bps * np.log2(1.0 + self.tx_power_w * self.sinr)
        raise ValueError(f"unknown channel mode {self.mode!r}")


@dataclass(frozen=True)
class EvalResult:
    device_latency_ms: float
    transmission_latency_ms: float
    edge_latency_ms: float
    total_latency_ms: float
    compute_energy_j: float
    transmission_energy_j: float
    total_energy_j: float
    accuracy: float
    transmitted_bytes: int


def channel_for(profile: ModelProfile, bandwidth_bps: float, mode: str = "raw_rate") -> ChannelConfig:
    return ChannelConfig(
        bandwidth_bps=bandwidth_bps,
        mode=mode,
        tx_power_w=profile.device.tx_power_w,
        sinr=profile.device.sinr,
    )


def enumerate_actions(profile: ModelProfile, bits_set=DEFAULT_ACTION_BITS) -> list:
    """All valid actions in deterministic (ep, pp, bits) order."""
    if not bits_set:
        raise ValueError("bits set is empty")
    actions = []
    for e in profile.topology.exits:
        for pp in range(e.layer_count + 1):
            for bits in bits_set:
                actions.append(Action(ep=e.exit_id, pp=pp, bits=bits))
    return actions


class ActionTable:
    """Per-action static quantities, computed once per profile.

    Everything bandwidth-independent (device/edge latency sums, payload
    bytes, compute energy, accuracy) is tabulated over the flattened
    (ep, pp, bits) grid so that sweeping bandwidths, stepping environments
    and exhaustive argmax are plain array arithmetic. The flattened grid is
    (n_exits, max_layer_count + 1, n_bits) in enumerate_actions order, with
    a validity mask for pp values beyond a branch's length.
    """

    def __init__(
        self,
        profile: ModelProfile,
        bits_set=DEFAULT_ACTION_BITS,
        quantize_raw_input: bool = False,
        compression_seed: int = 0,
        literal_level_count: bool = False,
    ):
        if not bits_set:
            raise ValueError("bits set is empty")
        self.profile = profile
        self.bits_set = tuple(bits_set)
        self.quantize_raw_input = quantize_raw_input
        levels_of = (lambda b: b + 1) if literal_level_count else None
        self.compression = CompressionModel(profile, seed=compression_seed, levels_of=levels_of)

        topo = profile.topology
        exits = topo.exits
        n_exits = len(exits)
        max_pp = max(e.layer_count for e in exits)
        n_bits = len(self.bits_set)
        shape = (n_exits, max_pp + 1, n_bits)
        self.shape = shape
        self.size = n_exits * (max_pp + 1) * n_bits

        dev_lat = np.array([l.device_latency_ms for l in topo.layers])
        edge_lat = np.array([l.edge_latency_ms for l in topo.layers])
        cycles = np.array(
            [l.cycles_per_byte * l.processed_bytes for l in topo.layers]
        )
        dev_cum = np.concatenate([[0.0], np.cumsum(dev_lat)])
        edge_cum = np.concatenate([[0.0], np.cumsum(edge_lat)])
        cyc_cum = np.concatenate([[0.0], np.cumsum(cycles)])
        k = profile.device.k0 * profile.device.cpu_hz ** 2

        valid = np.zeros(shape, dtype=bool)
        device_ms = np.zeros(shape)
        edge_ms = np.zeros(shape)
        tx_bytes = np.zeros(shape, dtype=np.int64)
        compute_j = np.zeros(shape)
        acc = np.zeros(shape)

        for i, e in enumerate(exits):
            count = e.layer_count
            for pp in range(count + 1):
                for j, bits in enumerate(self.bits_set):
                    valid[i, pp, j] = True
                    device_ms[i, pp, j] = dev_cum[pp]
                    edge_ms[i, pp, j] = edge_cum[count] - edge_cum[pp]
                    compute_j[i, pp, j] = k * cyc_cum[pp]
                    if pp == count:
                        tx_bytes[i, pp, j] = 0
                    elif pp == 0:
                        tx_bytes[i, pp, j] = self.compression.raw_input_bytes(
                            bits, quantize_raw_input
                        )
                    else:
                        tx_bytes[i, pp, j] = self.compression.layer_payload_bytes(pp, bits)
                    acc[i, pp, j] = accuracy_after(
                        profile, e.exit_id, pp, bits, quantize_raw_input
                    )

        self.valid = valid.reshape(-1)
        self.device_ms = device_ms.reshape(-1)
        self.edge_ms = edge_ms.reshape(-1)
        self.tx_bytes = tx_bytes.reshape(-1)
        self.compute_j = compute_j.reshape(-1)
        self.accuracy = acc.reshape(-1)
        self._exit_ids = [e.exit_id for e in exits]

    # --- flattened-index helpers -------------------------------------------------

    def flat_index(self, action: Action) -> int:
        i = self._exit_ids.index(action.ep)
        j = self.bits_set.index(action.bits)
        return (i * self.shape[1] + action.pp) * self.shape[2] + j

    def action_at(self, flat: int) -> Action:
        n_pp, n_bits = self.shape[1], self.shape[2]
        i, rest = divmod(flat, n_pp * n_bits)
        pp, j = divmod(rest, n_bits)
        return Action(ep=self._exit_ids[i], pp=pp, bits=self.bits_set[j])

    def valid_actions(self) -> list:
        return [self.action_at(i) for i in np.nonzero(self.valid)[0]]

    # --- evaluation --------------------------------------------------------------

    def latency_energy(self, channel: ChannelConfig):
        """Vectorized (T_ms, e_J) over the flattened grid at one bandwidth.

        Actions that must transmit over a zero-rate link get infinite
        latency/energy; callers treat them as unattainable.
        """
        rate = channel.rate_bps()
        with np.errstate(divide="ignore", invalid="ignore"):
            tx_s = np.where(
                self.tx_bytes > 0,
                np.divide(self.tx_bytes, rate, where=rate > 0)
                if rate > 0
                else np.inf,
                0.0,
            )
        total_ms = self.device_ms + self.edge_ms + 1e3 * tx_s
        energy_j = self.compute_j + channel.tx_power_w * tx_s
        return total_ms, energy_j

    def evaluate_flat(self, flat: int, channel: ChannelConfig) -> EvalResult:
        if not self.valid[flat]:
            raise ValueError(f"action {self.action_at(flat)} is invalid for this profile")
        bytes_out = int(self.tx_bytes[flat])
        rate = channel.rate_bps()
        if bytes_out > 0 and rate <= 0:
            raise ValueError("zero channel rate with a non-empty payload")
        tx_s = bytes_out / rate if bytes_out > 0 else 0.0
        tx_ms = 1e3 * tx_s
        tx_j = channel.tx_power_w * tx_s
        return EvalResult(
            device_latency_ms=float(self.device_ms[flat]),
            transmission_latency_ms=tx_ms,
            edge_latency_ms=float(self.edge_ms[flat]),
            total_latency_ms=float(self.device_ms[flat] + self.edge_ms[flat] + tx_ms),
            compute_energy_j=float(self.compute_j[flat]),
            transmission_energy_j=tx_j,
            total_energy_j=float(self.compute_j[flat] + tx_j),
            accuracy=float(self.accuracy[flat]),
            transmitted_bytes=bytes_out,
        )

    def evaluate(self, action: Action, channel: ChannelConfig) -> EvalResult:
        return self.evaluate_flat(self.flat_index(action), channel)


def evaluate(
    profile: ModelProfile,
    action: Action,
    channel: ChannelConfig,
    bits_set=None,
    table: Optional[ActionTable] = None,
    quantize_raw_input: bool = False,
) -> EvalResult:
    """Evaluate one action under one channel condition.

    Builds a throwaway ActionTable when none is supplied; callers evaluating
    many actions should construct the table once and reuse it.
    """
    if table is None:
        if bits_set is None:
            bits_set = DEFAULT_ACTION_BITS if action.bits in DEFAULT_ACTION_BITS else (action.bits,)
        table = ActionTable(profile, bits_set, quantize_raw_input=quantize_raw_input)
    if not action.is_valid(profile, table.bits_set):
        raise ValueError(f"invalid action {action} for profile {profile.name!r}")
    return table.evaluate(action, channel)


def on_device_reference(profile: ModelProfile, table: Optional[ActionTable] = None) -> Action:
    """The baseline decision: deepest exit, fully local, no transmission."""
    deepest = profile.topology.exits[-1]
    bits = (table.bits_set if table is not None else DEFAULT_ACTION_BITS)[0]
    return Action(ep=deepest.exit_id, pp=deepest.layer_count, bits=bits)


def pareto_front(
    profile: ModelProfile,
    channel: ChannelConfig,
    bits_set=DEFAULT_ACTION_BITS,
    table: Optional[ActionTable] = None,
) -> list:
    """Actions not dominated in (latency down, accuracy up, energy down).

    Actions that cannot transmit at the given rate are excluded.
    """
    if table is None:
        table = ActionTable(profile, bits_set)
    total_ms, energy_j = table.latency_energy(channel)
    idx = np.nonzero(table.valid & np.isfinite(total_ms))[0]
    results = [(i, total_ms[i], table.accuracy[i], energy_j[i]) for i in idx]
    front = []
    for i, t, a, e in results:
        dominated = False
        for _, t2, a2, e2 in results:
            if (t2 <= t and a2 >= a and e2 <= e) and (t2 < t or a2 > a or e2 < e):
                dominated = True
                break
        if not dominated:
            front.append((table.action_at(i), table.evaluate_flat(i, channel)))
    return front
