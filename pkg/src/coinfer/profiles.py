"""Measured characteristics of a multi-branch network and a device/edge pair.

A profile bundles three things:

* a branch topology: the ordered layer list of the deepest branch, per-layer
  latency on device and edge, feature-map sizes, and the early-exit points
  with their accuracies;
* a quantization-accuracy table: how much accuracy is lost when the feature
  map at a given layer is quantized to a given bit width before transmission;
* a device description: the constants of the compute/transmission energy
  model and an optional energy budget.

Profiles are plain immutable data loaded from a single JSON document (see
``docs/profile_format.md``). Everything downstream of this module is pure
computation over a loaded profile.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

PROFILE_FORMAT_VERSION = 1

# Feature-map sparsity assumed by the compression estimator when a layer does
# not override it: post-activation maps are mostly zeros, everything else is
# treated as dense.
DEFAULT_KIND_SPARSITY = {"activation": 0.9}


class ProfileError(Exception):
    """Base class for profile loading problems."""


class ProfileParseError(ProfileError):
    """The file is not a well-formed profile document."""


class ProfileValidationError(ProfileError):
    """The document parsed but violates a profile invariant."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("invalid profile: " + "; ".join(self.violations))


class LayerKind(str, Enum):
    CONVOLUTION = "convolution"
    FULLY_CONNECTED = "fully_connected"
    ACTIVATION = "activation"
    POOLING = "pooling"
    NORMALIZATION = "normalization"
    OTHER = "other"


@dataclass(frozen=True)
class LayerProfile:
    """One layer of the deepest branch.

    Latencies are measured averages in milliseconds. ``output_bytes`` is the
    size of the raw 32-bit feature map the layer emits; ``processed_bytes``
    is the amount of data the layer reads and ``cycles_per_byte`` its
    computational intensity, the two factors of the compute-energy model.
    ``sparsity`` optionally overrides the per-kind default used when
    estimating how well this layer's output compresses.
    """

    name: str
    kind: LayerKind
    device_latency_ms: float
    edge_latency_ms: float
    output_bytes: int
    cycles_per_byte: float
    processed_bytes: int
    sparsity: Optional[float] = None

    def effective_sparsity(self) -> float:
        if self.sparsity is not None:
            return self.sparsity
        return DEFAULT_KIND_SPARSITY.get(self.kind.value, 0.0)


@dataclass(frozen=True)
class ExitPoint:
    """An early-exit branch: the first ``layer_count`` layers plus a head."""

    exit_id: int
    layer_count: int
    accuracy: float


@dataclass(frozen=True)
class BranchTopology:
    layers: tuple
    exits: tuple
    input_bytes: int  # raw input transmitted when partitioning at layer 0

    def layer_count(self, exit_id: int) -> int:
        for e in self.exits:
            if e.exit_id == exit_id:
                return e.layer_count
        raise KeyError(f"unknown exit {exit_id}")

    def exit_accuracy(self, exit_id: int) -> float:
        for e in self.exits:
            if e.exit_id == exit_id:
                return e.accuracy
        raise KeyError(f"unknown exit {exit_id}")

    @property
    def total_layers(self) -> int:
        return len(self.layers)


@dataclass(frozen=True)
class QuantAccuracyTable:
    """Accuracy drop of quantizing the feature map at (exit, layer, bits).

    ``drops`` maps ``(exit_id, layer_index, bits)`` to a fraction in [0, 1];
    layer_index is 1-based and only interior partition points (0 < layer <
    branch length) carry entries. Lookups for cells that were never supplied
    raise instead of silently defaulting.
    """

    bits: tuple
    drops: dict = field(default_factory=dict)

    def drop(self, exit_id: int, layer_index: int, bits: int) -> float:
        try:
            return self.drops[(exit_id, layer_index, bits)]
        except KeyError:
            raise KeyError(
                f"no accuracy-drop entry for exit={exit_id} "
                f"layer={layer_index} bits={bits}"
            ) from None


@dataclass(frozen=True)
class DeviceProfile:
    """Constants of the device energy model and transmission link.

    ``k0`` is the device energy constant (J*s^2/cycle), ``cpu_hz`` the pinned
    CPU frequency, ``tx_power_w`` the transmission power and ``sinr`` the
    link signal-to-interference-plus-noise ratio used by the shannon channel
    mode. ``energy_budget_j`` is the per-inference device energy cap; None
    means unconstrained.
    """

    k0: float
    cpu_hz: float
    tx_power_w: float
    sinr: float
    energy_budget_j: Optional[float] = None


@dataclass(frozen=True)
class ModelProfile:
    name: str
    topology: BranchTopology
    quant_table: QuantAccuracyTable
    device: DeviceProfile

    @property
    def exits(self):
        return self.topology.exits

    @property
    def layers(self):
        return self.topology.layers


def _is_finite_number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def validate_profile(profile: ModelProfile) -> list:
    """Return the list of invariant violations (empty means valid).

    Total: never raises on any ModelProfile, no matter how degenerate.
    """
    v = []
    topo = profile.topology

    if not topo.layers:
        v.append("topology has an empty layer list")
    for i, layer in enumerate(topo.layers, start=1):
        for attr in ("device_latency_ms", "edge_latency_ms", "cycles_per_byte"):
            val = getattr(layer, attr)
            if not _is_finite_number(val) or val < 0:
                v.append(f"layer {i} ({layer.name}): {attr}={val!r} must be finite and >= 0")
        for attr in ("output_bytes", "processed_bytes"):
            val = getattr(layer, attr)
            if not isinstance(val, int) or isinstance(val, bool) or val < 0:
                v.append(f"layer {i} ({layer.name}): {attr}={val!r} must be a non-negative integer")
        if layer.sparsity is not None and not (
            _is_finite_number(layer.sparsity) and 0.0 <= layer.sparsity <= 1.0
        ):
            v.append(f"layer {i} ({layer.name}): sparsity={layer.sparsity!r} must be in [0, 1]")

    if not isinstance(topo.input_bytes, int) or topo.input_bytes < 0:
        v.append(f"input_bytes={topo.input_bytes!r} must be a non-negative integer")

    if not topo.exits:
        v.append("topology has no exits")
    else:
        counts = [e.layer_count for e in topo.exits]
        accs = [e.accuracy for e in topo.exits]
        ids = [e.exit_id for e in topo.exits]
        if ids != list(range(1, len(ids) + 1)):
            v.append(f"exit ids {ids} must be 1..{len(ids)}")
        if any(c != int(c) or c <= 0 for c in counts):
            v.append(f"exit layer_counts {counts} must be positive integers")
        elif not all(a < b for a, b in zip(counts, counts[1:])):
            v.append("exit layer_counts not strictly increasing")
        if topo.layers and counts and counts[-1] != len(topo.layers):
            v.append(
                f"last exit covers {counts[-1]} layers but topology has {len(topo.layers)}"
            )
        if not all(_is_finite_number(a) and 0.0 <= a <= 1.0 for a in accs):
            v.append(f"exit accuracies {accs} must be fractions in [0, 1]")
        elif not all(a < b for a, b in zip(accs, accs[1:])):
            v.append("exit accuracies not strictly increasing")

    table = profile.quant_table
    if not table.bits:
        v.append("quantization table lists no bit widths")
    if any(not isinstance(b, int) or b < 1 for b in table.bits):
        v.append(f"quantization bit widths {table.bits} must be positive integers")
    for key, drop in table.drops.items():
        if not (_is_finite_number(drop) and 0.0 <= drop <= 1.0):
            v.append(f"accuracy drop at {key} is {drop!r}, must be in [0, 1]")
    # For a fixed (exit, layer) the drop must not grow with the bit width.
    cells = {}
    for (exit_id, layer, bits), drop in sorted(table.drops.items()):
        cells.setdefault((exit_id, layer), []).append((bits, drop))
    for (exit_id, layer), pairs in sorted(cells.items()):
        pairs.sort()
        for (b1, d1), (b2, d2) in zip(pairs, pairs[1:]):
            if isinstance(d1, (int, float)) and isinstance(d2, (int, float)) and d2 > d1:
                v.append(
                    f"accuracy drop increases with bits at exit={exit_id} "
                    f"layer={layer}: drop({b2})={d2} > drop({b1})={d1}"
                )

    dev = profile.device
    for attr, positive in (
        ("k0", True),
        ("cpu_hz", True),
        ("tx_power_w", True),
        ("sinr", False),
    ):
        val = getattr(dev, attr)
        if not _is_finite_number(val) or val < 0 or (positive and val <= 0):
            bound = "> 0" if positive else ">= 0"
            v.append(f"device {attr}={val!r} must be finite and {bound}")
    if dev.energy_budget_j is not None and not (
        _is_finite_number(dev.energy_budget_j) and dev.energy_budget_j > 0
    ):
        v.append(f"device energy_budget_j={dev.energy_budget_j!r} must be > 0 or null")

    return v


def _parse_layer(obj, index):
    try:
        kind = LayerKind(obj["kind"])
    except ValueError:
        raise ProfileParseError(
            f"layer {index}: unknown kind {obj.get('kind')!r}"
        ) from None
    return LayerProfile(
        name=obj["name"],
        kind=kind,
        device_latency_ms=obj["device_latency_ms"],
        edge_latency_ms=obj["edge_latency_ms"],
        output_bytes=obj["output_bytes"],
        cycles_per_byte=obj["cycles_per_byte"],
        processed_bytes=obj["processed_bytes"],
        sparsity=obj.get("sparsity"),
    )


def _parse_quant_table(obj, exits, kinds):
    bits = tuple(obj.get("bits", ()))
    drops = {}
    # Per-kind defaults expand to every interior partition point of every
    # branch; explicit entries override the expansion afterwards.
    kind_defaults = obj.get("kind_defaults", {})
    for e in exits:
        for layer_index in range(1, max(e.layer_count, 1)):
            if layer_index - 1 >= len(kinds):
                continue
            kind = kinds[layer_index - 1]
            per_kind = kind_defaults.get(kind)
            if per_kind is None:
                continue
            for b in bits:
                if str(b) in per_kind:
                    drops[(e.exit_id, layer_index, b)] = per_kind[str(b)]
    for entry in obj.get("entries", ()):
        drops[(entry["exit"], entry["layer"], entry["bits"])] = entry["drop"]
    return QuantAccuracyTable(bits=bits, drops=drops)


def profile_from_dict(doc: dict) -> ModelProfile:
    """Build a ModelProfile from a parsed JSON document (no validation)."""
    if not isinstance(doc, dict):
        raise ProfileParseError("profile document must be a JSON object")
    version = doc.get("version")
    if version != PROFILE_FORMAT_VERSION:
        raise ProfileParseError(
            f"unsupported profile version {version!r} "
            f"(this build reads version {PROFILE_FORMAT_VERSION})"
        )
    try:
        layers = tuple(
            _parse_layer(o, i) for i, o in enumerate(doc["layers"], start=1)
        )
        exits = tuple(
            ExitPoint(exit_id=o["exit"], layer_count=o["layers"], accuracy=o["accuracy"])
            for o in doc["exits"]
        )
        topo = BranchTopology(
            layers=layers, exits=exits, input_bytes=doc["input_bytes"]
        )
        kinds = [l.kind.value for l in layers]
        table = _parse_quant_table(doc.get("quantization", {}), exits, kinds)
        dev = doc["device"]
        device = DeviceProfile(
            k0=dev["k0"],
            cpu_hz=dev["cpu_hz"],
            tx_power_w=dev["tx_power_w"],
            sinr=dev["sinr"],
            energy_budget_j=dev.get("energy_budget_j"),
        )
    except ProfileParseError:
        raise
    except (KeyError, TypeError) as exc:
        raise ProfileParseError(f"malformed profile document: {exc!r}") from None
    return ModelProfile(
        name=doc.get("name", "unnamed"), topology=topo, quant_table=table, device=device
    )


def profile_to_dict(profile: ModelProfile) -> dict:
    """Inverse of profile_from_dict; load(save(p)) reproduces p exactly."""
    topo = profile.topology
    layers = []
    for l in topo.layers:
        obj = {
            "name": l.name,
            "kind": l.kind.value,
            "device_latency_ms": l.device_latency_ms,
            "edge_latency_ms": l.edge_latency_ms,
            "output_bytes": l.output_bytes,
            "cycles_per_byte": l.cycles_per_byte,
            "processed_bytes": l.processed_bytes,
        }
        if l.sparsity is not None:
            obj["sparsity"] = l.sparsity
        layers.append(obj)
    doc = {
        "version": PROFILE_FORMAT_VERSION,
        "name": profile.name,
        "input_bytes": topo.input_bytes,
        "layers": layers,
        "exits": [
            {"exit": e.exit_id, "layers": e.layer_count, "accuracy": e.accuracy}
            for e in topo.exits
        ],
        "quantization": {
            "bits": list(profile.quant_table.bits),
            "entries": [
                {"exit": k[0], "layer": k[1], "bits": k[2], "drop": d}
                for k, d in sorted(profile.quant_table.drops.items())
            ],
        },
        "device": {
            "k0": profile.device.k0,
            "cpu_hz": profile.device.cpu_hz,
            "tx_power_w": profile.device.tx_power_w,
            "sinr": profile.device.sinr,
            "energy_budget_j": profile.device.energy_budget_j,
        },
    }
    return doc


def load_profile(path) -> ModelProfile:
    """Load and fully validate a profile JSON file.

    Raises ProfileParseError for malformed documents and
    ProfileValidationError (listing every violated invariant) for well-formed
    but inconsistent ones.
    """
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ProfileParseError(f"{path}: not valid JSON ({exc})") from None
    profile = profile_from_dict(doc)
    violations = validate_profile(profile)
    if violations:
        raise ProfileValidationError(violations)
    return profile


def save_profile(profile: ModelProfile, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(profile_to_dict(profile), fh, indent=2, sort_keys=False)
        fh.write("\n")


def bundled_profile_path(name: str = "alexnet_branchy") -> str:
    """Path of a profile shipped with the package."""
    from importlib.resources import files

    return str(files("coinfer").joinpath("data", f"{name}.profile.json"))
