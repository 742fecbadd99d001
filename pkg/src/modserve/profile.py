"""Latency/accuracy profiles for multimodal models.

A profile records, for one model, the measured batch latency of every
non-empty modality combination and the prediction accuracy each combination
achieves.  Profiles are the sole performance model used by the offline solver
and the simulator; nothing here touches a real model or GPU.

Latencies are kept as integer microseconds internally so that all solver
arithmetic is exact; the on-disk format uses decimal milliseconds.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

# Scale used wherever accuracies enter integer arithmetic.  Profiles with at
# most four decimal places of accuracy are handled exactly.
ACC_SCALE = 10_000

_MODALITY_NAMES = (
    "audio", "video", "text", "image", "flow", "depth", "lidar", "radar",
    "imu", "gps", "thermal", "gesture", "gaze", "touch", "emg", "eeg",
)


class ProfileError(ValueError):
    """Raised when a profile violates its invariants or fails to parse."""

    def __init__(self, message: str, field: str | None = None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


def scaled_accuracy(acc: float) -> int:
    """Accuracy as an integer number of 1e-4 units, floored.

    Exact for accuracies with at most four decimal places; the 1e-9 guard
    absorbs binary representation noise on such values.
    """
    return math.floor(acc * ACC_SCALE + 1e-9)


@dataclass(frozen=True, order=True)
class ModalityCombo:
    """A non-empty subset of a model's modalities, encoded as a bitmask.

    Bit k set means modality k (in the profile's declared order) is included.
    """

    bitmask: int
    n_modalities: int

    def __post_init__(self):
        if self.bitmask <= 0:
            raise ProfileError("empty modality combination", field="combo")
        if self.bitmask >= (1 << self.n_modalities):
            raise ProfileError(
                f"bitmask {self.bitmask} out of range for {self.n_modalities} modalities",
                field="combo",
            )

    def members(self, modalities: tuple[str, ...]) -> tuple[str, ...]:
        return tuple(m for k, m in enumerate(modalities) if self.bitmask >> k & 1)

    def label(self, modalities: tuple[str, ...]) -> str:
        return "+".join(self.members(modalities))


def enumerate_combos(n_modalities: int) -> list[ModalityCombo]:
    """All 2^n - 1 non-empty modality combinations, ascending by bitmask."""
    if not 1 <= n_modalities <= 16:
        raise ProfileError(f"n_modalities must be in 1..16, got {n_modalities}")
    return [ModalityCombo(mask, n_modalities) for mask in range(1, 1 << n_modalities)]


def count_strategies(job_size: int, n_options: int) -> int:
    """Number of ways to pick one of ``n_options`` per-request choices for a
    job of ``job_size`` requests, counting unordered outcomes (multisets).

    Equals C(job_size + n_options - 1, n_options - 1).
    """
    if job_size < 1:
        raise ValueError(f"job_size must be >= 1, got {job_size}")
    if n_options < 1:
        raise ValueError(f"n_options must be >= 1, got {n_options}")
    return math.comb(job_size + n_options - 1, n_options - 1)


@dataclass(frozen=True)
class ModelProfile:
    """Validated latency/accuracy tables for one model.

    ``latency_us[mask - 1][batch - 1]`` is the latency of running one batch of
    the given size through combo ``mask``; ``accuracy[mask - 1]`` the combo's
    accuracy.  Tables are dense: every combo has entries for batch 1..max_batch.
    Immutable and hashable; safe to share across threads.
    """

    name: str
    modalities: tuple[str, ...]
    max_batch: int
    latency_us: tuple[tuple[int, ...], ...]
    accuracy: tuple[float, ...]

    def __post_init__(self):
        n = len(self.modalities)
        if not 1 <= n <= 16:
            raise ProfileError(f"need 1..16 modalities, got {n}", field="modalities")
        if len(set(self.modalities)) != n:
            raise ProfileError("duplicate modality name", field="modalities")
        if self.max_batch < 1:
            raise ProfileError(f"max_batch must be >= 1, got {self.max_batch}", field="max_batch")
        n_combos = (1 << n) - 1
        if len(self.latency_us) != n_combos or len(self.accuracy) != n_combos:
            raise ProfileError(
                f"incomplete latency table: expected {n_combos} combos",
                field="latency_ms",
            )
        for mask_idx, row in enumerate(self.latency_us):
            label = ModalityCombo(mask_idx + 1, n).label(self.modalities)
            if len(row) != self.max_batch:
                raise ProfileError(
                    f"incomplete latency table: combo '{label}' has {len(row)} "
                    f"entries, expected {self.max_batch}",
                    field="latency_ms",
                )
            if any(v <= 0 for v in row):
                raise ProfileError(f"non-positive latency for combo '{label}'", field="latency_ms")
            if any(b < a for a, b in zip(row, row[1:])):
                raise ProfileError(
                    f"latency not non-decreasing in batch size for combo '{label}'",
                    field="latency_ms",
                )
        for mask_idx, acc in enumerate(self.accuracy):
            if not 0.0 <= acc <= 1.0:
                label = ModalityCombo(mask_idx + 1, n).label(self.modalities)
                raise ProfileError(
                    f"accuracy out of range for combo '{label}': {acc}", field="accuracy"
                )
        # Accuracies are quantized to 1e-4 so every downstream computation
        # (solver credits, effective accuracies) is exact integer arithmetic.
        object.__setattr__(
            self, "accuracy", tuple(round(a * ACC_SCALE) / ACC_SCALE for a in self.accuracy)
        )

    @property
    def n_modalities(self) -> int:
        return len(self.modalities)

    @property
    def all_modalities_mask(self) -> int:
        return (1 << self.n_modalities) - 1

    def combos(self) -> list[ModalityCombo]:
        return enumerate_combos(self.n_modalities)

    def part_latency_us(self, mask: int, batch: int) -> int:
        """Latency of one batch of ``batch`` requests on combo ``mask``."""
        if not 1 <= batch <= self.max_batch:
            raise ProfileError(f"batch {batch} outside 1..{self.max_batch}")
        return self.latency_us[mask - 1][batch - 1]

    def combo_accuracy(self, mask: int) -> float:
        return self.accuracy[mask - 1]

    def combo_accuracy_scaled(self, mask: int) -> int:
        return scaled_accuracy(self.accuracy[mask - 1])

    @property
    def min_accuracy(self) -> float:
        return min(self.accuracy)

    @property
    def max_accuracy(self) -> float:
        return max(self.accuracy)

    def combo_label(self, mask: int) -> str:
        return ModalityCombo(mask, self.n_modalities).label(self.modalities)

    def parse_combo_label(self, label: str) -> int:
        """Bitmask for a '+'-joined combo label; names must be declared ones."""
        mask = 0
        for part in label.split("+"):
            try:
                k = self.modalities.index(part)
            except ValueError:
                raise ProfileError(f"unknown modality '{part}' in combo '{label}'") from None
            if mask >> k & 1:
                raise ProfileError(f"duplicate modality '{part}' in combo '{label}'")
            mask |= 1 << k
        return mask

    def fingerprint(self) -> str:
        """Stable content hash, used to bind strategy matrices to profiles."""
        payload = json.dumps(
            {
                "model": self.name,
                "modalities": list(self.modalities),
                "max_batch": self.max_batch,
                "latency_us": [list(r) for r in self.latency_us],
                "accuracy": list(self.accuracy),
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


def demo_profile() -> ModelProfile:
    """The two-modality desk profile used throughout the docs and tests.

    Audio is cheap and least accurate, video mid, both modalities slow and
    best; batch latency is linear in batch size.
    """
    return ModelProfile(
        name="av-demo",
        modalities=("audio", "video"),
        max_batch=2,
        latency_us=(
            (20_000, 40_000),   # audio
            (30_000, 60_000),   # video
            (60_000, 120_000),  # audio+video
        ),
        accuracy=(0.67, 0.70, 0.80),
    )


class _StrictLoader(yaml.SafeLoader):
    """SafeLoader that rejects duplicate mapping keys (silent overwrite hides
    duplicate combo entries)."""


def _strict_mapping(loader, node, deep=False):
    seen = set()
    for key_node, _ in node.value:
        key = loader.construct_object(key_node, deep=deep)
        if key in seen:
            raise ProfileError(
                f"duplicate key '{key}' at line {key_node.start_mark.line + 1}"
            )
        seen.add(key)
    return yaml.SafeLoader.construct_mapping(loader, node, deep)


_StrictLoader.add_constructor(
    yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _strict_mapping
)


def _require(doc: dict, field: str):
    if field not in doc:
        raise ProfileError("missing field", field=field)
    return doc[field]


def load_profile(path: str | Path) -> ModelProfile:
    """Load and validate a profile document.

    Raises ProfileError naming the offending field (and line, for parse and
    duplicate-key errors) on any invariant violation.
    """
    text = Path(path).read_text()
    try:
        doc = yaml.load(text, Loader=_StrictLoader)
    except yaml.YAMLError as exc:
        raise ProfileError(f"not a valid profile document: {exc}") from exc
    if not isinstance(doc, dict):
        raise ProfileError("profile document must be a mapping")

    name = _require(doc, "model")
    modalities = tuple(_require(doc, "modalities"))
    if not modalities or not all(isinstance(m, str) for m in modalities):
        raise ProfileError("must be a non-empty list of names", field="modalities")
    max_batch = _require(doc, "max_batch")
    if not isinstance(max_batch, int) or max_batch < 1:
        raise ProfileError(f"must be a positive integer, got {max_batch!r}", field="max_batch")

    # Probe constructs combos against the declared modality list, catching
    # out-of-range and unknown names with a field diagnostic.
    probe = ModelProfile(
        name=str(name),
        modalities=modalities,
        max_batch=1,
        latency_us=tuple((1,) for _ in range((1 << len(modalities)) - 1)),
        accuracy=tuple(0.0 for _ in range((1 << len(modalities)) - 1)),
    )

    acc_doc = _require(doc, "accuracy")
    lat_doc = _require(doc, "latency_ms")
    if not isinstance(acc_doc, dict):
        raise ProfileError("must map combo labels to fractions", field="accuracy")
    if not isinstance(lat_doc, dict):
        raise ProfileError("must map combo labels to latency lists", field="latency_ms")

    n_combos = (1 << len(modalities)) - 1
    accuracy = [None] * n_combos
    latency = [None] * n_combos

    for label, value in acc_doc.items():
        mask = probe.parse_combo_label(str(label))
        if not isinstance(value, (int, float)):
            raise ProfileError(f"accuracy for '{label}' is not a number", field="accuracy")
        accuracy[mask - 1] = float(value)
    for label, values in lat_doc.items():
        mask = probe.parse_combo_label(str(label))
        if not isinstance(values, list) or not all(isinstance(v, (int, float)) for v in values):
            raise ProfileError(f"latency for '{label}' must be a list of numbers", field="latency_ms")
        latency[mask - 1] = tuple(int(round(float(v) * 1000.0)) for v in values)

    for idx in range(n_combos):
        label = probe.combo_label(idx + 1)
        if accuracy[idx] is None:
            raise ProfileError(f"missing accuracy for combo '{label}'", field="accuracy")
        if latency[idx] is None:
            raise ProfileError(
                f"incomplete latency table: missing combo '{label}'", field="latency_ms"
            )

    return ModelProfile(
        name=str(name),
        modalities=modalities,
        max_batch=max_batch,
        latency_us=tuple(latency),
        accuracy=tuple(accuracy),
    )


def _ms_repr(us: int) -> float:
    return us / 1000.0


def save_profile(profile: ModelProfile, path: str | Path) -> None:
    """Write a profile as a YAML document; inverse of load_profile."""
    doc = {
        "model": profile.name,
        "modalities": list(profile.modalities),
        "max_batch": profile.max_batch,
        "accuracy": {
            profile.combo_label(c.bitmask): profile.combo_accuracy(c.bitmask)
            for c in profile.combos()
        },
        "latency_ms": {
            profile.combo_label(c.bitmask): [
                _ms_repr(profile.part_latency_us(c.bitmask, b))
                for b in range(1, profile.max_batch + 1)
            ]
            for c in profile.combos()
        },
    }
    Path(path).write_text(yaml.safe_dump(doc, sort_keys=False))


def scale_latency(profile: ModelProfile, factor: float) -> ModelProfile:
    """Profile with every latency multiplied by ``factor``; accuracy unchanged.

    Models cheaper variants of a model (e.g. reduced-precision deployments) as
    well as deliberately skewed estimate tables for robustness studies.
    """
    if factor <= 0:
        raise ProfileError(f"scale factor must be positive, got {factor}")
    scaled = tuple(
        tuple(max(1, int(round(v * factor))) for v in row) for row in profile.latency_us
    )
    return ModelProfile(
        name=profile.name,
        modalities=profile.modalities,
        max_batch=profile.max_batch,
        latency_us=scaled,
        accuracy=profile.accuracy,
    )


@dataclass(frozen=True)
class SynthSpec:
    """Parameters for the synthetic profile generator."""

    n_modalities: int = 2
    max_batch: int = 4
    latency_ms: tuple[float, float] = (5.0, 80.0)
    accuracy: tuple[float, float] = (0.5, 0.95)
    name: str = "synthetic"

    def __post_init__(self):
        if not 1 <= self.n_modalities <= 16:
            raise ProfileError(f"n_modalities must be in 1..16, got {self.n_modalities}")
        if self.max_batch < 1:
            raise ProfileError("max_batch must be >= 1")
        lo, hi = self.latency_ms
        if not 0 < lo <= hi:
            raise ProfileError(f"infeasible latency range {self.latency_ms}")
        alo, ahi = self.accuracy
        if not 0.0 <= alo <= ahi <= 1.0:
            raise ProfileError(f"infeasible accuracy range {self.accuracy}")


def synth_profile(spec: SynthSpec, seed: int) -> ModelProfile:
    """Deterministic synthetic profile satisfying all ModelProfile invariants.

    Combo accuracy is superset-monotone (adding a modality never lowers
    accuracy) and batch latency increases strictly with batch size, with
    per-request cost falling as batches grow.
    """
    rng = np.random.default_rng(seed)
    n = spec.n_modalities
    names = _MODALITY_NAMES[:n]
    lat_lo, lat_hi = spec.latency_ms
    acc_lo, acc_hi = spec.accuracy

    # Each modality contributes a diminishing-returns accuracy gain and an
    # additive latency cost; supersets therefore gain accuracy and pay latency.
    gains = rng.uniform(0.25, 0.75, size=n)
    costs_ms = rng.uniform(lat_lo, lat_hi, size=n)

    accuracy = []
    latency = []
    for mask in range(1, 1 << n):
        miss = 1.0
        base_ms = 0.0
        for k in range(n):
            if mask >> k & 1:
                miss *= 1.0 - gains[k]
                base_ms += costs_ms[k]
        accuracy.append(round(acc_lo + (acc_hi - acc_lo) * (1.0 - miss), 4))
        row = [max(1000, int(round(base_ms * 1000)))]
        for _ in range(1, spec.max_batch):
            # Marginal cost of one more request: 55..100% of the base batch.
            step = max(1000, int(round(base_ms * rng.uniform(0.55, 1.0) * 1000)))
            row.append(row[-1] + step)
        latency.append(tuple(row))

    return ModelProfile(
        name=f"{spec.name}-{seed}",
        modalities=names,
        max_batch=spec.max_batch,
        latency_us=tuple(latency),
        accuracy=tuple(accuracy),
    )
