"""Core value types shared by the whole tracking engine.

The filter state is a Poisson point process (PPP) intensity over
undetected objects plus a set of Bernoulli components, one per potential
track.  Everything here is an immutable value object: operations build
successors instead of mutating, so posteriors are safe to copy, hash out
to JSON, and share between worker threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

STATE_DIM = 4  # (x [m], y [m], vx [m/s], vy [m/s])

# Symmetric-PSD acceptance: eigenvalues may dip this far below zero.
PSD_TOLERANCE = 1e-9

KNOWN_CLASSES = (
    "bicycle",
    "bus",
    "car",
    "motorcycle",
    "pedestrian",
    "trailer",
    "truck",
)


class InvalidDensityError(ValueError):
    """A Gaussian density failed the symmetric-PSD / finite checks."""


class SingularMatrixError(ValueError):
    """A matrix that must be inverted is numerically singular."""


def _frozen_array(values, shape) -> np.ndarray:
    arr = np.array(values, dtype=float).reshape(shape)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class GaussianDensity:
    """Single-object state PDF: 4D mean and 4x4 covariance.

    The constructor symmetrizes tiny numerical asymmetries and rejects
    gross ones; positive semi-definiteness is checked by `violations`
    (diagnostic) and enforced by the Kalman operations.
    """

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = _frozen_array(self.mean, (STATE_DIM,))
        cov = np.array(self.covariance, dtype=float).reshape(STATE_DIM, STATE_DIM)
        asym = np.max(np.abs(cov - cov.T))
        if asym > 1e-6 * max(1.0, np.max(np.abs(cov))):
            raise InvalidDensityError(f"covariance asymmetric (max deviation {asym:g})")
        cov = _frozen_array(0.5 * (cov + cov.T), (STATE_DIM, STATE_DIM))
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @property
    def position(self) -> np.ndarray:
        return self.mean[:2]

    @property
    def velocity(self) -> np.ndarray:
        return self.mean[2:]

    def violations(self) -> list[str]:
        out = []
        if not np.all(np.isfinite(self.mean)):
            out.append("density mean not finite")
        if not np.all(np.isfinite(self.covariance)):
            out.append("density covariance not finite")
        else:
            min_eig = float(np.min(np.linalg.eigvalsh(self.covariance)))
            if min_eig < -PSD_TOLERANCE:
                out.append(f"density covariance not PSD (min eigenvalue {min_eig:g})")
        return out

    def check(self) -> "GaussianDensity":
        # Cholesky of the tolerance-shifted covariance is a fast PSD test;
        # fall back to the slow path only to build the error message.
        try:
            np.linalg.cholesky(self.covariance + PSD_TOLERANCE * np.eye(STATE_DIM))
            if np.all(np.isfinite(self.mean)):
                return self
        except np.linalg.LinAlgError:
            pass
        raise InvalidDensityError("; ".join(self.violations()) or "density check failed")


@dataclass(frozen=True, eq=False)
class GaussianMixture:
    """Unnormalized weighted Gaussian mixture.

    Houses the PPP intensity over undetected/newborn objects; weights are
    nonnegative but need not sum to one.
    """

    components: tuple[tuple[float, GaussianDensity], ...] = ()

    def __post_init__(self):
        comps = tuple((float(w), d) for w, d in self.components)
        object.__setattr__(self, "components", comps)

    def __len__(self) -> int:
        return len(self.components)

    def __iter__(self):
        return iter(self.components)

    @property
    def weights(self) -> np.ndarray:
        return np.array([w for w, _ in self.components], dtype=float)

    def total_weight(self) -> float:
        return float(sum(w for w, _ in self.components))

    def violations(self) -> list[str]:
        out = []
        for idx, (w, d) in enumerate(self.components):
            if w < 0:
                out.append(f"mixture component {idx} has negative weight {w:g}")
            out.extend(f"mixture component {idx}: {v}" for v in d.violations())
        return out


@dataclass(frozen=True)
class PassthroughState:
    """Detector fields carried through the tracker without filtering."""

    z: float
    size: tuple[float, float, float]  # (l, w, h) [m]
    yaw: float
    velocity: tuple[float, float]
    detection_score: float
    class_name: str

    def __post_init__(self):
        object.__setattr__(self, "size", tuple(float(v) for v in self.size))
        object.__setattr__(self, "velocity", tuple(float(v) for v in self.velocity))

    def violations(self) -> list[str]:
        out = []
        if any(s <= 0 for s in self.size):
            out.append(f"box size must be positive, got {self.size}")
        if not 0.0 <= self.detection_score <= 1.0:
            out.append(f"detection score {self.detection_score:g} outside [0, 1]")
        return out


@dataclass(frozen=True)
class BernoulliComponent:
    """One potential track: existence probability plus state density.

    `track_id` is None until the component is first selected as a new
    track; once assigned it never changes.  `last_score` is the score of
    the most recent associated detection and doubles as the detection
    probability on later misdetection updates.
    """

    existence: float
    density: GaussianDensity
    track_id: int | None
    last_score: float
    passthrough: PassthroughState

    def violations(self) -> list[str]:
        out = []
        if not 0.0 <= self.existence <= 1.0:
            out.append(f"existence {self.existence:g} outside [0, 1]")
        if not 0.0 <= self.last_score <= 1.0:
            out.append(f"last_score {self.last_score:g} outside [0, 1]")
        if self.track_id is not None and self.track_id < 0:
            out.append(f"track_id {self.track_id} negative")
        out.extend(self.density.violations())
        out.extend(self.passthrough.violations())
        return out


@dataclass(frozen=True)
class PmbPosterior:
    """Poisson multi-Bernoulli filter state: one PPP and one global hypothesis.

    `birth_seeds` holds the previous frame's unassociated measurement
    positions; the next prediction centers newborn intensity there.
    """

    ppp: GaussianMixture = GaussianMixture()
    bernoullis: tuple[BernoulliComponent, ...] = ()
    next_track_id: int = 0
    frame_index: int = 0
    birth_seeds: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "bernoullis", tuple(self.bernoullis))
        object.__setattr__(
            self, "birth_seeds", tuple((float(x), float(y)) for x, y in self.birth_seeds)
        )

    def violations(self) -> list[str]:
        return validate_posterior(self)


@dataclass(frozen=True)
class PmbmPosterior:
    """PMBM filter state: one PPP and a weighted list of global hypotheses."""

    ppp: GaussianMixture = GaussianMixture()
    hypotheses: tuple[tuple[float, tuple[BernoulliComponent, ...]], ...] = (
        (1.0, ()),
    )
    max_hypotheses: int = 1
    next_track_id: int = 0
    frame_index: int = 0
    birth_seeds: tuple[tuple[float, float], ...] = ()

    def violations(self) -> list[str]:
        out = []
        if self.max_hypotheses < 1:
            out.append(f"max_hypotheses {self.max_hypotheses} < 1")
        if len(self.hypotheses) > self.max_hypotheses:
            out.append(
                f"{len(self.hypotheses)} hypotheses exceed cap {self.max_hypotheses}"
            )
        total = sum(w for w, _ in self.hypotheses)
        if self.hypotheses and abs(total - 1.0) > 1e-9:
            out.append(f"hypothesis weights sum to {total!r}, expected 1")
        for w, bernoullis in self.hypotheses:
            for b in bernoullis:
                out.extend(b.violations())
        out.extend(self.ppp.violations())
        return out


@dataclass(frozen=True)
class Detection:
    """One preprocessed 3D box: BEV center is filtered, the rest passes through."""

    center: tuple[float, float]
    passthrough: PassthroughState
    frame_index: int
    timestamp: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))

    @property
    def score(self) -> float:
        return self.passthrough.detection_score

    def center_array(self) -> np.ndarray:
        return np.array(self.center, dtype=float)


@dataclass(frozen=True)
class FrameDetections:
    """All detections of one frame (single scene, possibly mixed classes)."""

    frame_index: int
    timestamp: float
    detections: tuple[Detection, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "detections", tuple(self.detections))


@dataclass(frozen=True)
class TrackOutput:
    """One extracted track state for one frame."""

    frame_index: int
    track_id: int
    center: tuple[float, float]
    passthrough: PassthroughState
    tracking_score: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))


def validate_posterior(posterior: PmbPosterior) -> list[str]:
    """Return human-readable descriptions of every violated invariant.

    Diagnostic only: an empty list means the posterior satisfies all the
    type invariants (PSD covariances, probability bounds, unique track
    IDs, ID counter ahead of every assigned ID).
    """
    out: list[str] = []
    out.extend(posterior.ppp.violations())
    seen: dict[int, int] = {}
    for idx, b in enumerate(posterior.bernoullis):
        out.extend(f"bernoulli {idx}: {v}" for v in b.violations())
        if b.track_id is not None:
            if b.track_id in seen:
                out.append(
                    f"track_id {b.track_id} assigned to bernoullis "
                    f"{seen[b.track_id]} and {idx} (IDs must be unique)"
                )
            else:
                seen[b.track_id] = idx
            if b.track_id >= posterior.next_track_id:
                out.append(
                    f"next_track_id {posterior.next_track_id} not beyond "
                    f"assigned id {b.track_id}"
                )
    if posterior.frame_index < 0:
        out.append(f"frame_index {posterior.frame_index} negative")
    return out


# ---------------------------------------------------------------------------
# Canonical JSON encoding for posterior snapshots (debug dumps).
#
# Field-by-field layout:
#   schema_version     int, currently 1
#   frame_index        int
#   next_track_id      int
#   birth_seeds        list of [x, y]
#   ppp                list of {"weight": w, "mean": [4], "covariance": [[4x4]]}
#   bernoullis         list of {
#       "existence": r, "track_id": int or null, "last_score": s,
#       "mean": [4], "covariance": [[4x4]],
#       "passthrough": {"z", "size" [3], "yaw", "velocity" [2],
#                        "detection_score", "class_name"}
#   }
#
# Numbers are emitted via repr so decode(encode(p)) is bit-for-bit exact.
# ---------------------------------------------------------------------------

def canonical_dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n"


def _passthrough_to_dict(p: PassthroughState) -> dict:
    return {
        "z": p.z,
        "size": list(p.size),
        "yaw": p.yaw,
        "velocity": list(p.velocity),
        "detection_score": p.detection_score,
        "class_name": p.class_name,
    }


def _passthrough_from_dict(d: dict) -> PassthroughState:
    return PassthroughState(
        z=d["z"],
        size=tuple(d["size"]),
        yaw=d["yaw"],
        velocity=tuple(d["velocity"]),
        detection_score=d["detection_score"],
        class_name=d["class_name"],
    )


def _bernoulli_to_dict(b: BernoulliComponent) -> dict:
    return {
        "existence": b.existence,
        "track_id": b.track_id,
        "last_score": b.last_score,
        "mean": b.density.mean.tolist(),
        "covariance": b.density.covariance.tolist(),
        "passthrough": _passthrough_to_dict(b.passthrough),
    }


def _bernoulli_from_dict(d: dict) -> BernoulliComponent:
    return BernoulliComponent(
        existence=d["existence"],
        density=GaussianDensity(d["mean"], d["covariance"]),
        track_id=d["track_id"],
        last_score=d["last_score"],
        passthrough=_passthrough_from_dict(d["passthrough"]),
    )


def posterior_to_json(posterior: PmbPosterior) -> str:
    doc = {
        "schema_version": 1,
        "frame_index": posterior.frame_index,
        "next_track_id": posterior.next_track_id,
        "birth_seeds": [list(s) for s in posterior.birth_seeds],
        "ppp": [
            {"weight": w, "mean": d.mean.tolist(), "covariance": d.covariance.tolist()}
            for w, d in posterior.ppp
        ],
        "bernoullis": [_bernoulli_to_dict(b) for b in posterior.bernoullis],
    }
    return canonical_dumps(doc)


def posterior_from_json(text: str) -> PmbPosterior:
    doc = json.loads(text)
    if doc.get("schema_version") != 1:
        raise ValueError(f"unsupported posterior schema_version {doc.get('schema_version')!r}")
    ppp = GaussianMixture(
        tuple(
            (c["weight"], GaussianDensity(c["mean"], c["covariance"]))
            for c in doc["ppp"]
        )
    )
    return PmbPosterior(
        ppp=ppp,
        bernoullis=tuple(_bernoulli_from_dict(b) for b in doc["bernoullis"]),
        next_track_id=doc["next_track_id"],
        frame_index=doc["frame_index"],
        birth_seeds=tuple(tuple(s) for s in doc["birth_seeds"]),
    )
