"""Global gate map: one Kalman filter per gate over (x, y, z, yaw), fed by
back-projected detections that are associated to coarse prior anchors."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .camera import CameraModel, FrameTransform, GateObservation, Pose, back_project_gate, wrap_angle

ASSOCIATION_RADIUS = 6.0
PROCESS_NOISE = 1e-6
PRIOR_POSITION_SIGMA = 3.0
PRIOR_YAW_SIGMA = math.pi
NOISE_PER_METRE = 0.05
YAW_NOISE = 0.05


class MappingError(ArithmeticError):
    pass


def _check_pd(cov: np.ndarray, what: str) -> None:
    if not np.allclose(cov, cov.T, atol=1e-9, rtol=0.0):
        raise MappingError(f"{what} is not symmetric")
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise MappingError(f"{what} is not positive definite") from None


@dataclass
class GateFilter:
    gate_id: int
    state: np.ndarray  # x, y, z, yaw
    covariance: np.ndarray
    prior_anchor: np.ndarray
    update_count: int = 0
    last_measurement: Pose | None = None

    @classmethod
    def from_anchor(cls, gate_id: int, anchor, yaw: float = 0.0) -> "GateFilter":
        anchor = np.asarray(anchor, dtype=np.float64).reshape(3)
        cov = np.diag([PRIOR_POSITION_SIGMA**2] * 3 + [PRIOR_YAW_SIGMA**2])
        return cls(gate_id, np.array([*anchor, wrap_angle(yaw)]), cov, anchor.copy())

    def pose(self) -> Pose:
        return Pose(tuple(self.state[:3]), float(self.state[3]))

    def copy(self) -> "GateFilter":
        return GateFilter(self.gate_id, self.state.copy(), self.covariance.copy(), self.prior_anchor.copy(),
                          self.update_count, self.last_measurement)


def measurement_noise(distance: float) -> np.ndarray:
    s = NOISE_PER_METRE * distance
    return np.diag([s * s, s * s, s * s, YAW_NOISE**2])


def measurement_jacobian() -> np.ndarray:
    """The pose is observed directly, so the Jacobian is the identity."""
    return np.eye(4)


def ekf_update(filt: GateFilter, measured: Pose, meas_noise: np.ndarray, process_noise: float = PROCESS_NOISE) -> GateFilter:
    """Static-gate predict + update; returns a new filter.

    Measurement components with infinite variance are dropped, which is the
    exact zero-gain limit for them.
    """
    _check_pd(filt.covariance, "prior covariance")
    r = np.asarray(meas_noise, dtype=np.float64)
    p = filt.covariance + process_noise * np.eye(4)
    finite = np.isfinite(np.diag(r))
    out = filt.copy()
    out.covariance = p
    out.last_measurement = measured
    if finite.any():
        h = measurement_jacobian()[finite]
        r_f = r[np.ix_(finite, finite)]
        _check_pd(r_f, "measurement noise")
        z = np.array([*measured.position, measured.yaw])
        innov = z[finite] - h @ filt.state
        # yaw residual is an angle
        yaw_row = np.nonzero(finite)[0] == 3
        innov[yaw_row] = [wrap_angle(a) for a in innov[yaw_row]]
        s = h @ p @ h.T + r_f
        k = np.linalg.solve(s, h @ p).T
        i_kh = np.eye(4) - k @ h
        # Joseph form keeps the covariance symmetric PD
        cov = i_kh @ p @ i_kh.T + k @ r_f @ k.T
        out.state = filt.state + k @ innov
        out.covariance = 0.5 * (cov + cov.T)
    out.state[3] = wrap_angle(out.state[3])
    out.update_count = filt.update_count + 1
    _check_pd(out.covariance, "posterior covariance")
    return out


@dataclass
class GateMap:
    filters: dict[int, GateFilter] = field(default_factory=dict)
    radius: float = ASSOCIATION_RADIUS

    @classmethod
    def from_anchors(cls, anchors, radius: float = ASSOCIATION_RADIUS) -> "GateMap":
        """``anchors``: iterable of ``{"id", "x", "y", "z"}`` (optional ``"yaw"``)."""
        m = cls(radius=radius)
        for a in anchors:
            gid = int(a["id"])
            if gid in m.filters:
                raise ValueError(f"duplicate gate id {gid}")
            m.filters[gid] = GateFilter.from_anchor(gid, (a["x"], a["y"], a["z"]), a.get("yaw", 0.0))
        ids = sorted(m.filters)
        for i, a in enumerate(ids):
            for b in ids[i + 1 :]:
                gap = float(np.linalg.norm(m.filters[a].prior_anchor - m.filters[b].prior_anchor))
                if gap < radius:
                    raise ValueError(f"anchors {a} and {b} are {gap:.2f} m apart (< association radius {radius} m)")
        return m

    def __len__(self) -> int:
        return len(self.filters)

    def to_dict(self) -> dict:
        gates = []
        for gid in sorted(self.filters):
            f = self.filters[gid]
            last = f.last_measurement
            gates.append({
                "id": gid,
                "anchor": f.prior_anchor.tolist(),
                "estimate": {"x": f.state[0], "y": f.state[1], "z": f.state[2], "yaw": f.state[3]},
                "covariance": f.covariance.tolist(),
                "updates": f.update_count,
                "last_measurement": None if last is None else {
                    "x": last.position[0], "y": last.position[1], "z": last.position[2], "yaw": last.yaw},
            })
        return {"association_radius": self.radius, "gates": gates}


def load_anchors(path: str | Path) -> list[dict]:
    data = json.loads(Path(path).read_text())
    if not isinstance(data, list):
        raise ValueError(f"{path}: expected a JSON list of anchors")
    for k, a in enumerate(data):
        missing = {"id", "x", "y", "z"} - set(a)
        if missing:
            raise ValueError(f"{path}: anchor {k} lacks {sorted(missing)}")
    return data


def dump_map(path: str | Path, gate_map: GateMap) -> None:
    Path(path).write_text(json.dumps(gate_map.to_dict(), indent=2) + "\n")


def associate_measurement(gate_map: GateMap, measured: Pose) -> int | None:
    """Nearest anchor within the association radius (ties: lower id), else None."""
    if not gate_map.filters:
        raise ValueError("cannot associate against an empty map")
    pos = measured.xyz
    best = min(gate_map.filters.values(), key=lambda f: (float(np.linalg.norm(f.prior_anchor - pos)), f.gate_id))
    if float(np.linalg.norm(best.prior_anchor - pos)) <= gate_map.radius:
        return best.gate_id
    return None


def map_update(gate_map: GateMap, cam: CameraModel, drone_pose: Pose, observations,
               mount: FrameTransform | None = None) -> tuple[GateMap, list[dict]]:
    """Back-project, associate and fuse each observation; returns the map and an event log."""
    events = []
    for obs in observations:
        measured = back_project_gate(cam, obs, drone_pose, mount)
        gid = associate_measurement(gate_map, measured)
        record = {"measurement": {"x": measured.position[0], "y": measured.position[1],
                                  "z": measured.position[2], "yaw": measured.yaw},
                  "distance": obs.distance}
        if gid is None:
            events.append({"event": "rejected", **record})
            continue
        gate_map.filters[gid] = ekf_update(gate_map.filters[gid], measured, measurement_noise(obs.distance))
        events.append({"event": "fused", "gate": gid, **record})
    return gate_map, events


# -- synthetic flight replay ---------------------------------------------------


@dataclass
class FlightConfig:
    gates: int = 4
    track_radius: float = 9.0
    anchor_offset: float = 1.0  # how coarse the prior anchors are (metres)
    frames_per_gate: int = 25
    pixel_noise: float = 1.0
    distance_noise: float = 0.03  # relative
    yaw_noise: float = 0.05
    d_max: float = 12.0


def make_track(cfg: FlightConfig, rng) -> tuple[list, list[dict]]:
    """Gates on a circle, headings tangent to it; anchors perturbed."""
    from .datagen.render import Gate

    gates, anchors = [], []
    for k in range(cfg.gates):
        phi = 2 * math.pi * k / cfg.gates
        center = (cfg.track_radius * math.cos(phi), cfg.track_radius * math.sin(phi), float(rng.uniform(1.3, 2.0)))
        gates.append(Gate(center, wrap_angle(phi + math.pi / 2)))
        off = rng.normal(size=3)
        off *= cfg.anchor_offset / max(np.linalg.norm(off), 1e-9) * rng.uniform(0.2, 1.0)
        anchors.append({"id": k, "x": center[0] + off[0], "y": center[1] + off[1], "z": center[2] + off[2]})
    return gates, anchors


def simulate_flight(cam: CameraModel, cfg: FlightConfig = FlightConfig(), seed: int = 0):
    """Fly an approach to every gate, feeding noisy detections to a gate map.

    Returns ``(gate_map, true_gates, events)``.
    """
    from .datagen.render import label_gate

    rng = np.random.default_rng(seed)
    gates, anchors = make_track(cfg, rng)
    gate_map = GateMap.from_anchors(anchors)
    events: list[dict] = []
    for gate in gates:
        for step in range(cfg.frames_per_gate):
            dist = 8.0 - 6.5 * step / max(cfg.frames_per_gate - 1, 1)
            lateral = rng.uniform(-0.4, 0.4)
            pos = np.array(gate.center) - dist * gate.normal + lateral * gate.lateral
            pos[2] = gate.center[2] + rng.uniform(-0.3, 0.3)
            drone = Pose(tuple(pos), gate.yaw + rng.uniform(-0.15, 0.15))
            observations = []
            for g in gates:
                lab = label_gate(g, drone, cam, cfg.d_max)
                if lab is None:
                    continue
                u = lab.u + rng.normal(0, cfg.pixel_noise)
                v = lab.v + rng.normal(0, cfg.pixel_noise)
                if not cam.in_image((u, v)):
                    continue
                observations.append(GateObservation(
                    u, v, lab.d * (1 + rng.normal(0, cfg.distance_noise)), lab.theta + rng.normal(0, cfg.yaw_noise)))
            _, ev = map_update(gate_map, cam, drone, observations)
            events.extend(ev)
    return gate_map, gates, events
