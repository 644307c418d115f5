"""Denavit-Hartenberg chains, forward kinematics, and position Jacobians.

A chain is a fixed sequence of DH links; a subset of links is actuated by
named joint angles.  Joint positions (shoulder, elbow, wrist, ...) are the
origins of selected link frames.  All heavy paths are batched over poses.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .errors import InvalidArgumentError, ParseError, UnsupportedShapeError

FD_STEP = 1e-6  # central-difference step for the Jacobian, radians


def dh_transform(theta: float, d: float, a: float, alpha: float) -> np.ndarray:
    """Homogeneous transform Rot_z(theta) Trans_z(d) Trans_x(a) Rot_x(alpha)."""
    vals = (theta, d, a, alpha)
    if not all(np.isfinite(vals)):
        raise InvalidArgumentError(f"non-finite DH parameters: {vals}")
    ct, st = np.cos(theta), np.sin(theta)
    ca, sa = np.cos(alpha), np.sin(alpha)
    return np.array(
        [
            [ct, -st * ca, st * sa, a * ct],
            [st, ct * ca, -ct * sa, a * st],
            [0.0, sa, ca, d],
            [0.0, 0.0, 0.0, 1.0],
        ]
    )


@dataclass(frozen=True)
class DhLink:
    """One DH link; ``joint_index`` selects the actuating angle, if any."""

    theta_offset: float
    d: float
    a: float
    alpha: float
    joint_index: int | None = None

    def __post_init__(self):
        vals = (self.theta_offset, self.d, self.a, self.alpha)
        if not all(np.isfinite(vals)):
            raise InvalidArgumentError(f"non-finite link parameters: {vals}")
        if self.a < 0:
            raise InvalidArgumentError(f"link length a must be >= 0, got {self.a}")
        if not -np.pi <= self.alpha <= np.pi:
            raise InvalidArgumentError(f"alpha must lie in [-pi, pi], got {self.alpha}")


@dataclass(frozen=True)
class JointAngleState:
    """Angle vector with the timestamp it was observed or predicted at."""

    angles: np.ndarray
    timestamp: float


@dataclass(frozen=True)
class KinematicChain:
    """DH links plus static angle bounds, velocity bounds, and named frames.

    ``named_joints`` maps a joint name to a frame index in [0, len(links)];
    frame 0 is the base, frame i follows link i.
    """

    links: tuple[DhLink, ...]
    angle_lb: np.ndarray
    angle_ub: np.ndarray
    vel_ub: np.ndarray
    named_joints: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        indices = sorted(l.joint_index for l in self.links if l.joint_index is not None)
        if indices != list(range(len(indices))):
            raise InvalidArgumentError(f"joint indices must cover 0..p_n-1 exactly once, got {indices}")
        p_n = len(indices)
        for name, arr in (("angle_lb", self.angle_lb), ("angle_ub", self.angle_ub), ("vel_ub", self.vel_ub)):
            arr = np.asarray(arr, dtype=float)
            object.__setattr__(self, name, arr)
            if arr.shape != (p_n,):
                raise UnsupportedShapeError(f"{name} must have shape ({p_n},), got {arr.shape}")
        if np.any(self.angle_lb >= self.angle_ub):
            raise InvalidArgumentError("angle_lb must be < angle_ub elementwise")
        if np.any(self.vel_ub <= 0):
            raise InvalidArgumentError("vel_ub must be positive")
        for name, idx in self.named_joints.items():
            if not 0 <= idx <= len(self.links):
                raise InvalidArgumentError(f"named joint {name!r} has invalid frame index {idx}")

    @property
    def p_n(self) -> int:
        return sum(1 for l in self.links if l.joint_index is not None)

    @property
    def rest_pose(self) -> np.ndarray:
        """Canonical pose at the midpoint of the static bounds."""
        return 0.5 * (self.angle_lb + self.angle_ub)

    def check_angles(self, angles: np.ndarray) -> np.ndarray:
        angles = np.asarray(angles, dtype=float)
        if angles.shape[-1] != self.p_n:
            raise UnsupportedShapeError(f"expected {self.p_n} angles, got shape {angles.shape}")
        return angles


def _link_matrices(link: DhLink, theta_joint: np.ndarray | None) -> np.ndarray:
    """Batch of 4x4 transforms for one link; theta_joint is (B,) or None."""
    theta = link.theta_offset if theta_joint is None else link.theta_offset + theta_joint
    ct, st = np.cos(theta), np.sin(theta)
    ca, sa = np.cos(link.alpha), np.sin(link.alpha)
    B = 1 if theta_joint is None else theta_joint.shape[0]
    M = np.zeros((B, 4, 4))
    M[:, 0, 0] = ct
    M[:, 0, 1] = -st * ca
    M[:, 0, 2] = st * sa
    M[:, 0, 3] = link.a * ct
    M[:, 1, 0] = st
    M[:, 1, 1] = ct * ca
    M[:, 1, 2] = -ct * sa
    M[:, 1, 3] = link.a * st
    M[:, 2, 1] = sa
    M[:, 2, 2] = ca
    M[:, 2, 3] = link.d
    M[:, 3, 3] = 1.0
    return M


def frames(chain: KinematicChain, angles: np.ndarray) -> np.ndarray:
    """All frame transforms for one pose, shape (len(links)+1, 4, 4)."""
    angles = chain.check_angles(np.atleast_1d(angles))
    out = [np.eye(4)]
    T = np.eye(4)
    for link in chain.links:
        tj = None if link.joint_index is None else angles[link.joint_index : link.joint_index + 1]
        T = T @ _link_matrices(link, tj)[0]
        out.append(T)
    return np.stack(out)


def joint_positions_batch(chain: KinematicChain, angles: np.ndarray, joints=None) -> dict[str, np.ndarray]:
    """Positions of named joints for a batch of poses.

    Args:
        angles: (B, p_n) joint angles.
        joints: joint names to report; defaults to all named joints.
    Returns:
        map of joint name to (B, 3) positions.
    """
    angles = chain.check_angles(np.atleast_2d(angles))
    names = list(chain.named_joints if joints is None else joints)
    for name in names:
        if name not in chain.named_joints:
            raise InvalidArgumentError(f"unknown joint {name!r}")
    wanted = {}
    for name in names:
        wanted.setdefault(chain.named_joints[name], []).append(name)
    B = angles.shape[0]
    out: dict[str, np.ndarray] = {}
    T = np.broadcast_to(np.eye(4), (B, 4, 4))
    for name in wanted.get(0, ()):
        out[name] = np.zeros((B, 3))
    for i, link in enumerate(chain.links, start=1):
        tj = None if link.joint_index is None else angles[:, link.joint_index]
        T = T @ _link_matrices(link, tj)
        for name in wanted.get(i, ()):
            out[name] = T[:, :3, 3].copy()
    return {name: out[name] for name in names}


def forward_kinematics(chain: KinematicChain, angles: np.ndarray) -> dict[str, np.ndarray]:
    """Positions of all named joints for a single pose."""
    batch = joint_positions_batch(chain, np.atleast_1d(np.asarray(angles, dtype=float))[None, :])
    return {name: pos[0] for name, pos in batch.items()}


def jacobian_batch(
    chain: KinematicChain, angles: np.ndarray, joint: str, step: float = FD_STEP, method: str = "fd"
) -> np.ndarray:
    """Position Jacobians, shape (B, 3, p_n).

    "fd" (default) is central differences, the reference definition of
    correctness here.  "analytic" builds the geometric Jacobian from a single
    forward pass (column j = z_{j-1} x (p_end - o_{j-1})) and exists for hot
    loops; it must agree with "fd" to finite-difference accuracy.
    """
    angles = chain.check_angles(np.atleast_2d(angles))
    if joint not in chain.named_joints:
        raise InvalidArgumentError(f"unknown joint {joint!r}")
    B, p = angles.shape
    if method == "fd":
        # One FK batch over all 2*p perturbed copies of every pose.
        perturbed = np.repeat(angles[:, None, :], 2 * p, axis=1)
        for c in range(p):
            perturbed[:, 2 * c, c] += step
            perturbed[:, 2 * c + 1, c] -= step
        pos = joint_positions_batch(chain, perturbed.reshape(B * 2 * p, p), [joint])[joint]
        pos = pos.reshape(B, p, 2, 3)
        return (pos[:, :, 0, :] - pos[:, :, 1, :]).transpose(0, 2, 1) / (2.0 * step)
    if method != "analytic":
        raise InvalidArgumentError(f"unknown jacobian method {method!r}")
    frame_idx = chain.named_joints[joint]
    T = np.broadcast_to(np.eye(4), (B, 4, 4))
    pivots = []  # (joint index, rotation axis, frame origin) before each link
    for link in chain.links[:frame_idx]:
        if link.joint_index is not None:
            pivots.append((link.joint_index, T[:, :3, 2], T[:, :3, 3]))
        tj = None if link.joint_index is None else angles[:, link.joint_index]
        T = T @ _link_matrices(link, tj)
    p_end = T[:, :3, 3]
    J = np.zeros((B, 3, p))
    for j, z_axis, origin in pivots:
        J[:, :, j] = np.cross(z_axis, p_end - origin)
    return J


def jacobian(chain: KinematicChain, angles: np.ndarray, joint: str, step: float = FD_STEP) -> np.ndarray:
    """Position Jacobian (3, p_n) of one named joint at one pose."""
    return jacobian_batch(chain, np.atleast_1d(np.asarray(angles, dtype=float))[None, :], joint, step)[0]


def pseudo_det_batch(J: np.ndarray) -> np.ndarray:
    """sqrt(det(J J^T)) for a batch of (3, p_n) Jacobians, p_n >= 3."""
    J = np.asarray(J, dtype=float)
    if J.ndim != 3 or J.shape[1] != 3:
        raise UnsupportedShapeError(f"expected (B, 3, p_n) Jacobians, got shape {J.shape}")
    if J.shape[2] < 3:
        raise UnsupportedShapeError(f"pseudo-determinant needs p_n >= 3, got p_n = {J.shape[2]}")
    if not np.all(np.isfinite(J)):
        raise InvalidArgumentError("non-finite Jacobian entries")
    dets = np.linalg.det(J @ J.transpose(0, 2, 1))
    return np.sqrt(np.clip(dets, 0.0, None))


def pseudo_det(J: np.ndarray) -> float:
    """sqrt(det(J J^T)) of a single (3, p_n) Jacobian."""
    J = np.asarray(J, dtype=float)
    if J.ndim != 2:
        raise UnsupportedShapeError(f"expected a (3, p_n) Jacobian, got shape {J.shape}")
    return float(pseudo_det_batch(J[None])[0])


def chain_from_dict(spec: dict) -> KinematicChain:
    """Build a chain from its JSON-level dict representation."""
    try:
        links = tuple(
            DhLink(
                theta_offset=float(l["theta_offset"]),
                d=float(l["d"]),
                a=float(l["a"]),
                alpha=float(l["alpha"]),
                joint_index=None if l.get("joint_index") is None else int(l["joint_index"]),
            )
            for l in spec["links"]
        )
        return KinematicChain(
            links=links,
            angle_lb=np.asarray(spec["angle_lb"], dtype=float),
            angle_ub=np.asarray(spec["angle_ub"], dtype=float),
            vel_ub=np.asarray(spec["vel_ub"], dtype=float),
            named_joints={str(k): int(v) for k, v in spec.get("named_joints", {}).items()},
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"invalid chain definition: {exc}") from exc


def chain_to_dict(chain: KinematicChain) -> dict:
    return {
        "links": [
            {
                "theta_offset": l.theta_offset,
                "d": l.d,
                "a": l.a,
                "alpha": l.alpha,
                "joint_index": l.joint_index,
            }
            for l in chain.links
        ],
        "angle_lb": chain.angle_lb.tolist(),
        "angle_ub": chain.angle_ub.tolist(),
        "vel_ub": chain.vel_ub.tolist(),
        "named_joints": dict(chain.named_joints),
    }


def load_chain(path: str) -> KinematicChain:
    """Load a chain definition from a JSON file."""
    with open(path) as fh:
        text = fh.read()
    try:
        spec = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid chain JSON: {exc.msg}", line=exc.lineno) from exc
    return chain_from_dict(spec)


def save_chain(chain: KinematicChain, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(chain_to_dict(chain), fh, indent=2)
        fh.write("\n")


def default_chain() -> KinematicChain:
    """The packaged 4-DOF arm: three intersecting shoulder axes plus an elbow."""
    text = resources.files("cpdp").joinpath("data/arm_chain.json").read_text()
    return chain_from_dict(json.loads(text))
