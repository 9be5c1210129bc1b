"""Motion capture: 6D rotation codec and a restricted BVH reader/writer.

A clip is a float array of shape [n, 6 + 6m]: per frame 3 root-position
floats, 3 body-velocity floats (backward difference of the root position,
zero on the first frame), then the 6D representation of each of the m
rotating joints.  The BVH subset accepted here has a single HIERARCHY whose
root carries ``Xposition Yposition Zposition Zrotation Yrotation Xrotation``
channels and whose joints carry ``Zrotation Yrotation Xrotation``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import BadBvh, DegenerateInput

_ORTHO_TOL = 1e-6


# --- 6D rotation codec --------------------------------------------------------

def rotmat_to_6d(rot: np.ndarray) -> np.ndarray:
    """First two columns of a valid rotation matrix, concatenated."""
    rot = np.asarray(rot, dtype=np.float64)
    if rot.shape != (3, 3):
        raise DegenerateInput(f"expected 3x3 matrix, got {rot.shape}")
    if np.abs(rot.T @ rot - np.eye(3)).max() > _ORTHO_TOL or abs(np.linalg.det(rot) - 1.0) > _ORTHO_TOL:
        raise DegenerateInput("matrix is not a proper rotation")
    return np.concatenate([rot[:, 0], rot[:, 1]])


def sixd_to_rotmat(vec) -> np.ndarray:
    """Gram-Schmidt recovery: normalize a1, orthogonalize a2, cross for b3."""
    vec = np.asarray(vec, dtype=np.float64).reshape(6)
    a1, a2 = vec[:3], vec[3:]
    n1 = np.linalg.norm(a1)
    if n1 < _ORTHO_TOL:
        raise DegenerateInput("first 6D column is numerically zero")
    b1 = a1 / n1
    a2p = a2 - (b1 @ a2) * b1
    n2 = np.linalg.norm(a2p)
    if n2 < _ORTHO_TOL:
        raise DegenerateInput("6D columns are numerically parallel")
    b2 = a2p / n2
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=1)


def euler_zyx_to_rotmat(z_deg: float, y_deg: float, x_deg: float) -> np.ndarray:
    z, y, x = (math.radians(a) for a in (z_deg, y_deg, x_deg))
    cz, sz = math.cos(z), math.sin(z)
    cy, sy = math.cos(y), math.sin(y)
    cx, sx = math.cos(x), math.sin(x)
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    return rz @ ry @ rx


def rotmat_to_euler_zyx(rot: np.ndarray) -> tuple[float, float, float]:
    """(z, y, x) degrees such that Rz@Ry@Rx reproduces ``rot``."""
    rot = np.asarray(rot, dtype=np.float64)
    sy = -rot[2, 0]
    sy = min(1.0, max(-1.0, sy))
    y = math.asin(sy)
    if abs(sy) < 1.0 - 1e-9:
        z = math.atan2(rot[1, 0], rot[0, 0])
        x = math.atan2(rot[2, 1], rot[2, 2])
    else:  # gimbal lock: fold everything into z
        z = math.atan2(-rot[0, 1], rot[1, 1])
        x = 0.0
    return math.degrees(z), math.degrees(y), math.degrees(x)


# --- BVH ------------------------------------------------------------------------

ROOT_CHANNELS = ["Xposition", "Yposition", "Zposition",
                 "Zrotation", "Yrotation", "Xrotation"]
JOINT_CHANNELS = ["Zrotation", "Yrotation", "Xrotation"]


@dataclass
class BvhJoint:
    name: str
    offset: np.ndarray
    channels: list[str]
    children: list["BvhJoint"] = field(default_factory=list)
    end_offset: np.ndarray | None = None


@dataclass
class Skeleton:
    root: BvhJoint
    frame_time: float

    def rotating_joints(self) -> list[BvhJoint]:
        """Depth-first declaration order; the root counts as a rotating joint."""
        out: list[BvhJoint] = []

        def walk(j: BvhJoint):
            out.append(j)
            for c in j.children:
                walk(c)

        walk(self.root)
        return out


@dataclass
class MotionClip:
    frames: np.ndarray  # (n, 6 + 6m)
    frame_time: float
    skeleton: Skeleton | None = None

    @property
    def num_joints(self) -> int:
        return (self.frames.shape[1] - 6) // 6


class _Tokens:
    def __init__(self, text: str):
        self.toks = text.split()
        self.pos = 0

    def next(self) -> str:
        if self.pos >= len(self.toks):
            raise BadBvh("unexpected end of BVH input")
        tok = self.toks[self.pos]
        self.pos += 1
        return tok

    def expect(self, expected: str) -> None:
        tok = self.next()
        if tok != expected:
            raise BadBvh(f"expected '{expected}', got '{tok}'")

    def floats(self, n: int) -> np.ndarray:
        try:
            return np.array([float(self.next()) for _ in range(n)], dtype=np.float64)
        except ValueError as exc:
            raise BadBvh(f"bad number in BVH: {exc}") from None

    def exhausted(self) -> bool:
        return self.pos >= len(self.toks)


def _parse_joint(toks: _Tokens, name: str, is_root: bool) -> BvhJoint:
    toks.expect("{")
    toks.expect("OFFSET")
    offset = toks.floats(3)
    toks.expect("CHANNELS")
    n_channels = int(toks.next())
    channels = [toks.next() for _ in range(n_channels)]
    expected = ROOT_CHANNELS if is_root else JOINT_CHANNELS
    if channels != expected:
        raise BadBvh(f"joint '{name}' channels {channels} unsupported; need {expected}")
    joint = BvhJoint(name, offset, channels)
    while True:
        tok = toks.next()
        if tok == "JOINT":
            joint.children.append(_parse_joint(toks, toks.next(), is_root=False))
        elif tok == "End":
            toks.expect("Site")
            toks.expect("{")
            toks.expect("OFFSET")
            joint.end_offset = toks.floats(3)
            toks.expect("}")
        elif tok == "}":
            return joint
        else:
            raise BadBvh(f"unexpected token '{tok}' in joint '{name}'")


def parse_bvh(text: str) -> tuple[Skeleton, np.ndarray]:
    """(skeleton, raw channel values of shape (frames, 6 + 3*(m-1)))."""
    toks = _Tokens(text)
    toks.expect("HIERARCHY")
    toks.expect("ROOT")
    root = _parse_joint(toks, toks.next(), is_root=True)
    toks.expect("MOTION")
    toks.expect("Frames:")
    n_frames = int(toks.next())
    toks.expect("Frame")
    toks.expect("Time:")
    frame_time = float(toks.next())
    if frame_time <= 0:
        raise BadBvh(f"frame time must be positive, got {frame_time}")
    skeleton = Skeleton(root, frame_time)
    n_values = sum(len(j.channels) for j in skeleton.rotating_joints())
    values = np.array([[float(toks.next()) for _ in range(n_values)]
                       for _ in range(n_frames)], dtype=np.float64)
    if not toks.exhausted():
        raise BadBvh("trailing data after the last frame")
    return skeleton, values


def motion_bvh_to_6d(text: str) -> MotionClip:
    skeleton, values = parse_bvh(text)
    joints = skeleton.rotating_joints()
    n = values.shape[0]
    if n == 0:
        raise BadBvh("BVH has no frames")
    width = 6 + 6 * len(joints)
    frames = np.zeros((n, width), dtype=np.float64)
    frames[:, 0:3] = values[:, 0:3]
    frames[1:, 3:6] = (values[1:, 0:3] - values[:-1, 0:3]) / skeleton.frame_time
    col = 3  # channel cursor within `values` (after root position)
    out = 6
    for _ in joints:
        z, y, x = values[:, col], values[:, col + 1], values[:, col + 2]
        for i in range(n):
            rot = euler_zyx_to_rotmat(z[i], y[i], x[i])
            frames[i, out:out + 6] = rotmat_to_6d(rot)
        col += 3
        out += 6
    return MotionClip(frames, skeleton.frame_time, skeleton)


def _write_joint(lines: list[str], joint: BvhJoint, depth: int, is_root: bool) -> None:
    pad = "  " * depth
    lines.append(f"{pad}{'ROOT' if is_root else 'JOINT'} {joint.name}")
    lines.append(f"{pad}{{")
    inner = "  " * (depth + 1)
    off = joint.offset
    lines.append(f"{inner}OFFSET {off[0]:.6f} {off[1]:.6f} {off[2]:.6f}")
    lines.append(f"{inner}CHANNELS {len(joint.channels)} " + " ".join(joint.channels))
    for child in joint.children:
        _write_joint(lines, child, depth + 1, is_root=False)
    if joint.end_offset is not None or not joint.children:
        end = joint.end_offset if joint.end_offset is not None else np.zeros(3)
        lines.append(f"{inner}End Site")
        lines.append(f"{inner}{{")
        lines.append(f"{inner}  OFFSET {end[0]:.6f} {end[1]:.6f} {end[2]:.6f}")
        lines.append(f"{inner}}}")
    lines.append(f"{pad}}}")


def motion_6d_to_bvh(clip: MotionClip, skeleton: Skeleton) -> str:
    """Regenerate BVH text playing back the clip's joint rotations."""
    joints = skeleton.rotating_joints()
    if clip.num_joints != len(joints):
        raise BadBvh(
            f"clip has {clip.num_joints} joints but skeleton has {len(joints)}")
    lines: list[str] = ["HIERARCHY"]
    _write_joint(lines, skeleton.root, 0, is_root=True)
    lines.append("MOTION")
    lines.append(f"Frames: {clip.frames.shape[0]}")
    lines.append(f"Frame Time: {clip.frame_time:.8f}")
    for frame in clip.frames:
        vals = [f"{v:.6f}" for v in frame[0:3]]
        col = 6
        for _ in joints:
            rot = sixd_to_rotmat(frame[col:col + 6])
            z, y, x = rotmat_to_euler_zyx(rot)
            vals.extend(f"{a:.6f}" for a in (z, y, x))
            col += 6
        lines.append(" ".join(vals))
    return "\n".join(lines) + "\n"
