import json

import numpy as np
import pytest

from conftest import random_poses
from cpdp import kinematics as kin
from cpdp.errors import InvalidArgumentError, ParseError, UnsupportedShapeError

PI = np.pi


def fd_jacobian(chain, angles, joint, step=1e-5):
    """Independent central-difference oracle built on single-pose FK."""
    J = np.zeros((3, chain.p_n))
    for c in range(chain.p_n):
        hi = np.array(angles, dtype=float)
        lo = np.array(angles, dtype=float)
        hi[c] += step
        lo[c] -= step
        J[:, c] = (
            kin.forward_kinematics(chain, hi)[joint] - kin.forward_kinematics(chain, lo)[joint]
        ) / (2 * step)
    return J


def make_random_chain(rng, n_links=6, p_n=4):
    """Random valid chain with p_n actuated links out of n_links."""
    joint_slots = rng.choice(n_links, size=p_n, replace=False)
    order = {int(s): i for i, s in enumerate(sorted(joint_slots))}
    links = []
    for i in range(n_links):
        links.append(
            kin.DhLink(
                theta_offset=rng.uniform(-PI, PI),
                d=rng.uniform(-0.2, 0.2),
                a=rng.uniform(0.0, 0.4),
                alpha=rng.uniform(-PI, PI),
                joint_index=order.get(i),
            )
        )
    return kin.KinematicChain(
        links=tuple(links),
        angle_lb=np.full(p_n, -PI),
        angle_ub=np.full(p_n, PI),
        vel_ub=np.full(p_n, 3.0),
        named_joints={"mid": n_links // 2, "tip": n_links},
    )


# ---------------------------------------------------------------- dh_transform

def test_dh_identity():
    assert np.allclose(kin.dh_transform(0, 0, 0, 0), np.eye(4))


def test_dh_pure_rotation_with_offset():
    T = kin.dh_transform(PI / 2, 0.0, 0.3, 0.0)
    expected = np.array(
        [
            [0.0, -1.0, 0.0, 0.0],
            [1.0, 0.0, 0.0, 0.3],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ]
    )
    assert np.allclose(T, expected, atol=1e-12)
    assert np.allclose(T[:3, 3], [0.0, 0.3, 0.0], atol=1e-12)


def test_dh_twist_and_lift():
    T = kin.dh_transform(0.0, 0.1, 0.0, PI / 2)
    expected_rot = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])
    assert np.allclose(T[:3, :3], expected_rot, atol=1e-12)
    assert np.allclose(T[:3, 3], [0.0, 0.0, 0.1], atol=1e-12)


def test_dh_rejects_non_finite():
    with pytest.raises(InvalidArgumentError):
        kin.dh_transform(np.nan, 0, 0, 0)
    with pytest.raises(InvalidArgumentError):
        kin.dh_transform(0, np.inf, 0, 0)


def test_rotation_block_stays_orthonormal():
    rng = np.random.default_rng(3)
    for _ in range(20):
        chain = make_random_chain(rng, n_links=10, p_n=6)
        T = kin.frames(chain, rng.uniform(-PI, PI, 6))[-1]
        R = T[:3, :3]
        assert np.abs(R @ R.T - np.eye(3)).max() < 1e-9
        assert abs(np.linalg.det(R) - 1.0) < 1e-9
        assert np.allclose(T[3], [0, 0, 0, 1])


# ------------------------------------------------------------------------- FK

def test_default_arm_zero_pose_geometry(arm):
    fk = kin.forward_kinematics(arm, np.zeros(4))
    assert np.allclose(fk["shoulder"], 0.0)
    assert abs(np.linalg.norm(fk["elbow"]) - 0.30) < 1e-12
    assert abs(np.linalg.norm(fk["wrist"]) - 0.55) < 1e-12
    # elbow and wrist collinear with the shoulder
    assert np.linalg.norm(np.cross(fk["elbow"], fk["wrist"])) < 1e-12


def test_default_arm_reach_bounded(arm):
    poses = random_poses(arm, 500, seed=11)
    wrist = kin.joint_positions_batch(arm, poses, ["wrist"])["wrist"]
    assert np.linalg.norm(wrist, axis=1).max() <= 0.55 + 1e-12


def test_bone_lengths_constant(arm):
    poses = random_poses(arm, 1000, seed=12)
    pos = kin.joint_positions_batch(arm, poses, ["shoulder", "elbow", "wrist"])
    upper = np.linalg.norm(pos["elbow"] - pos["shoulder"], axis=1)
    fore = np.linalg.norm(pos["wrist"] - pos["elbow"], axis=1)
    assert np.abs(upper - 0.30).max() < 1e-9
    assert np.abs(fore - 0.25).max() < 1e-9


def test_zero_length_chain_collapses_to_origin():
    links = tuple(kin.DhLink(0.0, 0.0, 0.0, 0.0, joint_index=i) for i in range(3))
    chain = kin.KinematicChain(
        links=links,
        angle_lb=np.full(3, -PI),
        angle_ub=np.full(3, PI),
        vel_ub=np.full(3, 1.0),
        named_joints={"tip": 3},
    )
    fk = kin.forward_kinematics(chain, [0.3, -1.1, 0.7])
    assert np.allclose(fk["tip"], 0.0)
    assert np.allclose(kin.jacobian(chain, [0.3, -1.1, 0.7], "tip"), 0.0)


def test_fk_rejects_wrong_angle_count(arm):
    with pytest.raises(UnsupportedShapeError):
        kin.forward_kinematics(arm, np.zeros(3))


def test_fk_unknown_joint(arm):
    with pytest.raises(InvalidArgumentError):
        kin.joint_positions_batch(arm, np.zeros((1, 4)), ["hip"])


def test_batch_matches_single(arm):
    poses = random_poses(arm, 8, seed=4)
    batch = kin.joint_positions_batch(arm, poses, ["elbow", "wrist"])
    for i, pose in enumerate(poses):
        fk = kin.forward_kinematics(arm, pose)
        assert np.allclose(batch["elbow"][i], fk["elbow"], atol=1e-12)
        assert np.allclose(batch["wrist"][i], fk["wrist"], atol=1e-12)


# ------------------------------------------------------------------- Jacobian

def test_jacobian_matches_fd_oracle(arm):
    poses = random_poses(arm, 100, seed=5)
    worst = 0.0
    for pose in poses:
        J = kin.jacobian(arm, pose, "wrist")
        worst = max(worst, np.abs(J - fd_jacobian(arm, pose, "wrist")).max())
    assert worst < 1e-5


def test_jacobian_random_chains():
    rng = np.random.default_rng(6)
    for _ in range(10):
        chain = make_random_chain(rng)
        pose = rng.uniform(-PI, PI, chain.p_n)
        for joint in ("mid", "tip"):
            J = kin.jacobian(chain, pose, joint)
            assert np.abs(J - fd_jacobian(chain, pose, joint)).max() < 1e-5


def test_jacobian_first_order_consistency(arm):
    rng = np.random.default_rng(7)
    for _ in range(20):
        pose = rng.uniform(arm.angle_lb, arm.angle_ub)
        J = kin.jacobian(arm, pose, "wrist")
        delta = rng.normal(size=4)
        delta *= 1e-4 / np.linalg.norm(delta)
        moved = kin.forward_kinematics(arm, pose + delta)["wrist"]
        base = kin.forward_kinematics(arm, pose)["wrist"]
        assert np.linalg.norm(moved - base - J @ delta) < 1e-6


def test_jacobian_distal_columns_zero(arm):
    # the elbow position does not depend on the elbow flexion angle
    pose = np.array([0.4, -0.2, 0.3, 1.1])
    J = kin.jacobian(arm, pose, "elbow")
    assert np.abs(J[:, 3]).max() < 1e-9


def test_jacobian_batch_matches_single(arm):
    poses = random_poses(arm, 5, seed=8)
    Jb = kin.jacobian_batch(arm, poses, "wrist")
    for i, pose in enumerate(poses):
        assert np.allclose(Jb[i], kin.jacobian(arm, pose, "wrist"), atol=1e-12)


def test_analytic_jacobian_agrees_with_fd(arm):
    poses = random_poses(arm, 100, seed=9)
    for joint in ("shoulder", "elbow", "wrist"):
        Ja = kin.jacobian_batch(arm, poses, joint, method="analytic")
        Jf = kin.jacobian_batch(arm, poses, joint, method="fd")
        assert np.abs(Ja - Jf).max() < 1e-7


def test_analytic_jacobian_random_chains():
    rng = np.random.default_rng(10)
    for _ in range(5):
        chain = make_random_chain(rng)
        poses = rng.uniform(-PI, PI, (20, chain.p_n))
        for joint in ("mid", "tip"):
            Ja = kin.jacobian_batch(chain, poses, joint, method="analytic")
            Jf = kin.jacobian_batch(chain, poses, joint, method="fd")
            assert np.abs(Ja - Jf).max() < 1e-7


def test_unknown_jacobian_method(arm):
    with pytest.raises(InvalidArgumentError):
        kin.jacobian_batch(arm, np.zeros((1, 4)), "wrist", method="forward")


# ----------------------------------------------------------------- pseudo_det

def test_pseudo_det_identity_padding():
    J = np.hstack([np.eye(3), np.zeros((3, 1))])
    assert abs(kin.pseudo_det(J) - 1.0) < 1e-12


def test_pseudo_det_square_diagonal():
    assert abs(kin.pseudo_det(np.diag([2.0, 3.0, 4.0])) - 24.0) < 1e-9


def test_pseudo_det_matches_abs_det_for_square():
    rng = np.random.default_rng(9)
    for _ in range(100):
        J = rng.normal(size=(3, 3))
        assert abs(kin.pseudo_det(J) - abs(np.linalg.det(J))) < 1e-9


def test_pseudo_det_rank_deficient():
    row = np.array([1.0, 2.0, 3.0, 4.0])
    J = np.vstack([row, row, np.arange(4.0)])
    assert kin.pseudo_det(J) < 1e-9


def test_pseudo_det_shape_errors():
    with pytest.raises(UnsupportedShapeError):
        kin.pseudo_det(np.zeros((3, 2)))
    with pytest.raises(UnsupportedShapeError):
        kin.pseudo_det(np.zeros((2, 3)))
    with pytest.raises(InvalidArgumentError):
        kin.pseudo_det(np.full((3, 3), np.nan))


# ------------------------------------------------------------------- chain IO

def test_chain_json_round_trip(tmp_path, arm):
    path = tmp_path / "chain.json"
    kin.save_chain(arm, str(path))
    loaded = kin.load_chain(str(path))
    assert loaded.links == arm.links
    assert np.array_equal(loaded.angle_lb, arm.angle_lb)
    assert np.array_equal(loaded.angle_ub, arm.angle_ub)
    assert np.array_equal(loaded.vel_ub, arm.vel_ub)
    assert loaded.named_joints == arm.named_joints


def test_chain_json_parse_error(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"links": [\n  {"theta_offset": }\n]}')
    with pytest.raises(ParseError) as err:
        kin.load_chain(str(path))
    assert err.value.line is not None


def test_chain_validation_errors(arm):
    with pytest.raises(UnsupportedShapeError):
        kin.KinematicChain(
            links=arm.links,
            angle_lb=np.zeros(3),
            angle_ub=np.ones(4),
            vel_ub=np.ones(4),
        )
    with pytest.raises(InvalidArgumentError):
        kin.KinematicChain(
            links=arm.links,
            angle_lb=np.ones(4),
            angle_ub=np.ones(4),
            vel_ub=np.ones(4),
        )
    dup = tuple(
        kin.DhLink(0, 0, 0.1, 0, joint_index=0 if i < 2 else None) for i in range(3)
    )
    with pytest.raises(InvalidArgumentError):
        kin.KinematicChain(
            links=dup,
            angle_lb=np.zeros(2),
            angle_ub=np.ones(2),
            vel_ub=np.ones(2),
        )


def test_link_validation():
    with pytest.raises(InvalidArgumentError):
        kin.DhLink(0.0, 0.0, -0.1, 0.0)
    with pytest.raises(InvalidArgumentError):
        kin.DhLink(0.0, 0.0, 0.0, 4.0)
