"""Particle-swarm inverse kinematics for position targets.

Every particle is an angle vector clamped to the chain's static bounds, so
solutions can never violate them.  The swarm minimizes the weighted sum of
squared position errors over all requested joints; the reported residual is
the square root of that sum.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataio import ObservedSequence
from .errors import InvalidArgumentError
from .kinematics import JointAngleState, KinematicChain, joint_positions_batch


@dataclass(frozen=True)
class PsoConfig:
    """Swarm parameters; all serialize directly into the run configuration.

    ``iterations`` is the budget of one swarm stage; a solve may run several
    stages (see ``restarts`` and the refinement schedule in ``solve_ik``).
    """

    swarm_size: int = 40
    iterations: int = 150
    inertia: float = 0.7
    cognitive: float = 1.5
    social: float = 1.5
    tolerance: float = 1e-3
    seed: int = 0
    restarts: int = 6

    def __post_init__(self):
        if self.swarm_size < 1:
            raise InvalidArgumentError(f"swarm_size must be >= 1, got {self.swarm_size}")
        if self.iterations < 1:
            raise InvalidArgumentError(f"iterations must be >= 1, got {self.iterations}")
        if self.tolerance <= 0:
            raise InvalidArgumentError(f"tolerance must be positive, got {self.tolerance}")
        if self.restarts < 1:
            raise InvalidArgumentError(f"restarts must be >= 1, got {self.restarts}")


@dataclass(frozen=True)
class IkProblem:
    """Position targets for named joints, with optional per-joint weights."""

    chain: KinematicChain
    targets: dict[str, np.ndarray]
    warm_start: np.ndarray | None = None
    weights: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.targets:
            raise InvalidArgumentError("at least one target joint is required")
        for name, pos in self.targets.items():
            if name not in self.chain.named_joints:
                raise InvalidArgumentError(f"target joint {name!r} is not named in the chain")
            pos = np.asarray(pos, dtype=float)
            if pos.shape != (3,) or not np.all(np.isfinite(pos)):
                raise InvalidArgumentError(f"target for {name!r} must be a finite 3-vector")
        if self.warm_start is not None and np.asarray(self.warm_start).shape != (self.chain.p_n,):
            raise InvalidArgumentError("warm_start must match the chain's angle count")


def _cost(problem: IkProblem, x: np.ndarray) -> np.ndarray:
    """Weighted sum of squared position errors for particle batch x (S, p)."""
    names = list(problem.targets)
    pos = joint_positions_batch(problem.chain, x, names)
    total = np.zeros(x.shape[0])
    for name in names:
        w = problem.weights.get(name, 1.0)
        diff = pos[name] - np.asarray(problem.targets[name], dtype=float)
        total += w * np.sum(diff * diff, axis=1)
    return total


# box half-widths (as fractions of the full bound span) for the refinement
# stages run after each full-range swarm; recentering between stages lets the
# box slide along narrow cost valleys near kinematic singularities
REFINE_SHRINKS = (0.25, 0.1, 0.1, 0.05, 0.05, 0.02, 0.02, 0.01, 0.005)


def _swarm_stage(problem, lb, ub, anchor, config, rng, track):
    """One PSO run inside the box [lb, ub]; returns (best angles, best cost)."""
    S, p = config.swarm_size, problem.chain.p_n
    span = ub - lb
    x = rng.uniform(lb, ub, size=(S, p))
    if anchor is not None:
        x[0] = np.clip(anchor, lb, ub)
    v = rng.uniform(-1.0, 1.0, size=(S, p)) * 0.1 * span
    vmax = 0.5 * span

    pbest = x.copy()
    pbest_cost = _cost(problem, x)
    g = int(np.argmin(pbest_cost))
    gbest, gbest_cost = pbest[g].copy(), float(pbest_cost[g])
    track(gbest_cost)

    for _ in range(config.iterations):
        if np.sqrt(gbest_cost) < config.tolerance:
            break
        r1 = rng.random((S, p))
        r2 = rng.random((S, p))
        v = config.inertia * v + config.cognitive * r1 * (pbest - x) + config.social * r2 * (gbest - x)
        v = np.clip(v, -vmax, vmax)
        x = np.clip(x + v, lb, ub)
        cost = _cost(problem, x)
        better = cost < pbest_cost
        pbest[better] = x[better]
        pbest_cost[better] = cost[better]
        g = int(np.argmin(pbest_cost))
        if pbest_cost[g] < gbest_cost:
            gbest, gbest_cost = pbest[g].copy(), float(pbest_cost[g])
        track(gbest_cost)
    return gbest, gbest_cost


def solve_ik(
    problem: IkProblem,
    config: PsoConfig = PsoConfig(),
    rng: np.random.Generator | None = None,
    history: list | None = None,
) -> tuple[np.ndarray, float]:
    """Particle-swarm IK; returns (angles, residual).

    Runs up to ``config.restarts`` cycles; each cycle is a full-range swarm
    followed by refinement swarms in shrinking boxes around the cycle's best
    candidate.  Stops as soon as the residual beats the tolerance.  ``rng``
    overrides ``config.seed`` (used for per-frame streams in trajectories).
    When a list is passed as ``history`` the best cost so far is appended
    once per swarm iteration, so it is non-increasing.
    """
    chain = problem.chain
    lb, ub = chain.angle_lb, chain.angle_ub
    span = ub - lb
    if rng is None:
        rng = np.random.default_rng(config.seed)

    best, best_cost = None, np.inf

    def track(stage_cost: float):
        if history is not None:
            history.append(min(best_cost, stage_cost))

    for cycle in range(config.restarts):
        anchor = None
        if cycle == 0:
            anchor = chain.rest_pose if problem.warm_start is None else problem.warm_start
        cand, cand_cost = _swarm_stage(problem, lb, ub, anchor, config, rng, track)
        if cand_cost < best_cost:
            best, best_cost = cand, cand_cost
        for shrink in REFINE_SHRINKS:
            if np.sqrt(cand_cost) < config.tolerance:
                break
            lo = np.clip(cand - shrink * span, lb, ub)
            hi = np.clip(cand + shrink * span, lb, ub)
            refined, refined_cost = _swarm_stage(problem, lo, hi, cand, config, rng, track)
            if refined_cost < cand_cost:
                cand, cand_cost = refined, refined_cost
            if cand_cost < best_cost:
                best, best_cost = cand, cand_cost
        if np.sqrt(best_cost) < config.tolerance:
            break

    return best, float(np.sqrt(best_cost))


def solve_trajectory(
    sequence: ObservedSequence,
    chain: KinematicChain,
    config: PsoConfig = PsoConfig(),
    joints: list[str] | None = None,
) -> list[JointAngleState]:
    """Solve IK frame by frame, warm-starting each solve from the last.

    Args:
        sequence: observed joint positions on a common time grid.
        joints: target joints; defaults to the named joints present in the
            sequence.
    Returns:
        one JointAngleState per frame, timestamps copied from the sequence.
    """
    names = [j for j in (joints or sequence.positions) if j in chain.named_joints]
    if joints is not None and len(names) != len(joints):
        missing = set(joints) - set(names)
        raise InvalidArgumentError(f"target joints {sorted(missing)} are not named in the chain")
    if not names:
        raise InvalidArgumentError("sequence shares no named joints with the chain")

    states: list[JointAngleState] = []
    warm = None
    children = np.random.SeedSequence(config.seed).spawn(len(sequence.times))
    for i, t in enumerate(sequence.times):
        problem = IkProblem(
            chain=chain,
            targets={name: sequence.positions[name][i] for name in names},
            warm_start=warm,
        )
        angles, _ = solve_ik(problem, config, rng=np.random.default_rng(children[i]))
        states.append(JointAngleState(angles=angles, timestamp=float(t)))
        warm = angles
    return states
