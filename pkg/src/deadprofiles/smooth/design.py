"""Model matrices for additive smooths of age and time."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .basis import SplineBasis

RANK_TOL = 1e-9


def sum_to_zero_null_space(B: np.ndarray) -> np.ndarray:
    """Columns spanning the coefficients whose smooth sums to zero over rows of ``B``."""
    c = B.sum(axis=0)[:, None]
    Q, _ = linalg.qr(c)
    return Q[:, 1:]


def row_kron(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    return (A[:, :, None] * B[:, None, :]).reshape(A.shape[0], -1)


@dataclass
class SmoothBlock:
    """One penalised term: a main effect (one basis) or an interaction (two)."""

    name: str
    bases: tuple[SplineBasis, ...]
    coords: tuple[str, ...]
    constraints: tuple[np.ndarray, ...]
    penalty: np.ndarray
    reduction: np.ndarray | None = None

    def evaluate(self, coords: dict[str, np.ndarray]) -> np.ndarray:
        parts = [
            b.evaluate(coords[c]) @ Z
            for b, c, Z in zip(self.bases, self.coords, self.constraints)
        ]
        X = parts[0] if len(parts) == 1 else row_kron(parts[0], parts[1])
        if self.reduction is not None:
            X = X @ self.reduction
        return X

    @property
    def n_columns(self) -> int:
        return self.penalty.shape[0]


@dataclass
class TensorSmoothDesign:
    """Model matrix ``[1 | age | time | age x time]`` plus one penalty per block."""

    design: np.ndarray
    blocks: list[SmoothBlock]
    penalties: list[np.ndarray]
    slices: list[slice]
    lambdas: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.lambdas is None:
            self.lambdas = np.ones(len(self.penalties))

    @property
    def n_obs(self) -> int:
        return self.design.shape[0]

    @property
    def n_coef(self) -> int:
        return self.design.shape[1]

    def total_penalty(self, lambdas=None) -> np.ndarray:
        lambdas = self.lambdas if lambdas is None else np.asarray(lambdas, dtype=float)
        S = np.zeros((self.n_coef, self.n_coef))
        for lam, Sj, sl in zip(lambdas, self.penalties, self.slices):
            S[sl, sl] += lam * Sj
        return S

    def full_penalties(self) -> list[np.ndarray]:
        out = []
        for Sj, sl in zip(self.penalties, self.slices):
            S = np.zeros((self.n_coef, self.n_coef))
            S[sl, sl] = Sj
            out.append(S)
        return out

    def evaluate(self, age, time=None) -> np.ndarray:
        """Model matrix rows at new ``(age, time)`` points."""
        age = np.asarray(age, dtype=float).ravel()
        coords = {"age": age}
        if time is not None:
            coords["time"] = np.broadcast_to(np.asarray(time, dtype=float).ravel(), age.shape)
        cols = [np.ones((age.size, 1))]
        cols += [b.evaluate(coords) for b in self.blocks]
        return np.hstack(cols)


def _reduce_rank(X: np.ndarray):
    """Reparameterise a rank-deficient block onto its column space."""
    if X.size == 0:
        return None, 0
    s = np.linalg.svd(X, compute_uv=False)
    scale = max(np.sqrt(X.shape[0]), 1.0)
    if s[0] <= RANK_TOL * scale:
        return None, 0
    rank = int(np.sum(s > RANK_TOL * s[0]))
    if rank == X.shape[1]:
        return np.eye(X.shape[1]), rank
    _, _, Vt = np.linalg.svd(X, full_matrices=False)
    return Vt[:rank].T, rank


def _normalise(S: np.ndarray, X: np.ndarray) -> np.ndarray:
    # put the penalty on the scale of X'X / n so lambda is unit-free and
    # unchanged by replicating observations
    norm_s = np.linalg.norm(S)
    if norm_s == 0:
        return S
    return S * (np.linalg.norm(X.T @ X) / X.shape[0]) / norm_s


def _make_block(name, bases, coords, obs):
    constraints = []
    parts = []
    for b, c in zip(bases, coords):
        B = b.evaluate(obs[c])
        Z = sum_to_zero_null_space(B)
        constraints.append(Z)
        parts.append(B @ Z)
    if len(parts) == 1:
        X = parts[0]
        S = constraints[0].T @ bases[0].penalty @ constraints[0]
    else:
        X = row_kron(parts[0], parts[1])
        Sa = constraints[0].T @ bases[0].penalty @ constraints[0]
        St = constraints[1].T @ bases[1].penalty @ constraints[1]
        terms = [np.kron(Sa, np.eye(St.shape[0])), np.kron(np.eye(Sa.shape[0]), St)]
        S = sum(t / np.linalg.norm(t) for t in terms if np.linalg.norm(t) > 0)
        if np.isscalar(S):
            S = np.zeros((X.shape[1], X.shape[1]))
    R, rank = _reduce_rank(X)
    if rank == 0:
        return None
    reduction = None
    if rank < X.shape[1]:
        reduction = R
        X = X @ R
        S = R.T @ S @ R
    S = 0.5 * (S + S.T)
    block = SmoothBlock(name, tuple(bases), tuple(coords), tuple(constraints),
                        _normalise(S, X), reduction)
    return block, X


def build_tensor_design(age_basis: SplineBasis, time_basis: SplineBasis | None, obs,
                        *, interaction_bases=None) -> TensorSmoothDesign:
    """Functional-ANOVA design: intercept, age and time main effects, interaction.

    ``obs`` is an ``(n, 2)`` array of ``(age, time)`` pairs, or just ages when
    ``time_basis`` is None. The interaction uses ``interaction_bases`` (an
    ``(age, time)`` pair) when given, else the main-effect bases. Each smooth
    block is constrained to sum to zero over the observations, which removes
    one column per marginal basis. Blocks that carry no information at the
    observed points (e.g. every row at one time) are dropped or reduced.
    """
    obs = np.asarray(obs, dtype=float)
    if time_basis is None:
        coords = {"age": obs.reshape(-1) if obs.ndim == 1 else obs[:, 0]}
    else:
        obs = obs.reshape(-1, 2)
        coords = {"age": obs[:, 0], "time": obs[:, 1]}
    n = coords["age"].size

    specs = [("age", (age_basis,), ("age",))]
    if time_basis is not None:
        specs.append(("time", (time_basis,), ("time",)))
        ib = interaction_bases or (age_basis, time_basis)
        specs.append(("age:time", tuple(ib), ("age", "time")))

    cols = [np.ones((n, 1))]
    blocks, penalties, slices = [], [], []
    start = 1
    for name, bases, cnames in specs:
        made = _make_block(name, bases, cnames, coords)
        if made is None:
            continue
        block, X = made
        blocks.append(block)
        cols.append(X)
        penalties.append(block.penalty)
        slices.append(slice(start, start + X.shape[1]))
        start += X.shape[1]
    return TensorSmoothDesign(np.hstack(cols), blocks, penalties, slices)
