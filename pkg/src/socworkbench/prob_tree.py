"""Exact dynamic programming on finite scenario trees.

A non-recombining tree with ``branching`` edges per node is a finite filtered
probability space: level-``k`` nodes are the atoms of the ``k``-th
sigma-algebra, and each node's outgoing edge probabilities sum to one.  On
this substrate essential infima are pointwise minima, conditional
expectations are weighted averages over descendant atoms, and the dynamic
programming identity can be checked to machine precision by comparing full
backward induction against exhaustive enumeration of adapted control
policies on a split window.

Model coefficients receive ``(level, node, x, u)``; dependence on ``node``
encodes dependence on the shock history (random, non-Markovian coefficients)
while preserving adaptedness by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product
from typing import Callable

import numpy as np

__all__ = [
    "ScenarioTree",
    "TreeRandomVariable",
    "TreeModel",
    "TreeControlPolicy",
    "build_binomial_tree",
    "essential_infimum",
    "conditional_expectation",
    "min_closure",
    "verify_essinf_interchange",
    "tree_dpp_value",
    "pairwise_min_control",
    "rollout_cost",
    "EnumerationTooLarge",
]


class EnumerationTooLarge(RuntimeError):
    """Raised when exhaustive policy enumeration would exceed the cap."""


@dataclass(frozen=True)
class ScenarioTree:
    """Non-recombining tree: level k has branching**k nodes, indexed 0..b^k-1.

    ``probs[k][node, branch]`` and ``shocks[k][node, branch]`` describe the
    edges out of each level-k node; ``parent = node // branching``.
    """

    depth: int
    branching: int
    probs: tuple
    shocks: tuple
    dt: float = 1.0

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")
        if self.branching < 2:
            raise ValueError(f"branching must be >= 2, got {self.branching}")
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if len(self.probs) != self.depth or len(self.shocks) != self.depth:
            raise ValueError("probs/shocks must carry one array per level")
        for k in range(self.depth):
            p = np.asarray(self.probs[k], dtype=float)
            if p.shape != (self.nodes_at(k), self.branching):
                raise ValueError(f"probs[{k}] has shape {p.shape}")
            if np.any(p <= 0):
                raise ValueError("edge probabilities must be positive")
            if np.max(np.abs(p.sum(axis=1) - 1.0)) > 1e-15:
                raise ValueError(f"edge probabilities out of level-{k} nodes do not sum to 1")

    def nodes_at(self, level: int) -> int:
        if not 0 <= level <= self.depth:
            raise ValueError(f"level {level} outside 0..{self.depth}")
        return self.branching**level

    def children(self, node: int) -> range:
        return range(node * self.branching, (node + 1) * self.branching)

    def parent(self, node: int) -> int:
        return node // self.branching

    def ancestor(self, level: int, node: int, target_level: int) -> int:
        """Ancestor of a level-``level`` node at ``target_level`` <= level."""
        return node // self.branching ** (level - target_level)

    def atom_probs(self, level: int) -> np.ndarray:
        """Unconditional probability of each level-``level`` atom."""
        p = np.ones(1)
        for k in range(level):
            p = (p[:, None] * np.asarray(self.probs[k])).reshape(-1)
        return p

    def path_shocks(self, level: int, node: int) -> list[float]:
        """Shock values along the path from the root to a level-``level`` node."""
        out = []
        for k in range(level, 0, -1):
            parent = node // self.branching
            branch = node - parent * self.branching
            out.append(float(self.shocks[k - 1][parent, branch]))
            node = parent
        return out[::-1]


def build_binomial_tree(depth: int, dt: float, shock_scale: float) -> ScenarioTree:
    """Symmetric two-branch tree: probabilities 1/2, shocks +-shock_scale*sqrt(dt)."""
    if depth < 1:
        raise ValueError(f"depth must be >= 1, got {depth}")
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    s = shock_scale * np.sqrt(dt)
    probs = tuple(np.full((2**k, 2), 0.5) for k in range(depth))
    shocks = tuple(np.tile([s, -s], (2**k, 1)) for k in range(depth))
    return ScenarioTree(depth=depth, branching=2, probs=probs, shocks=shocks, dt=dt)


@dataclass(frozen=True)
class TreeRandomVariable:
    """Values attached to the atoms at one level (measurable at that level)."""

    level: int
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))

    def check_measurable(self, tree: ScenarioTree) -> None:
        n = tree.nodes_at(self.level)
        if self.values.shape != (n,):
            raise ValueError(
                f"level-{self.level} variable needs {n} values, has shape {self.values.shape}"
            )


def essential_infimum(family: list[TreeRandomVariable]) -> TreeRandomVariable:
    """Pointwise minimum per atom; on a finite space this is the essinf."""
    if not family:
        raise ValueError("family must be non-empty")
    level = family[0].level
    if any(rv.level != level for rv in family):
        raise ValueError("all family members must live at the same level")
    stacked = np.stack([rv.values for rv in family])
    return TreeRandomVariable(level=level, values=stacked.min(axis=0))


def conditional_expectation(
    tree: ScenarioTree, rv: TreeRandomVariable, target_level: int
) -> TreeRandomVariable:
    """Probability-weighted average of ``rv`` over descendant atoms."""
    rv.check_measurable(tree)
    if target_level > rv.level:
        raise ValueError(f"target level {target_level} above variable level {rv.level}")
    vals = rv.values
    for k in range(rv.level, target_level, -1):
        p = np.asarray(tree.probs[k - 1])
        vals = np.sum(p * vals.reshape(p.shape), axis=1)
    return TreeRandomVariable(level=target_level, values=vals)


def min_closure(family: list[TreeRandomVariable]) -> list[TreeRandomVariable]:
    """Close a family under pairwise minimum (terminates: finitely many atoms)."""
    if not family:
        raise ValueError("family must be non-empty")
    members: dict[bytes, TreeRandomVariable] = {rv.values.tobytes(): rv for rv in family}
    changed = True
    while changed:
        changed = False
        current = list(members.values())
        for i in range(len(current)):
            for j in range(i + 1, len(current)):
                m = np.minimum(current[i].values, current[j].values)
                key = m.tobytes()
                if key not in members:
                    members[key] = TreeRandomVariable(current[i].level, m)
                    changed = True
    return list(members.values())


@dataclass
class InterchangeReport:
    max_abs_gap: float
    family_size: int
    closed_size: int


def verify_essinf_interchange(
    tree: ScenarioTree, family: list[TreeRandomVariable], target_level: int
) -> InterchangeReport:
    """Gap between E(essinf family | F_target) and essinf of member expectations.

    The family is closed under pairwise minimum first; on the closed family
    both sides agree atom by atom, so the reported gap should vanish.
    """
    closed = min_closure(family)
    essinf = essential_infimum(closed)
    lhs = conditional_expectation(tree, essinf, target_level)
    member_ces = [conditional_expectation(tree, rv, target_level) for rv in closed]
    rhs = essential_infimum(member_ces)
    gap = float(np.max(np.abs(lhs.values - rhs.values)))
    return InterchangeReport(max_abs_gap=gap, family_size=len(family), closed_size=len(closed))


@dataclass
class TreeModel:
    """Controlled dynamics and costs on a scenario tree (scalar or vector state).

    Transition: x' = x + drift(level, node, x, u) * dt + diffusion(...) * shock.
    Stage cost accrues as f(level, node, x, u) * dt, terminal cost is
    h(node, x) at the leaves.
    """

    tree: ScenarioTree
    x0: np.ndarray
    drift: Callable
    diffusion: Callable
    stage_cost: Callable
    terminal_cost: Callable
    u_grid: np.ndarray

    def __post_init__(self):
        self.x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        self.u_grid = np.asarray(self.u_grid, dtype=float)
        if self.u_grid.ndim != 1 or self.u_grid.size == 0:
            raise ValueError("u_grid must be a non-empty 1-d array of control values")

    @property
    def state_dim(self) -> int:
        return self.x0.size

    def step(self, level: int, node: int, x: np.ndarray, u: float, branch: int) -> np.ndarray:
        shock = self.tree.shocks[level][node, branch]
        a = np.asarray(self.drift(level, node, x, u), dtype=float)
        b = np.asarray(self.diffusion(level, node, x, u), dtype=float)
        return x + a * self.tree.dt + b * shock


@dataclass
class TreeControlPolicy:
    """One control value per (level, node), levels 0..depth-1."""

    controls: list

    @classmethod
    def constant(cls, tree: ScenarioTree, u: float) -> "TreeControlPolicy":
        return cls([np.full(tree.nodes_at(k), float(u)) for k in range(tree.depth)])

    def at(self, level: int, node: int) -> float:
        return float(self.controls[level][node])


def _backward_values(model: TreeModel) -> dict:
    """Backward induction over all prefix-reachable (level, node, state) triples.

    Returns a memo mapping (level, node, state-bytes) -> (value, argmin index).
    Ties in the control argmin break toward the lowest grid index.
    """
    tree = model.tree
    dt = tree.dt
    memo: dict = {}

    def value(level: int, node: int, x: np.ndarray) -> float:
        key = (level, node, x.tobytes())
        hit = memo.get(key)
        if hit is not None:
            return hit[0]
        if level == tree.depth:
            v = float(model.terminal_cost(node, x))
            memo[key] = (v, -1)
            return v
        best = np.inf
        best_idx = -1
        p_row = tree.probs[level][node]
        for idx, u in enumerate(model.u_grid):
            total = float(model.stage_cost(level, node, x, u)) * dt
            for branch, child in enumerate(tree.children(node)):
                xn = model.step(level, node, x, u, branch)
                total += p_row[branch] * value(level + 1, child, xn)
            if total < best:
                best = total
                best_idx = idx
        memo[key] = (best, best_idx)
        return best

    value(0, 0, model.x0)
    return memo


def _extract_policy(model: TreeModel, memo: dict) -> TreeControlPolicy:
    """Realized optimal controls along the optimal state per node."""
    tree = model.tree
    policy = TreeControlPolicy.constant(tree, model.u_grid[0])
    states: dict[int, np.ndarray] = {0: model.x0}
    for level in range(tree.depth):
        next_states: dict[int, np.ndarray] = {}
        for node, x in states.items():
            _, idx = memo[(level, node, x.tobytes())]
            u = model.u_grid[idx]
            policy.controls[level][node] = u
            for branch, child in enumerate(tree.children(node)):
                next_states[child] = model.step(level, node, x, u, branch)
        states = next_states
    return policy


def rollout_cost(
    model: TreeModel,
    policy: TreeControlPolicy,
    level: int = 0,
    node: int = 0,
    x: np.ndarray | None = None,
) -> float:
    """Conditional expected cost-to-go of a policy from (level, node, x)."""
    tree = model.tree
    x = model.x0 if x is None else np.atleast_1d(np.asarray(x, dtype=float))

    def go(lv: int, nd: int, xv: np.ndarray) -> float:
        if lv == tree.depth:
            return float(model.terminal_cost(nd, xv))
        u = policy.at(lv, nd)
        total = float(model.stage_cost(lv, nd, xv, u)) * tree.dt
        for branch, child in enumerate(tree.children(nd)):
            total += tree.probs[lv][nd, branch] * go(lv + 1, child, model.step(lv, nd, xv, u, branch))
        return total

    return go(level, node, x)


def _window_nodes(tree: ScenarioTree, t: int, root: int, r: int) -> list[tuple[int, int]]:
    """(level, node) pairs in the subtree of ``root`` over levels t..r-1."""
    out = []
    nodes = [root]
    for level in range(t, r):
        out.extend((level, n) for n in nodes)
        nodes = [c for n in nodes for c in tree.children(n)]
    return out


def _min_g_over_window_policies(
    model: TreeModel,
    t: int,
    root: int,
    x: np.ndarray,
    r: int,
    eta: Callable,
) -> float:
    """Minimum of G over all adapted control assignments on the window [t, r].

    The rollout cost along one scenario path depends only on the controls at
    the nodes of that path, so per path a table over all control prefixes is
    built first and full assignments are then scored by gathering from these
    tables.  ``eta(node, x)`` supplies the terminal payoff at level r.
    """
    tree = model.tree
    b = tree.branching
    n_u = model.u_grid.size
    w = r - t
    window = _window_nodes(tree, t, root, r)
    pos = {ln: d for d, ln in enumerate(window)}
    n_assign = n_u ** len(window)

    # per scenario path: probability, node positions in the assignment vector,
    # and the cost of every control prefix combo
    assign_idx = np.arange(n_assign)
    g_all = np.zeros(n_assign)
    for branches in product(range(b), repeat=w):
        prob = 1.0
        nodes = [root]
        node = root
        for k, beta in enumerate(branches):
            prob *= tree.probs[t + k][node, beta]
            node = node * b + beta
            nodes.append(node)
        # cost table over control combos (base-n_u digits, digit j = level t+j)
        costs = np.empty(n_u**w)
        for c_idx in range(n_u**w):
            digits = []
            ci = c_idx
            for _ in range(w):
                digits.append(ci % n_u)
                ci //= n_u
            xv = x
            total = 0.0
            for k in range(w):
                u = model.u_grid[digits[k]]
                total += float(model.stage_cost(t + k, nodes[k], xv, u)) * tree.dt
                xv = model.step(t + k, nodes[k], xv, u, branches[k])
            costs[c_idx] = total + float(eta(nodes[-1], xv))
        # combo index per assignment: gather the digits at this path's nodes
        combo = np.zeros(n_assign, dtype=np.int64)
        for k in range(w):
            d = pos[(t + k, nodes[k])]
            combo += ((assign_idx // n_u**d) % n_u) * n_u**k
        g_all += prob * costs[combo]
    return float(g_all.min())


@dataclass
class DppReport:
    root_value: float
    dpp_gap: float
    optimal_policy: TreeControlPolicy
    values: dict = field(repr=False, default_factory=dict)
    policies_enumerated: int = 0
    checks: int = 0


def tree_dpp_value(
    model: TreeModel,
    split_level: int,
    t_levels: list[int] | None = None,
    enumeration_cap: int = 10**6,
) -> DppReport:
    """Backward-induction values cross-checked against the split identity.

    The left side is the full backward induction value at every
    prefix-reachable (level, node, state) with level in ``t_levels``
    (default: all levels below the split).  The right side re-derives each
    of those values by exhaustively enumerating all adapted control
    assignments on the window [level, split_level] and applying the backward
    operator to the level-``split_level`` values.  The two computations
    share only the model, so agreement to machine precision is non-trivial.
    """
    tree = model.tree
    r = split_level
    if not 0 <= r <= tree.depth:
        raise ValueError(f"split level {r} outside 0..{tree.depth}")
    if t_levels is None:
        t_levels = list(range(r))
    if any(t < 0 or t >= r for t in t_levels):
        raise ValueError(f"t_levels must lie in [0, {r})")

    memo = _backward_values(model)
    policy = _extract_policy(model, memo)
    root_value = memo[(0, 0, model.x0.tobytes())][0]

    # prefix-reachable states per (level, node) for levels 0..r
    reachable: dict[tuple[int, int], list[np.ndarray]] = {(0, 0): [model.x0]}
    for level in range(r):
        for node in range(tree.nodes_at(level)):
            xs = reachable.get((level, node), [])
            for x in xs:
                for u in model.u_grid:
                    for branch, child in enumerate(tree.children(node)):
                        xn = model.step(level, node, x, u, branch)
                        reachable.setdefault((level + 1, child), []).append(xn)
    for key, xs in reachable.items():
        uniq = {x.tobytes(): x for x in xs}
        reachable[key] = list(uniq.values())

    n_u = model.u_grid.size
    total_policies = 0
    for (level, node), xs in reachable.items():
        if level not in t_levels:
            continue
        window = _window_nodes(tree, level, node, r)
        total_policies += len(xs) * n_u ** len(window)
    if total_policies > enumeration_cap:
        raise EnumerationTooLarge(
            f"instance too large: {total_policies} candidate policies exceed cap {enumeration_cap}"
        )

    def eta(node: int, xv: np.ndarray) -> float:
        key = (r, node, xv.tobytes())
        if key not in memo:
            raise KeyError("terminal state not reached by backward induction")
        return memo[key][0]

    gap = 0.0
    checks = 0
    for (level, node), xs in sorted(reachable.items()):
        if level not in t_levels:
            continue
        for x in xs:
            lhs = memo[(level, node, x.tobytes())][0]
            rhs = _min_g_over_window_policies(model, level, node, x, r, eta)
            gap = max(gap, abs(lhs - rhs))
            checks += 1

    values = {(lv, nd): v for (lv, nd, _), (v, _) in memo.items()}
    return DppReport(
        root_value=root_value,
        dpp_gap=gap,
        optimal_policy=policy,
        values=values,
        policies_enumerated=total_policies,
        checks=checks,
    )


def pairwise_min_control(
    model: TreeModel,
    u1: TreeControlPolicy,
    u2: TreeControlPolicy,
    level: int = 0,
    states_at_level: dict | None = None,
) -> tuple[TreeControlPolicy, np.ndarray]:
    """Switching policy that realizes the pointwise minimum of two costs.

    Per level-``level`` atom the switched policy follows ``u1`` where
    J(level, .; u1) <= J(level, .; u2) and ``u2`` elsewhere; the returned
    cost vector is exactly the atom-wise minimum because subtree rollouts
    under disjoint atoms do not interact.
    """
    tree = model.tree
    n = tree.nodes_at(level)
    if states_at_level is None:
        states_at_level = {node: model.x0 for node in range(n)}

    j1 = np.array([rollout_cost(model, u1, level, node, states_at_level[node]) for node in range(n)])
    j2 = np.array([rollout_cost(model, u2, level, node, states_at_level[node]) for node in range(n)])
    follow_u1 = j1 <= j2

    switched = TreeControlPolicy([np.array(u1.controls[k], dtype=float) for k in range(tree.depth)])
    for k in range(level, tree.depth):
        for node in range(tree.nodes_at(k)):
            anc = tree.ancestor(k, node, level)
            switched.controls[k][node] = u1.at(k, node) if follow_u1[anc] else u2.at(k, node)
    return switched, np.minimum(j1, j2)
