"""Internal tree linear algebra shared by the solvers.

Everything works with node *positions* (the time-sorted order used by
``ScenarioTree``), so a parent always precedes its children.

The solvers operate on a trimmed view of the tree.  A node is *alive* when
the clock puts mass at the node itself or somewhere below it; wealth moved
into a dead subtree can never be consumed.  The trimmed node set consists
of the alive nodes plus each *dead root*, i.e. the first dead node on a
branch leaving the alive region from a node that still trades.  Wealth at a
dead root must stay nonnegative but is otherwise irrelevant, and below a
dead root nothing needs to be decided at all.

Within the trimmed view:

- *internal* nodes (alive, with at least one alive child) carry holdings in
  the first ``n_active`` assets, chosen at the node and applied over the
  following step;
- *effective leaves* (alive, no alive child) consume their entire wealth,
  since anything left over is wasted;
- internal nodes with a positive clock increment consume at a rate that is
  a free variable.

The trimmed wealth map is affine: X_pre = x + rows @ theta, where theta
stacks the holdings blocks and the free consumption rates.

For the dual side, densities are parameterized by their values on the
trimmed leaves (effective leaves and dead roots).  The value at any other
trimmed node is the conditional expectation of the leaf values, which is
exactly the martingale property, so the equality constraints reduce to one
normalization row and one row per (internal node, tradable asset).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BudgetError
from .market import MarketModel

DENSE_ENTRY_GUARD = 50_000_000


@dataclass
class Geometry:
    """Trimmed-problem structure for one model (see module docstring)."""

    model: MarketModel
    alive: np.ndarray
    trimmed: np.ndarray
    order_of: dict
    internal_mask: np.ndarray
    eff_mask: np.ndarray
    dead_root_mask: np.ndarray
    consuming: np.ndarray
    # primal side
    n_vars: int
    h_slice: dict
    c_index: dict
    rows: np.ndarray
    # dual side
    solve_leaves: np.ndarray
    leaf_order: dict
    agg: np.ndarray
    A: np.ndarray
    b: np.ndarray

    @property
    def tree(self):
        return self.model.tree

    def trimmed_values_to_full(self, values: np.ndarray, fill) -> np.ndarray:
        out = np.full(self.tree.n_nodes, fill, dtype=float)
        out[self.trimmed] = values
        return out


def build_geometry(model: MarketModel) -> Geometry:
    tree = model.tree
    clock = model.clock
    n = tree.n_nodes
    na = model.n_active

    consuming = clock.dkappa > 0.0

    alive = consuming.copy()
    for k in range(n - 1, -1, -1):
        p = tree.parent[k]
        if p >= 0 and alive[k]:
            alive[p] = True

    has_alive_child = np.zeros(n, dtype=bool)
    for k in range(n):
        p = tree.parent[k]
        if p >= 0 and alive[k]:
            has_alive_child[p] = True

    internal_mask = alive & has_alive_child
    eff_mask = alive & ~has_alive_child
    dead_root_mask = np.zeros(n, dtype=bool)
    for k in range(n):
        p = tree.parent[k]
        if p >= 0 and not alive[k] and internal_mask[p]:
            dead_root_mask[k] = True

    trimmed = np.flatnonzero(alive | dead_root_mask)
    order_of = {int(pos): idx for idx, pos in enumerate(trimmed)}

    # Variable layout: holdings blocks first, then free consumption rates.
    h_slice = {}
    c_index = {}
    n_vars = 0
    for pos in trimmed:
        if internal_mask[pos] and na > 0:
            h_slice[int(pos)] = slice(n_vars, n_vars + na)
            n_vars += na
    for pos in trimmed:
        if internal_mask[pos] and consuming[pos]:
            c_index[int(pos)] = n_vars
            n_vars += 1

    n_trim = trimmed.size
    if n_trim * max(n_vars, 1) > DENSE_ENTRY_GUARD:
        raise BudgetError(
            f"trimmed wealth map would need {n_trim * n_vars} entries, "
            f"beyond the dense guard of {DENSE_ENTRY_GUARD}"
        )

    prices = model.assets.prices
    rows = np.zeros((n_trim, n_vars))
    for pos in trimmed:
        idx = order_of[int(pos)]
        p = tree.parent[pos]
        if p < 0:
            continue
        row = rows[order_of[int(p)]].copy()
        ci = c_index.get(int(p))
        if ci is not None:
            row[ci] -= clock.dkappa[p]
        hs = h_slice.get(int(p))
        if hs is not None:
            row[hs] += prices[pos, :na] - prices[p, :na]
        rows[idx] = row

    solve_leaves = np.array(
        [pos for pos in trimmed if eff_mask[pos] or dead_root_mask[pos]], dtype=np.int64
    )
    leaf_order = {int(pos): j for j, pos in enumerate(solve_leaves)}

    n_leaf = solve_leaves.size
    if n_trim * max(n_leaf, 1) > DENSE_ENTRY_GUARD:
        raise BudgetError(
            f"density aggregation would need {n_trim * n_leaf} entries, "
            f"beyond the dense guard of {DENSE_ENTRY_GUARD}"
        )

    # Unnormalized aggregation: unnorm[m] @ zeta = P(m) * Z(m).
    unnorm = np.zeros((n_trim, n_leaf))
    for pos in trimmed[::-1]:
        idx = order_of[int(pos)]
        if int(pos) in leaf_order:
            unnorm[idx, leaf_order[int(pos)]] = tree.path_prob[pos]
        else:
            for ch in tree.children[pos]:
                unnorm[idx] += unnorm[order_of[int(ch)]]
    agg = unnorm / tree.path_prob[trimmed][:, None]

    a_rows = [agg[order_of[int(tree.root)]]]
    b_vals = [1.0]
    for pos in trimmed:
        if not internal_mask[pos]:
            continue
        for i in range(na):
            row = -prices[pos, i] * unnorm[order_of[int(pos)]]
            for ch in tree.children[pos]:
                row = row + prices[ch, i] * unnorm[order_of[int(ch)]]
            a_rows.append(row / tree.path_prob[pos])
            b_vals.append(0.0)
    A = np.vstack(a_rows) if a_rows else np.zeros((0, n_leaf))
    b = np.array(b_vals)

    return Geometry(
        model=model,
        alive=alive,
        trimmed=trimmed,
        order_of=order_of,
        internal_mask=internal_mask,
        eff_mask=eff_mask,
        dead_root_mask=dead_root_mask,
        consuming=consuming,
        n_vars=n_vars,
        h_slice=h_slice,
        c_index=c_index,
        rows=rows,
        solve_leaves=solve_leaves,
        leaf_order=leaf_order,
        agg=agg,
        A=A,
        b=b,
    )


def full_polytope_matrices(model: MarketModel):
    """Constraint system of the martingale densities on the whole tree.

    Densities are parameterized by their per-leaf values zeta; the value at
    any node is the conditional expectation of zeta over the leaves below
    it.  Returns (A, b, agg) with A zeta = b the normalization plus the
    per (non-terminal node, tradable asset) pricing rows, and agg the
    (n_nodes, n_leaves) matrix with Z = agg @ zeta.
    """
    tree = model.tree
    prices = model.assets.prices
    na = model.n_active
    leaves = tree.leaves
    n_leaf = leaves.size
    leaf_col = {int(pos): j for j, pos in enumerate(leaves)}

    if tree.n_nodes * n_leaf > DENSE_ENTRY_GUARD:
        raise BudgetError(
            f"full density aggregation would need {tree.n_nodes * n_leaf} entries, "
            f"beyond the dense guard of {DENSE_ENTRY_GUARD}"
        )

    unnorm = np.zeros((tree.n_nodes, n_leaf))
    for pos in range(tree.n_nodes - 1, -1, -1):
        if tree.is_leaf[pos]:
            unnorm[pos, leaf_col[int(pos)]] = tree.path_prob[pos]
        else:
            for ch in tree.children[pos]:
                unnorm[pos] += unnorm[ch]
    agg = unnorm / tree.path_prob[:, None]

    a_rows = [agg[tree.root]]
    b_vals = [1.0]
    for pos in range(tree.n_nodes):
        if tree.is_leaf[pos]:
            continue
        for i in range(na):
            row = -prices[pos, i] * unnorm[pos]
            for ch in tree.children[pos]:
                row = row + prices[ch, i] * unnorm[ch]
            a_rows.append(row / tree.path_prob[pos])
            b_vals.append(0.0)
    A = np.vstack(a_rows)
    b = np.array(b_vals)
    return A, b, agg


def gains_matrix(model: MarketModel):
    """Affine gains map over the whole tree for superreplication programs.

    Holdings live at every non-terminal node for the first ``n_active``
    assets.  Returns (G, h_slice) with gains-to-date at node k equal to
    G[k] @ h for the stacked holdings vector h.
    """
    tree = model.tree
    prices = model.assets.prices
    na = model.n_active

    h_slice = {}
    nh = 0
    for pos in range(tree.n_nodes):
        if not tree.is_leaf[pos] and na > 0:
            h_slice[int(pos)] = slice(nh, nh + na)
            nh += na

    if tree.n_nodes * max(nh, 1) > DENSE_ENTRY_GUARD:
        raise BudgetError(
            f"gains map would need {tree.n_nodes * nh} entries, "
            f"beyond the dense guard of {DENSE_ENTRY_GUARD}"
        )

    G = np.zeros((tree.n_nodes, nh))
    for pos in range(tree.n_nodes):
        p = tree.parent[pos]
        if p < 0:
            continue
        G[pos] = G[p]
        hs = h_slice.get(int(p))
        if hs is not None:
            G[pos, hs] += prices[pos, :na] - prices[p, :na]
    return G, h_slice


def cumulative_spend(model: MarketModel, c: np.ndarray) -> np.ndarray:
    """Path-cumulative consumption expenditure sum(c * dkappa) per node."""
    tree = model.tree
    spend = np.asarray(c, dtype=float) * model.clock.dkappa
    cum = spend.copy()
    for pos in range(tree.n_nodes):
        p = tree.parent[pos]
        if p >= 0:
            cum[pos] += cum[p]
    return cum


def wealth_from_strategy(model: MarketModel, H: np.ndarray, c: np.ndarray, x: float):
    """Post-consumption wealth at every node implied by holdings and rates.

    ``H`` is (n_nodes, n_active) with rows read at non-terminal nodes; ``c``
    is the per-node consumption rate.  Returns the wealth array
    x + gains-to-date - cumulative spend.
    """
    tree = model.tree
    prices = model.assets.prices
    na = model.n_active
    H = np.asarray(H, dtype=float)
    gains = np.zeros(tree.n_nodes)
    for pos in range(tree.n_nodes):
        p = tree.parent[pos]
        if p < 0:
            continue
        step = 0.0
        if na > 0:
            step = float(np.dot(H[p, :na], prices[pos, :na] - prices[p, :na]))
        gains[pos] = gains[p] + step
    return x + gains - cumulative_spend(model, c)
