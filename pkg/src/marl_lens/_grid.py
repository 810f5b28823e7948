"""Simultaneous-move resolution shared by both grid worlds."""

from __future__ import annotations

import numpy as np


def resolve_moves(current, targets, width, height, blocked=None):
    """Resolve one simultaneous move of every agent.

    ``current`` and ``targets`` are ``(n, 2)`` integer arrays of ``(x, y)``.
    An agent whose target equals its cell is stationary. A move fails when the
    target leaves the grid, is rejected by ``blocked(i, x, y)``, is contested by
    another agent, would swap cells with another agent, or lands on an agent
    that ends the step where it started. Failed agents stay put; resolution
    runs to a fixpoint, so the outcome does not depend on agent order.
    """
    current = np.asarray(current)
    targets = np.asarray(targets)
    n = len(current)
    cur = [tuple(int(v) for v in p) for p in current]
    tgt = [tuple(int(v) for v in p) for p in targets]

    stay = [cur[i] == tgt[i] for i in range(n)]
    for i in range(n):
        if stay[i]:
            continue
        x, y = tgt[i]
        if not (0 <= x < width and 0 <= y < height):
            stay[i] = True
        elif blocked is not None and blocked(i, x, y):
            stay[i] = True

    # Every agent with a valid move counts as a contender, even if it is
    # blocked later on.
    claims = {}
    for i in range(n):
        if not stay[i]:
            claims.setdefault(tgt[i], []).append(i)
    for cell, who in claims.items():
        if len(who) > 1:
            for i in who:
                stay[i] = True

    owner = {cur[i]: i for i in range(n)}
    changed = True
    while changed:
        changed = False
        for i in range(n):
            if stay[i]:
                continue
            j = owner.get(tgt[i])
            if j is None:
                continue
            if stay[j] or tgt[j] == cur[i]:
                stay[i] = True
                changed = True

    out = np.array(current, copy=True)
    for i in range(n):
        if not stay[i]:
            out[i] = tgt[i]
    return out
