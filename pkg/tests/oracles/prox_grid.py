import numpy as np


def grid_prox_2d(objective, R, h0=1e-2, levels=7, half=12):
    """Minimize a convex 2-d objective over the radius-``R`` disc by grid refinement.

    A coarse grid at spacing ``h0`` is followed by ``levels`` local grids, each
    ten times finer and centred on the previous best point. A local grid is
    re-centred until its best point is not on the window edge, which lets the
    search slide along the boundary arc. Lattice points outside the disc are
    pulled radially onto the circle so that boundary candidates sit exactly on
    the constraint; otherwise the lattice's jagged edge limits accuracy.
    """
    ax = np.arange(-R, R + h0, h0)
    U = np.stack(np.meshgrid(ax, ax), -1).reshape(-1, 2)
    best = _best(objective, U, R)
    h = h0
    for _ in range(levels):
        h /= 10.0
        off = np.arange(-half, half + 1) * h
        window = np.stack(np.meshgrid(off, off), -1).reshape(-1, 2)
        for _ in range(10_000):
            new = _best(objective, best + window, R)
            moved = np.max(np.abs(new - best))
            best = new
            if moved < (half - 1) * h:
                break
    return best


def _best(objective, U, R):
    r = np.sqrt(np.einsum("ij,ij->i", U, U))
    U = U * np.minimum(1.0, R / np.maximum(r, 1e-300))[:, None]
    vals = objective(U)
    return U[int(np.argmin(vals))]


def l1_ball_objective(v, eta, lam):
    v = np.asarray(v, dtype=float)

    def obj(U):
        return ((U - v) ** 2).sum(axis=1) / (2 * eta) + lam * np.abs(U).sum(axis=1)

    return obj
