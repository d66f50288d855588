"""Stage 2: GrabCut refinement — iterated GMM color modeling plus min-cut.

The flow network convention used throughout: the sink terminal is the
foreground pole. Cutting the source->pixel arc (paid when the pixel lands on
the sink side) therefore carries the foreground data term, and the
pixel->sink arc carries the background data term; hard constraints put the
oversized capacity on the arc whose cut would move the pixel to the wrong
side.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import breadth_first_order, maximum_flow

from .colorseg import SeedRect
from .imaging import ColorFrame

TRIMAP_BG = 0
TRIMAP_FG = 1
TRIMAP_UNKNOWN = 2

# -log likelihoods are clamped to [0, 500] before entering the network: sharp
# components can push densities above 1 (negative costs break capacities), and
# e^-500 is far below any color the GMMs can represent. A small upper clamp
# keeps the integer quantization of capacities fine-grained.
DATA_TERM_CLAMP = 500.0
_INT32_BUDGET = int(0.95 * (2**31 - 1))

# 8-neighborhood scan directions (dy, dx) covering each pair once.
_DIRECTIONS = ((0, 1, 1.0), (1, 0, 1.0), (1, 1, np.sqrt(2.0)), (1, -1, np.sqrt(2.0)))


@dataclass(frozen=True)
class GmmModel:
    """Gaussian mixture over RGB with per-component weight/mean/covariance."""

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    loglik_trace: tuple[float, ...] = ()

    def __post_init__(self):
        if not np.isclose(self.weights.sum(), 1.0, atol=1e-9):
            raise ValueError(f"GMM weights must sum to 1, got {self.weights.sum()}")
        if (self.weights < -1e-12).any():
            raise ValueError("GMM weights must be non-negative")

    @property
    def n_components(self) -> int:
        return len(self.weights)

    def component_log_pdf(self, pixels: np.ndarray) -> np.ndarray:
        """(n, K) log densities of each component at each pixel."""
        pixels = np.atleast_2d(np.asarray(pixels, dtype=np.float64))
        n, k = pixels.shape[0], self.n_components
        out = np.full((n, k), -np.inf)
        for j in range(k):
            cov = self.covariances[j]
            sign, logdet = np.linalg.slogdet(cov)
            inv = np.linalg.inv(cov)
            diff = pixels - self.means[j]
            maha = np.einsum("ni,ij,nj->n", diff, inv, diff)
            out[:, j] = -0.5 * (3.0 * np.log(2.0 * np.pi) + logdet + maha)
        return out

    def loglik(self, pixels: np.ndarray) -> np.ndarray:
        """Per-pixel log density of the mixture."""
        lp = self.component_log_pdf(pixels)
        with np.errstate(divide="ignore"):
            lw = np.log(self.weights)
        joint = lp + lw
        m = joint.max(axis=1, keepdims=True)
        m = np.where(np.isfinite(m), m, 0.0)
        return (m + np.log(np.exp(joint - m).sum(axis=1, keepdims=True)))[:, 0]


def _floor_covariance(cov: np.ndarray, reg: float) -> np.ndarray:
    """Project onto {SPD with eigenvalues >= reg}; keeps the EM step a GEM step."""
    vals, vecs = np.linalg.eigh(cov)
    return (vecs * np.maximum(vals, reg)) @ vecs.T


def _kmeans_init(pixels: np.ndarray, k: int, rng: np.random.Generator, iters: int = 10) -> np.ndarray:
    centers = pixels[rng.choice(len(pixels), size=k, replace=False)].astype(np.float64)
    for _ in range(iters):
        d2 = ((pixels[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        assign = d2.argmin(axis=1)
        for j in range(k):
            sel = assign == j
            if sel.any():
                centers[j] = pixels[sel].mean(axis=0)
            else:
                centers[j] = pixels[d2.min(axis=1).argmax()]
    return centers


def _em_loop(
    pixels: np.ndarray,
    weights: np.ndarray,
    means: np.ndarray,
    covs: np.ndarray,
    max_iters: int,
    tol: float,
    reg: float,
) -> GmmModel:
    n = len(pixels)
    trace: list[float] = []
    model = GmmModel(weights, means, covs)
    prev = -np.inf
    for _ in range(max_iters):
        lp = model.component_log_pdf(pixels)
        with np.errstate(divide="ignore"):
            joint = lp + np.log(model.weights)
        m = joint.max(axis=1, keepdims=True)
        m = np.where(np.isfinite(m), m, 0.0)
        lse = m + np.log(np.exp(joint - m).sum(axis=1, keepdims=True))
        ll = float(lse.sum())
        trace.append(ll)
        resp = np.exp(joint - lse)
        nk = resp.sum(axis=0)
        # weights take the exact maximizer; means/covariances of components
        # with no responsibility mass are frozen (a generalized EM step)
        new_w = nk / n
        new_mu = model.means.copy()
        new_cov = model.covariances.copy()
        live = nk > 1e-10
        for j in np.flatnonzero(live):
            mu = resp[:, j] @ pixels / nk[j]
            diff = pixels - mu
            cov = (resp[:, j, None] * diff).T @ diff / nk[j]
            new_mu[j] = mu
            new_cov[j] = _floor_covariance(cov, reg)
        model = GmmModel(new_w, new_mu, new_cov)
        if ll - prev < tol and np.isfinite(prev):
            break
        prev = ll
    trace.append(float(model.loglik(pixels).sum()))
    return replace(model, loglik_trace=tuple(trace))


def fit_gmm(
    pixels: np.ndarray,
    k: int = 5,
    max_iters: int = 30,
    tol: float = 1e-9,
    reg: float = 0.01,
    seed: int = 0,
) -> GmmModel:
    """EM fit from a k-means initialization; the loglik trace is non-decreasing.

    Covariances are kept SPD with an eigenvalue floor of reg. If there are
    fewer pixels than components, k is reduced with a warning.
    """
    pixels = np.atleast_2d(np.asarray(pixels, dtype=np.float64))
    n = len(pixels)
    if n == 0:
        raise ValueError("cannot fit a GMM to zero pixels")
    if n < k:
        warnings.warn(f"only {n} pixels for {k} components; reducing K to {n}", stacklevel=2)
        k = n
    rng = np.random.default_rng(seed)
    centers = _kmeans_init(pixels, k, rng)
    d2 = ((pixels[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    assign = d2.argmin(axis=1)
    means = centers.copy()
    covs = np.empty((k, 3, 3))
    counts = np.bincount(assign, minlength=k).astype(np.float64)
    weights = np.maximum(counts, 1.0)
    weights = weights / weights.sum()
    for j in range(k):
        sel = assign == j
        if sel.sum() > 1:
            means[j] = pixels[sel].mean(axis=0)
            covs[j] = _floor_covariance(np.cov(pixels[sel].T, bias=True), reg)
        elif sel.any():
            means[j] = pixels[sel][0]
            covs[j] = np.eye(3) * reg
        else:
            covs[j] = np.eye(3) * reg
    return _em_loop(pixels, weights, means, covs, max_iters, tol, reg)


def em_refit(model: GmmModel, pixels: np.ndarray, max_iters: int = 10, tol: float = 1e-9, reg: float = 0.01) -> GmmModel:
    """Warm-started EM on a new pixel set, keeping the existing components."""
    pixels = np.atleast_2d(np.asarray(pixels, dtype=np.float64))
    if len(pixels) == 0:
        return model
    return _em_loop(pixels, model.weights.copy(), model.means.copy(), model.covariances.copy(), max_iters, tol, reg)


# ---------------------------------------------------------------------------
# flow network / min cut
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GrabCutConfig:
    components: int = 5
    gamma: float = 50.0
    iterations: int = 5
    cov_reg: float = 0.01
    em_iters: int = 25
    em_refit_iters: int = 10
    em_tol: float = 1e-9
    gmm_sample_cap: Optional[int] = 20000

    def __post_init__(self):
        if self.components < 1 or self.gamma <= 0 or self.iterations < 1:
            raise ValueError("GrabCutConfig requires components >= 1, gamma > 0, iterations >= 1")


@dataclass
class FlowNetwork:
    """Directed pixel graph with terminals; n-links appear once per direction."""

    n_nodes: int
    source: int
    sink: int
    edge_u: np.ndarray
    edge_v: np.ndarray
    edge_cap: np.ndarray
    shape: Optional[tuple[int, int]] = None

    def __post_init__(self):
        if (self.edge_cap < 0).any():
            raise ValueError("capacities must be non-negative")


def _neighbor_slices(shape: tuple[int, int], dy: int, dx: int):
    h, w = shape
    ys = np.arange(max(0, -dy), h - max(0, dy))
    xs = np.arange(max(0, -dx), w - max(0, dx))
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return yy, xx, yy + dy, xx + dx


def contrast_beta(image: np.ndarray) -> float:
    """beta = 1 / (2 * mean squared neighbor color difference), 0 on flat images."""
    img = np.asarray(image, dtype=np.float64)
    total, count = 0.0, 0
    for dy, dx, _ in _DIRECTIONS:
        yy, xx, ny, nx = _neighbor_slices(img.shape[:2], dy, dx)
        diff = ((img[yy, xx] - img[ny, nx]) ** 2).sum(axis=-1)
        total += diff.sum()
        count += diff.size
    mean = total / max(1, count)
    return 0.0 if mean <= 0 else 1.0 / (2.0 * mean)


def _data_term(gmm: GmmModel, pixels: np.ndarray) -> np.ndarray:
    return np.clip(-gmm.loglik(pixels), 0.0, DATA_TERM_CLAMP)


def build_network(
    image: np.ndarray,
    trimap: np.ndarray,
    fg_gmm: GmmModel,
    bg_gmm: GmmModel,
    config: GrabCutConfig = GrabCutConfig(),
) -> FlowNetwork:
    """Assemble n-links (contrast-weighted smoothness) and t-links (data terms).

    n-link(m,n) = gamma * exp(-beta * ||z_m - z_n||^2) / dist(m,n) over the
    8-neighborhood. For unknown pixels the source arc carries -log P_fg and
    the sink arc -log P_bg (both clamped); sure pixels get the oversized
    hard-constraint capacity on the arc that pins them to their side.
    """
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape[:2]
    n_pix = h * w
    source, sink = n_pix, n_pix + 1
    beta = contrast_beta(img)
    gamma = config.gamma

    us, vs, caps = [], [], []
    for dy, dx, dist in _DIRECTIONS:
        yy, xx, ny, nx = _neighbor_slices((h, w), dy, dx)
        d2 = ((img[yy, xx] - img[ny, nx]) ** 2).sum(axis=-1)
        wgt = (gamma / dist) * np.exp(-beta * d2)
        a = (yy * w + xx).ravel()
        b = (ny * w + nx).ravel()
        c = wgt.ravel()
        us.append(a)
        vs.append(b)
        caps.append(c)
        us.append(b)
        vs.append(a)
        caps.append(c)

    flat_tri = trimap.ravel()
    hard = 2.0 * (8.0 * gamma + DATA_TERM_CLAMP) + 1.0
    src_cap = np.zeros(n_pix)
    snk_cap = np.zeros(n_pix)

    unknown = flat_tri == TRIMAP_UNKNOWN
    if unknown.any():
        px = img.reshape(-1, 3)[unknown]
        src_cap[unknown] = _data_term(fg_gmm, px)
        snk_cap[unknown] = _data_term(bg_gmm, px)
    snk_cap[flat_tri == TRIMAP_FG] = hard
    src_cap[flat_tri == TRIMAP_BG] = hard

    pix_ids = np.arange(n_pix)
    us.append(np.full(n_pix, source))
    vs.append(pix_ids)
    caps.append(src_cap)
    us.append(pix_ids)
    vs.append(np.full(n_pix, sink))
    caps.append(snk_cap)

    return FlowNetwork(
        n_nodes=n_pix + 2,
        source=source,
        sink=sink,
        edge_u=np.concatenate(us).astype(np.int32),
        edge_v=np.concatenate(vs).astype(np.int32),
        edge_cap=np.concatenate(caps),
        shape=(h, w),
    )


def max_flow(network: FlowNetwork) -> tuple[float, np.ndarray]:
    """Exact max-flow / min-cut of the network.

    Returns (flow value, per-pixel side) where side True = sink side. The cut
    labeling puts a node on the sink side iff it still has a residual path to
    the sink; everything else (including isolated nodes) is source side, which
    keeps the output deterministic.

    Integer capacities are solved exactly; float capacities are quantized so
    the largest capacity maps near the int32 limit (the solved cut is exact
    for the quantized network).
    """
    caps = np.asarray(network.edge_cap, dtype=np.float64)
    if caps.size and caps.max() > 0:
        integral = np.all(caps == np.rint(caps)) and caps.max() <= _INT32_BUDGET
        scale = 1.0 if integral else _INT32_BUDGET / caps.max()
    else:
        scale = 1.0
    icaps = np.rint(caps * scale).astype(np.int64)

    n = network.n_nodes
    rows = np.concatenate([network.edge_u, network.edge_v])
    cols = np.concatenate([network.edge_v, network.edge_u])
    data = np.concatenate([icaps, np.zeros_like(icaps)])
    graph = csr_matrix((data, (rows, cols)), shape=(n, n))
    graph.sum_duplicates()
    graph = graph.astype(np.int32)

    result = maximum_flow(graph, network.source, network.sink)
    residual = graph.data.astype(np.int64) - result.flow.data

    # reverse-reachability from the sink over arcs with positive residual
    coo = graph.tocoo()
    alive = residual > 0
    rev = csr_matrix(
        (np.ones(int(alive.sum()), dtype=np.int8), (coo.col[alive], coo.row[alive])),
        shape=(n, n),
    )
    order = breadth_first_order(rev, network.sink, directed=True, return_predecessors=False)
    sink_side = np.zeros(n, dtype=bool)
    sink_side[order] = True

    n_pix = n - 2
    return float(result.flow_value) / scale, sink_side[:n_pix]


def make_trimap(rough: np.ndarray, rect: SeedRect, shape: tuple[int, int]) -> np.ndarray:
    """Sure-foreground = rough pixels inside the rect, unknown = rest of the
    rect, sure-background = everything outside."""
    tri = np.full(shape, TRIMAP_BG, dtype=np.uint8)
    sl = (slice(rect.y0, rect.y0 + rect.h), slice(rect.x0, rect.x0 + rect.w))
    tri[sl] = TRIMAP_UNKNOWN
    inside = np.zeros(shape, dtype=bool)
    inside[sl] = True
    tri[rough & inside] = TRIMAP_FG
    return tri


def cut_energy(
    image: np.ndarray,
    fg_mask: np.ndarray,
    trimap: np.ndarray,
    fg_gmm: GmmModel,
    bg_gmm: GmmModel,
    config: GrabCutConfig = GrabCutConfig(),
) -> float:
    """Data + smoothness energy of a labeling under the given color models.

    Data terms are evaluated for unknown pixels only (sure pixels are fixed by
    construction), matching what the flow network encodes.
    """
    img = np.asarray(image, dtype=np.float64)
    flat = img.reshape(-1, 3)
    fg_flat = fg_mask.ravel()
    unknown = trimap.ravel() == TRIMAP_UNKNOWN
    energy = 0.0
    sel = unknown & fg_flat
    if sel.any():
        energy += float(_data_term(fg_gmm, flat[sel]).sum())
    sel = unknown & ~fg_flat
    if sel.any():
        energy += float(_data_term(bg_gmm, flat[sel]).sum())
    beta = contrast_beta(img)
    for dy, dx, dist in _DIRECTIONS:
        yy, xx, ny, nx = _neighbor_slices(img.shape[:2], dy, dx)
        differs = fg_mask[yy, xx] != fg_mask[ny, nx]
        if differs.any():
            d2 = ((img[yy, xx][differs] - img[ny, nx][differs]) ** 2).sum(axis=-1)
            energy += float(((config.gamma / dist) * np.exp(-beta * d2)).sum())
    return energy


@dataclass
class GrabCutResult:
    mask: np.ndarray
    fg_gmm: GmmModel
    bg_gmm: GmmModel
    energy_trace: list[float]
    iterations: int


def _subsample(pixels: np.ndarray, cap: Optional[int], rng: np.random.Generator) -> np.ndarray:
    if cap is None or len(pixels) <= cap:
        return pixels
    return pixels[rng.choice(len(pixels), size=cap, replace=False)]


def grabcut_refine_full(
    frame: ColorFrame,
    rough: np.ndarray,
    rect: SeedRect,
    config: GrabCutConfig = GrabCutConfig(),
    seed: int = 0,
) -> GrabCutResult:
    """Full GrabCut loop returning the mask plus models and the energy trace.

    The rough-mask pixels inside the rect seed the initial foreground color
    model but are not pinned: only outside-the-rect is hard background, so the
    cut can still shed stage-1 false positives (halo pixels hardened as
    foreground were observed to snowball instead of shrinking).
    """
    if rect.w < 1 or rect.h < 1:
        raise ValueError("seed rectangle must be non-degenerate")
    img = frame.pixels.astype(np.float64)
    shape = img.shape[:2]
    inside = np.zeros(shape, dtype=bool)
    inside[rect.y0:rect.y0 + rect.h, rect.x0:rect.x0 + rect.w] = True
    seeds = rough & inside
    if not seeds.any():
        warnings.warn("no rough-mask pixels inside the seed rectangle; mask unchanged", stacklevel=2)
        return GrabCutResult(rough.copy(), None, None, [], 0)
    trimap = np.where(inside, TRIMAP_UNKNOWN, TRIMAP_BG).astype(np.uint8)

    rng = np.random.default_rng(seed)
    flat = img.reshape(-1, 3)
    fg_assign = seeds.copy()

    # foreground model from the seed pixels, background from outside the rect;
    # the unknown band must not leak into either initial fit
    fg_gmm = fit_gmm(
        _subsample(flat[fg_assign.ravel()], config.gmm_sample_cap, rng),
        k=config.components, max_iters=config.em_iters, tol=config.em_tol,
        reg=config.cov_reg, seed=int(rng.integers(2**31)),
    )
    bg_init = ~inside if (~inside).any() else ~fg_assign
    bg_gmm = fit_gmm(
        _subsample(flat[bg_init.ravel()], config.gmm_sample_cap, rng),
        k=config.components, max_iters=config.em_iters, tol=config.em_tol,
        reg=config.cov_reg, seed=int(rng.integers(2**31)),
    )

    trace: list[float] = []
    iterations = 0
    for it in range(config.iterations):
        net = build_network(img, trimap, fg_gmm, bg_gmm, config)
        _, sink_side = max_flow(net)
        new_fg = inside & sink_side.reshape(shape)
        trace.append(cut_energy(img, new_fg, trimap, fg_gmm, bg_gmm, config))
        iterations = it + 1
        if np.array_equal(new_fg, fg_assign) and it > 0:
            fg_assign = new_fg
            break
        fg_assign = new_fg
        if not fg_assign.any():
            warnings.warn("GrabCut emptied the foreground; returning the rough mask", stacklevel=2)
            return GrabCutResult(rough.copy(), fg_gmm, bg_gmm, trace, iterations)
        if it + 1 < config.iterations:
            fg_gmm = em_refit(fg_gmm, _subsample(flat[fg_assign.ravel()], config.gmm_sample_cap, rng),
                              max_iters=config.em_refit_iters, tol=config.em_tol, reg=config.cov_reg)
            bg_gmm = em_refit(bg_gmm, _subsample(flat[~fg_assign.ravel()], config.gmm_sample_cap, rng),
                              max_iters=config.em_refit_iters, tol=config.em_tol, reg=config.cov_reg)
    return GrabCutResult(fg_assign, fg_gmm, bg_gmm, trace, iterations)


def grabcut_refine(
    frame: ColorFrame,
    rough: np.ndarray,
    rect: SeedRect,
    config: GrabCutConfig = GrabCutConfig(),
    seed: int = 0,
) -> np.ndarray:
    """Refined boolean foreground mask (restricted to the seed rectangle)."""
    return grabcut_refine_full(frame, rough, rect, config, seed).mask


def resolve_overlap(
    image: np.ndarray,
    left_mask: np.ndarray,
    right_mask: np.ndarray,
    left_gmm: Optional[GmmModel],
    right_gmm: Optional[GmmModel],
) -> tuple[np.ndarray, np.ndarray]:
    """Hands are segmented independently; overlapping pixels go to the side
    whose foreground model likes them more."""
    overlap = left_mask & right_mask
    if not overlap.any() or left_gmm is None or right_gmm is None:
        if overlap.any():
            right_mask = right_mask & ~overlap
        return left_mask, right_mask
    px = np.asarray(image, dtype=np.float64).reshape(-1, 3)[overlap.ravel()]
    left_wins = left_gmm.loglik(px) >= right_gmm.loglik(px)
    left_out = left_mask.copy()
    right_out = right_mask.copy()
    ys, xs = np.nonzero(overlap)
    left_out[ys[~left_wins], xs[~left_wins]] = False
    right_out[ys[left_wins], xs[left_wins]] = False
    return left_out, right_out
