"""Reduced pixel-pair system: validity masks, tiling and greedy spanning trees.

Every equation links two co-located samples ``(pixel, channel)`` of exposures
``i < j`` and states ``e_i - e_j = ln y_i - ln y_j`` with a row weight.
Within each tile the k highest-weighted spanning trees of the exposure
multigraph are extracted greedily, without building the graph.
"""
import json
import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .errors import DataContractError, UnsolvableSystemError
from .noise import NoiseParameters, row_weight_calibrated, row_weight_calibration_free

logger = logging.getLogger(__name__)

WEIGHT_MODES = ("calibrated", "calibration-free", "uniform")
TOPOLOGIES = ("greedy", "pairwise")
ANCHOR_ESTIMATES = ("neighborhood", "pixel")


class Tile(NamedTuple):
    y0: int
    x0: int
    height: int
    width: int


class Edge(NamedTuple):
    i: int
    j: int
    p: int
    weight: float


class DisconnectedPair(NamedTuple):
    """No jointly valid sample exists for exposures ``(i, i + 1)``."""
    i: int
    j: int


@dataclass(frozen=True)
class PairEquation:
    i: int
    j: int
    p: int
    channel: int
    m: float
    w: float
    tile_id: int


def validity_mask(image, white_level, lower_frac=0.01, upper_frac=0.95):
    """True where ``lower_frac * white < y < upper_frac * white``."""
    if not 0.0 <= lower_frac < upper_frac <= 1.0:
        raise ValueError(f"need 0 <= lower_frac < upper_frac <= 1, got {lower_frac}, {upper_frac}")
    y = np.asarray(image)
    return (y > lower_frac * white_level) & (y < upper_frac * white_level)


def tile_grid(height, width, t):
    """Row-major cover of an ``height x width`` image by ``t x t`` tiles."""
    if t < 1:
        raise ValueError("tile size must be >= 1")
    return [
        Tile(y0, x0, min(t, height - y0), min(t, width - x0))
        for y0 in range(0, height, t)
        for x0 in range(0, width, t)
    ]


def greedy_mst(tile_pixels, masks, weight_fn, exclude=None):
    """One greedy maximum spanning tree over a single tile.

    Args:
        tile_pixels: ``(N, P)`` sample values, images sorted by exposure.
        masks: ``(N, P)`` validity flags.
        weight_fn: ``weight_fn(i, j, y_i, y_j, idx)`` returning edge weights
            for sample indices ``idx``.
        exclude: optional ``(N, P)`` flags of samples already used as the
            anchor of exposure ``i``; they are skipped for that exposure.

    Returns:
        ``(edges, diagnostics)`` where ``edges`` holds at most ``N - 1``
        :class:`Edge` tuples and ``diagnostics`` lists the
        :class:`DisconnectedPair` s that had no candidate.
    """
    y = np.asarray(tile_pixels, dtype=np.float64)
    masks = np.asarray(masks, dtype=bool)
    n = y.shape[0]
    edges, diagnostics = [], []
    for i in range(n - 1):
        cand = masks[i] & masks[i + 1]
        if exclude is not None:
            cand &= ~exclude[i]
        idx = np.flatnonzero(cand)
        if idx.size == 0:
            diagnostics.append(DisconnectedPair(i, i + 1))
            continue
        w = weight_fn(i, i + 1, y[i, idx], y[i + 1, idx], idx)
        # argmax returns the first maximum: lowest sample index wins ties
        p_star = int(idx[np.argmax(w)])
        for j in range(n - 1, i, -1):
            if masks[j, p_star]:
                wj = weight_fn(i, j, y[i, [p_star]], y[j, [p_star]], np.array([p_star]))
                edges.append(Edge(i, j, p_star, float(np.asarray(wj).ravel()[0])))
                break
    return edges, diagnostics


def greedy_k_trees(tile_pixels, masks, weight_fn, k, pairwise=False):
    """Run :func:`greedy_mst` ``k`` times, retiring each anchor sample.

    After a tree is extracted, the anchor sample ``p*`` chosen for exposure
    ``i`` is excluded from later searches for that exposure, so the trees are
    edge-disjoint. With ``pairwise`` every edge joins consecutive exposures.
    """
    masks = np.asarray(masks, dtype=bool)
    exclude = np.zeros_like(masks)
    trees = []
    for _ in range(k):
        if pairwise:
            edges, _ = _pairwise_tree(tile_pixels, masks, weight_fn, exclude)
        else:
            edges, _ = greedy_mst(tile_pixels, masks, weight_fn, exclude)
        if not edges:
            break
        for e in edges:
            exclude[e.i, e.p] = True
        trees.append(edges)
    return trees


def _pairwise_tree(tile_pixels, masks, weight_fn, exclude):
    y = np.asarray(tile_pixels, dtype=np.float64)
    edges, diagnostics = [], []
    for i in range(y.shape[0] - 1):
        idx = np.flatnonzero(masks[i] & masks[i + 1] & ~exclude[i])
        if idx.size == 0:
            diagnostics.append(DisconnectedPair(i, i + 1))
            continue
        w = weight_fn(i, i + 1, y[i, idx], y[i + 1, idx], idx)
        a = int(np.argmax(w))
        edges.append(Edge(i, i + 1, int(idx[a]), float(w[a])))
    return edges, diagnostics


@dataclass
class SystemConfig:
    tile_size: int = 16
    k: int = 50
    weight_mode: str = "calibration-free"
    lower_frac: float = 0.01
    upper_frac: float = 0.95
    noise_params: Optional[NoiseParameters] = None
    topology: str = "greedy"
    threads: int = 1
    require_connected: bool = True
    anchor_estimate: str = "neighborhood"
    anchor_margin: float = 2.0

    def __post_init__(self):
        if self.anchor_estimate not in ANCHOR_ESTIMATES:
            raise DataContractError(f"anchor_estimate must be one of {ANCHOR_ESTIMATES}")
        if self.weight_mode not in WEIGHT_MODES:
            raise DataContractError(f"weight_mode must be one of {WEIGHT_MODES}, got {self.weight_mode!r}")
        if self.topology not in TOPOLOGIES:
            raise DataContractError(f"topology must be one of {TOPOLOGIES}")
        if self.weight_mode == "calibrated" and self.noise_params is None:
            raise DataContractError("calibrated weights require noise parameters")
        if self.tile_size < 1 or self.k < 1:
            raise DataContractError("tile_size and k must be >= 1")
        if not 0.0 <= self.lower_frac < self.upper_frac <= 1.0:
            raise DataContractError("need 0 <= lower_frac < upper_frac <= 1")

    def to_dict(self):
        return {
            "tile_size": self.tile_size,
            "k": self.k,
            "weight_mode": self.weight_mode,
            "valid_range": [self.lower_frac, self.upper_frac],
            "topology": self.topology,
            "anchor_estimate": self.anchor_estimate,
            "anchor_margin": self.anchor_margin,
        }


class PairWeights:
    """Row weights for the active mode, on raw post-black-level values."""

    def __init__(self, mode, white_levels, params=None, channels=1):
        self.mode = mode
        self.white = np.asarray(white_levels, dtype=np.float64)
        if mode == "calibrated":
            if params is None:
                raise DataContractError("calibrated weights require noise parameters")
            self.params = params.for_channel_count(channels)
        else:
            self.params = None

    def __call__(self, i, j, y_i, y_j, channel=0, check=True):
        if self.mode == "uniform":
            return np.ones(np.broadcast(y_i, y_j).shape)
        if self.mode == "calibration-free":
            return row_weight_calibration_free(y_i, y_j, check)
        wi = self.white[i]
        wj = self.white[j]
        return row_weight_calibrated(y_i / wi, y_j / wj, self.params, channel, check)

    def for_samples(self, channels):
        """Adapter to the ``weight_fn(i, j, y_i, y_j, idx)`` form used by
        :func:`greedy_mst`, where ``idx % channels`` is the channel."""
        def fn(i, j, y_i, y_j, idx):
            return self(i, j, y_i, y_j, np.asarray(idx) % channels)
        return fn


@dataclass
class ReducedSystem:
    """Selected pair equations stored column-wise, with provenance."""

    i: np.ndarray
    j: np.ndarray
    pixel: np.ndarray
    channel: np.ndarray
    m: np.ndarray
    w: np.ndarray
    tile: np.ndarray
    n_exposures: int
    y_i: Optional[np.ndarray] = None
    y_j: Optional[np.ndarray] = None
    image_shape: tuple = ()
    tile_size: int = 0
    diagnostics: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.m)

    @property
    def tiles_used(self):
        return set(np.flatnonzero(np.bincount(self.tile[self.tile >= 0])).tolist()) if len(self) else set()

    @classmethod
    def empty(cls, n_exposures):
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z.copy(), z.copy(), z.copy(), np.zeros(0), np.zeros(0), z.copy(),
                   n_exposures, np.zeros(0), np.zeros(0))

    @classmethod
    def from_rows(cls, rows, n_exposures):
        rows = list(rows)
        cols = {
            name: np.array([getattr(r, name) for r in rows])
            for name in ("i", "j", "p", "channel", "m", "w", "tile_id")
        }
        if not rows:
            return cls.empty(n_exposures)
        return cls(cols["i"].astype(np.int64), cols["j"].astype(np.int64), cols["p"].astype(np.int64),
                   cols["channel"].astype(np.int64), cols["m"].astype(np.float64),
                   cols["w"].astype(np.float64), cols["tile_id"].astype(np.int64), n_exposures)

    def rows(self):
        for k in range(len(self)):
            yield PairEquation(int(self.i[k]), int(self.j[k]), int(self.pixel[k]),
                               int(self.channel[k]), float(self.m[k]), float(self.w[k]),
                               int(self.tile[k]))

    def subset(self, keep):
        """Rows selected by a boolean mask or index array."""
        def take(a):
            return None if a is None else a[keep]
        return ReducedSystem(self.i[keep], self.j[keep], self.pixel[keep], self.channel[keep],
                             self.m[keep], self.w[keep], self.tile[keep], self.n_exposures,
                             take(self.y_i), take(self.y_j), self.image_shape, self.tile_size,
                             dict(self.diagnostics))

    def with_weights(self, w):
        out = self.subset(slice(None))
        out.w = np.asarray(w, dtype=np.float64)
        return out

    def select_tiles(self, tile_ids):
        return self.subset(np.isin(self.tile, np.fromiter(tile_ids, dtype=np.int64)))

    def pair_graph_components(self):
        """Connected components of the exposure graph as a list of sets."""
        parent = list(range(self.n_exposures))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        if len(self):
            n = self.n_exposures
            keys = np.flatnonzero(np.bincount(self.i * n + self.j, minlength=n * n))
            for a, b in zip(keys // n, keys % n):
                ra, rb = find(int(a)), find(int(b))
                if ra != rb:
                    parent[ra] = rb
        groups = {}
        for v in range(self.n_exposures):
            groups.setdefault(find(v), set()).add(v)
        return sorted(groups.values(), key=min)

    def is_connected(self):
        return len(self.pair_graph_components()) == 1

    def unreachable_from(self, root):
        comps = self.pair_graph_components()
        main = next(c for c in comps if root in c)
        return sorted(set(range(self.n_exposures)) - main)

    def to_json(self, path=None):
        doc = {
            "n_exposures": self.n_exposures,
            "image_shape": list(self.image_shape),
            "tile_size": self.tile_size,
            "diagnostics": {str(k): v for k, v in self.diagnostics.items()},
            "equations": [
                {"i": r.i, "j": r.j, "p": r.p, "channel": r.channel, "m": r.m, "w": r.w, "tile": r.tile_id}
                for r in self.rows()
            ],
        }
        text = json.dumps(doc)
        if path is not None:
            with open(path, "w") as f:
                f.write(text)
        return text

    def sorted(self):
        order = np.lexsort((self.channel, self.pixel, self.j, self.i, self.tile))
        return self.subset(order)


def concat_systems(systems, n_exposures):
    diag = Counter()
    for s in systems:
        diag.update(s.diagnostics.get("disconnected_pairs", {}))
    systems = [s for s in systems if len(s)]
    if not systems:
        out = ReducedSystem.empty(n_exposures)
        out.diagnostics["disconnected_pairs"] = dict(diag)
        return out
    cat = lambda name: np.concatenate([getattr(s, name) for s in systems])
    out = ReducedSystem(cat("i"), cat("j"), cat("pixel"), cat("channel"), cat("m"), cat("w"),
                        cat("tile"), n_exposures, cat("y_i"), cat("y_j"),
                        systems[0].image_shape, systems[0].tile_size)
    out.diagnostics["disconnected_pairs"] = dict(diag)
    return out


def _topk_mask(w, k):
    """Per row, flag the ``k`` largest finite entries; ties go to lower columns."""
    rows, cols = w.shape
    finite = np.isfinite(w)
    if cols <= k:
        return finite
    kth = np.partition(w, cols - k, axis=1)[:, cols - k, None]
    above = w > kth
    ties = w == kth
    need = k - above.sum(axis=1)
    sel = above | ties
    # only rows with surplus ties need the lowest-column tie-break
    over = np.flatnonzero((ties.sum(axis=1) > need) & np.isfinite(kth[:, 0]))
    if over.size:
        t_over = ties[over]
        sel[over] = above[over] | (t_over & (np.cumsum(t_over, axis=1) <= need[over, None]))
    return sel & finite


def neighborhood_mean(images, axes=(1, 2), dtype=np.float64):
    """Mean of the 3x3 neighbours of every sample, excluding the sample itself.

    Axes shorter than three pixels are not filtered. Borders are mirrored
    about the edge pixel so the centre never re-enters its own average.
    """
    y = np.asarray(images, dtype=dtype)
    active = [ax % y.ndim for ax in axes if y.shape[ax] >= 3]
    if not active:
        return y.copy()
    pad = [(1, 1) if d in active else (0, 0) for d in range(y.ndim)]
    # separable 3-tap box sums over shifted views; "reflect" excludes the edge
    box = np.pad(y, pad, mode="reflect")
    for ax in active:
        n = box.shape[ax]
        view = lambda a, b: tuple(slice(a, b) if d == ax else slice(None) for d in range(box.ndim))
        acc = box[view(0, n - 2)] + box[view(1, n - 1)]
        acc += box[view(2, n)]
        box = acc
    box -= y
    box /= 3 ** len(active) - 1
    return box


def _to_tiles(a, t, tiles_x):
    n, h, w, c = a.shape
    ty = -(-h // t)
    fx, rem = divmod(w, t)
    # (N, ty, tx, t, t, C) -> (N, ty*tx, t*t*C); sample q = (ry*t + rx)*C + ch
    out = np.zeros((n, ty, tiles_x, t, t, c), dtype=a.dtype)
    grid = out.transpose(0, 1, 3, 2, 4, 5)  # (N, ty, ry, tx, rx, C) view
    for r in range(ty):
        rows = a[:, r * t:(r + 1) * t]
        hr = rows.shape[1]
        grid[:, r, :hr, :fx] = rows[:, :, :fx * t].reshape(n, hr, fx, t, c)
        if rem:
            grid[:, r, :hr, fx, :rem] = rows[:, :, fx * t:]
    return out.reshape(n, ty * tiles_x, t * t * c)


def _band_system(images, white, cfg: SystemConfig, weights: PairWeights,
                 row0, tiles_x, tile_row0, full_width, smoothed=None):
    """Equations for one horizontal band of whole tile rows.

    ``smoothed`` holds the band's neighbourhood means when anchors are ranked
    by them.
    """
    n, h, w_img, c = images.shape
    t = cfg.tile_size
    ty = -(-h // t)
    y = _to_tiles(images, t, tiles_x)
    lo = cfg.lower_frac * white[:, None, None]
    hi = cfg.upper_frac * white[:, None, None]
    valid = (y > lo) & (y < hi)
    if cfg.anchor_estimate == "neighborhood":
        ys = _to_tiles(smoothed, t, tiles_x)
        # anchors must also look valid from their neighbours, so the choice
        # does not hinge on the sample's own noise near a threshold
        anchor_ok = valid & (ys > cfg.anchor_margin * lo) & (ys < hi)
    else:
        ys = y
        anchor_ok = valid

    ys64 = ys.astype(np.float64)
    q = np.arange(t * t * c)
    q_chan = q % c
    q_pix = q // c
    q_ry, q_rx = q_pix // t, q_pix % t
    n_tiles = ty * tiles_x
    tile_local = np.arange(n_tiles)
    tile_ty, tile_tx = tile_local // tiles_x, tile_local % tiles_x

    out = {name: [] for name in ("i", "j", "t", "q", "w", "m", "yi", "yj")}
    disconnected = Counter()
    for i in range(n - 1):
        cand = anchor_ok[i] & anchor_ok[i + 1]
        has_any = cand.any(axis=1)
        if not has_any.all():
            disconnected[(i, i + 1)] += int((~has_any).sum())
        if not has_any.any():
            continue
        # dense evaluation; masked-out samples get a dummy positive value
        yi_s = np.where(cand, ys64[i], 1.0)
        yj_s = np.where(cand, ys64[i + 1], 1.0)
        sel_w = np.where(cand, weights(i, i + 1, yi_s, yj_s, q_chan, check=False), -np.inf)
        tt, qq = np.nonzero(_topk_mask(sel_w, cfg.k))
        if cfg.topology == "pairwise":
            jj = np.full(tt.shape, i + 1)
        else:
            # longest exposure in which the anchor sample is still valid
            jj = np.full(tt.shape, i + 1)
            for j in range(i + 2, n):
                jj = np.where(anchor_ok[j, tt, qq], j, jj)
        yi = y[i, tt, qq].astype(np.float64)
        yj = y[jj, tt, qq].astype(np.float64)
        out["i"].append(np.full(tt.shape, i))
        out["j"].append(jj)
        out["t"].append(tt)
        out["q"].append(qq)
        out["w"].append(weights(i, jj, yi, yj, q_chan[qq]))
        out["m"].append(np.log(yi) - np.log(yj))
        out["yi"].append(yi)
        out["yj"].append(yj)

    if not out["i"]:
        sys_ = ReducedSystem.empty(n)
        sys_.diagnostics["disconnected_pairs"] = dict(disconnected)
        return sys_
    cat = {k: np.concatenate(v) for k, v in out.items()}
    # order by (tile, i, j, sample); sample order within a tile is pixel-major
    key = ((cat["t"] * n + cat["i"]) * n + cat["j"]) * (t * t * c) + cat["q"]
    order = np.argsort(key, kind="stable")
    cat = {k: v[order] for k, v in cat.items()}
    tt, qq = cat["t"], cat["q"]
    py = row0 + tile_ty[tt] * t + q_ry[qq]
    px = tile_tx[tt] * t + q_rx[qq]
    tile_id = (tile_row0 + tile_ty[tt]) * tiles_x + tile_tx[tt]
    sys_ = ReducedSystem(
        cat["i"].astype(np.int64), cat["j"].astype(np.int64), (py * full_width + px).astype(np.int64),
        q_chan[qq].astype(np.int64), cat["m"], cat["w"], tile_id.astype(np.int64), n,
        cat["yi"], cat["yj"],
    )
    sys_.diagnostics["disconnected_pairs"] = dict(disconnected)
    return sys_


def build_system(stack, config: Optional[SystemConfig] = None, band_tiles=2) -> ReducedSystem:
    """Assemble the reduced, weighted system for a whole stack.

    Tiles are processed in horizontal bands of ``band_tiles`` tile rows,
    optionally in parallel; the result is sorted by tile, exposure pair and
    pixel so it does not depend on scheduling.
    """
    cfg = config or SystemConfig()
    images = stack.images
    n, height, width, c = images.shape
    white = stack.white_levels
    weights = PairWeights(cfg.weight_mode, white, cfg.noise_params, c)
    t = cfg.tile_size
    tiles_x = -(-width // t)
    tiles_y = -(-height // t)
    band_rows = max(1, int(band_tiles)) * t

    jobs = [(r0, r0 // t) for r0 in range(0, height, band_rows)]

    smoothed = None
    if cfg.anchor_estimate == "neighborhood":
        smoothed = stack.derived("neighborhood_mean",
                                 lambda: neighborhood_mean(images, dtype=np.float32))

    def run(job):
        r0, tr0 = job
        band = images[:, r0:r0 + band_rows]
        nbr = None if smoothed is None else smoothed[:, r0:r0 + band_rows]
        return _band_system(band, white, cfg, weights, r0, tiles_x, tr0, width, nbr)

    if cfg.threads and cfg.threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            parts = list(pool.map(run, jobs))
    else:
        parts = [run(job) for job in jobs]

    # bands are internally sorted and arrive in tile-row order
    system = concat_systems(parts, n)
    system.image_shape = (height, width, c)
    system.tile_size = t
    system.diagnostics["n_tiles"] = tiles_x * tiles_y
    system.diagnostics["tiles_x"] = tiles_x
    logger.debug("reduced system: %d equations from %d tiles", len(system), len(system.tiles_used))

    if cfg.require_connected:
        unreachable = system.unreachable_from(n - 1)
        if unreachable:
            raise UnsolvableSystemError(
                f"exposure graph is disconnected; exposures {unreachable} share no valid pixels "
                "with the longest exposure", unreachable)
    return system
