"""Synthetic domain-shifted benchmarks.

The RF task simulates a robot walking a floor with Wi-Fi and UWB anchors.
Per time step it produces RSSI (8), CSI-like (40), UWB range/power (6) and
IMU-like (9) channels, 63 in total. The target domain is the same floor
after some obstacles inside a designated region have been moved.

The image task renders a filled square on a flat (source) or noisy (target)
background and labels it with (scale, x, y) in [0, 1].
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .dataset import DomainDataset, save_dataset
from .exceptions import ConfigError

N_RSSI_ANCHORS = 8
N_CSI_ANCHORS = 10
CSI_WAVELENGTHS = (1.7, 2.3, 3.1, 4.3)  # synthetic, meters
MODALITY_DIMS = {"rssi": 8, "csi": 40, "uwb": 6, "imu": 9}


@dataclass
class EnvironmentSpec:
    extents: tuple = (12.0, 8.0)
    n_wifi: int = 11
    n_uwb: int = 3
    n_obstacles: int = 8
    n_region_obstacles: int = 3
    obstacle_size: tuple = (0.6, 2.0)
    attenuation_db: tuple = (3.0, 8.0)
    # target shift: obstacles inside `shift_region` are translated by `shift_offset`
    shift_region: tuple = (6.5, 3.5, 11.5, 7.5)
    shift_offset: tuple = (-2.0, -1.5)
    shift_fraction: float = 1.0
    # path loss
    p0_dbm: float = -30.0
    eta: float = 2.2
    d0: float = 0.1
    # noise stds (rssi dB, csi amplitude, uwb range m, uwb power dB, imu)
    noise_rssi: float = 2.0
    noise_csi: float = 0.05
    noise_uwb_range: float = 0.3
    noise_uwb_power: float = 2.0
    noise_imu: float = 0.05
    uwb_nlos_bias: float = 0.25
    csi_phase_per_db: float = 0.15
    # trajectory
    dt: float = 0.1
    max_speed: float = 1.0
    window_length: int = 10
    n_windows: int = 20000
    n_test_windows: int = 5000

    def __post_init__(self):
        self.extents = tuple(float(v) for v in self.extents)
        self.shift_region = tuple(float(v) for v in self.shift_region)
        self.shift_offset = tuple(float(v) for v in self.shift_offset)
        self.obstacle_size = tuple(float(v) for v in self.obstacle_size)
        self.attenuation_db = tuple(float(v) for v in self.attenuation_db)
        if any(v <= 0 for v in self.extents) or len(self.extents) != 2:
            raise ConfigError("extents must be two positive lengths")
        if self.n_wifi < N_CSI_ANCHORS:
            raise ConfigError(f"need at least {N_CSI_ANCHORS} wifi anchors")
        if self.n_uwb != 3:
            raise ConfigError("the signal layout assumes exactly 3 UWB anchors")
        if self.attenuation_db[0] < 0:
            raise ConfigError("attenuation must be non-negative")
        if self.window_length < 1 or self.n_windows < 1:
            raise ConfigError("window_length and n_windows must be >= 1")
        x0, y0, x1, y1 = self.shift_region
        L, W = self.extents
        if not (0 <= x0 < x1 <= L and 0 <= y0 < y1 <= W):
            raise ConfigError("shift_region must lie inside the floor")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    @classmethod
    def null_shift(cls, **kw):
        return cls(shift_offset=(0.0, 0.0), **kw)


@dataclass
class FloorEnvironment:
    extents: tuple
    anchors: np.ndarray  # [A, 2]
    anchor_kinds: list  # "wifi" | "uwb"
    obstacles: np.ndarray  # [O, 4] as x0, y0, x1, y1
    attenuation: np.ndarray  # [O] dB
    spec: EnvironmentSpec
    seed: int = 0

    def __post_init__(self):
        L, W = self.extents
        a, o = np.asarray(self.anchors), np.asarray(self.obstacles).reshape(-1, 4)
        if len(a) and ((a < 0).any() or (a[:, 0] > L).any() or (a[:, 1] > W).any()):
            raise ConfigError("anchor outside the floor")
        if len(o) and ((o[:, :2] < 0).any() or (o[:, 2] > L).any() or (o[:, 3] > W).any()
                       or (o[:, 2] <= o[:, 0]).any() or (o[:, 3] <= o[:, 1]).any()):
            raise ConfigError("obstacle outside the floor or degenerate")
        if (np.asarray(self.attenuation) < 0).any():
            raise ConfigError("negative attenuation")

    @property
    def wifi(self):
        return self.anchors[[k == "wifi" for k in self.anchor_kinds]]

    @property
    def uwb(self):
        return self.anchors[[k == "uwb" for k in self.anchor_kinds]]


def _perimeter_points(n, L, W, rng, inset=0.3):
    # anchors spread along the walls with jitter
    t = (np.arange(n) + rng.uniform(0.2, 0.8, n)) / n
    per = 2 * (L + W) * t
    pts = []
    for s in per:
        if s < L:
            pts.append((s, inset))
        elif s < L + W:
            pts.append((L - inset, s - L))
        elif s < 2 * L + W:
            pts.append((2 * L + W - s, W - inset))
        else:
            pts.append((inset, 2 * (L + W) - s))
    return np.clip(np.array(pts), inset, [L - inset, W - inset])


def generate_environment(spec: EnvironmentSpec, seed: int = 0):
    """Return the (source, target) floor environments for ``spec``.

    The target differs only in the obstacles that start inside
    ``spec.shift_region``: a ``shift_fraction`` of them is translated by
    ``shift_offset`` and clipped to stay inside the region.
    """
    rng = np.random.default_rng([seed, 11])
    L, W = spec.extents
    wifi = _perimeter_points(spec.n_wifi, L, W, rng)
    uwb = np.array([[0.5, 0.5], [L - 0.5, 0.5], [L / 2, W - 0.5]])
    anchors = np.vstack([wifi, uwb])
    kinds = ["wifi"] * spec.n_wifi + ["uwb"] * spec.n_uwb

    lo, hi = spec.obstacle_size
    rx0, ry0, rx1, ry1 = spec.shift_region
    obstacles = []
    for i in range(spec.n_obstacles):
        w, h = rng.uniform(lo, hi, 2)
        if i < spec.n_region_obstacles:
            bx0, by0, bx1, by1 = rx0, ry0, rx1, ry1
        else:
            bx0, by0, bx1, by1 = 0.0, 0.0, L, W
        w, h = min(w, bx1 - bx0), min(h, by1 - by0)
        x = rng.uniform(bx0, bx1 - w)
        y = rng.uniform(by0, by1 - h)
        obstacles.append((x, y, x + w, y + h))
    obstacles = np.array(obstacles, dtype=float).reshape(-1, 4)
    attenuation = rng.uniform(*spec.attenuation_db, len(obstacles))

    moved = obstacles.copy()
    inside = ((obstacles[:, 0] >= rx0) & (obstacles[:, 1] >= ry0)
              & (obstacles[:, 2] <= rx1) & (obstacles[:, 3] <= ry1))
    candidates = np.flatnonzero(inside)
    n_move = int(round(spec.shift_fraction * len(candidates)))
    dx, dy = spec.shift_offset
    for i in candidates[:n_move]:
        x0, y0, x1, y1 = obstacles[i]
        nx0 = np.clip(x0 + dx, rx0, rx1 - (x1 - x0))
        ny0 = np.clip(y0 + dy, ry0, ry1 - (y1 - y0))
        moved[i] = (nx0, ny0, nx0 + x1 - x0, ny0 + y1 - y0)

    source = FloorEnvironment(spec.extents, anchors, kinds, obstacles, attenuation, spec, seed)
    target = FloorEnvironment(spec.extents, anchors.copy(), list(kinds), moved, attenuation.copy(), spec, seed)
    return source, target


@dataclass
class Trajectory:
    points: np.ndarray  # [T, 2] meters
    dt: float
    seed: int = 0

    def __len__(self):
        return len(self.points)


def simulate_trajectory(env: FloorEnvironment, n_steps: int, seed: int = 0, max_speed=None, dt=None):
    """Random-waypoint walk with heading smoothing and a hard speed cap."""
    spec = env.spec
    if n_steps < spec.window_length:
        raise ConfigError(f"n_steps={n_steps} shorter than window_length={spec.window_length}")
    max_speed = spec.max_speed if max_speed is None else max_speed
    dt = spec.dt if dt is None else dt
    L, W = env.extents
    margin = 0.2
    rng = np.random.default_rng([seed, 23])
    pos = rng.uniform([margin, margin], [L - margin, W - margin])
    vel = np.zeros(2)
    goal = rng.uniform([margin, margin], [L - margin, W - margin])
    speed = rng.uniform(0.4, 1.0) * max_speed
    cap = max_speed * dt
    out = np.empty((n_steps, 2))
    for t in range(n_steps):
        out[t] = pos
        to_goal = goal - pos
        dist = np.hypot(*to_goal)
        if dist < 0.3:
            goal = rng.uniform([margin, margin], [L - margin, W - margin])
            speed = rng.uniform(0.4, 1.0) * max_speed
            continue
        desired = to_goal / dist * speed
        vel = 0.8 * vel + 0.2 * desired
        step = vel * dt
        n = np.hypot(*step)
        if n > cap:
            step *= cap / n
        pos = np.clip(pos + step, 0.0, [L, W])
    return Trajectory(out, dt, seed)


def _crossing_attenuation(p, anchors, obstacles, attenuation):
    """Total attenuation and crossing count of segments p[n] -> anchors[a].

    Liang-Barsky clipping of every segment against every rectangle.
    Returns two [N, A] arrays.
    """
    N, A = len(p), len(anchors)
    total = np.zeros((N, A))
    count = np.zeros((N, A))
    if len(obstacles) == 0:
        return total, count
    px, py = p[:, None, 0], p[:, None, 1]
    dx = anchors[None, :, 0] - px
    dy = anchors[None, :, 1] - py
    for (x0, y0, x1, y1), att in zip(obstacles, attenuation):
        t0 = np.zeros((N, A))
        t1 = np.ones((N, A))
        ok = np.ones((N, A), dtype=bool)
        for d, q in ((-dx, px - x0), (dx, x1 - px), (-dy, py - y0), (dy, y1 - py)):
            q = np.broadcast_to(q, (N, A))
            par = d == 0
            ok &= ~(par & (q < 0))
            with np.errstate(divide="ignore", invalid="ignore"):
                r = np.where(par, 0.0, q / np.where(par, 1.0, d))
            t0 = np.where(~par & (d < 0), np.maximum(t0, r), t0)
            t1 = np.where(~par & (d > 0), np.minimum(t1, r), t1)
        hit = ok & (t0 < t1)
        total += att * hit
        count += hit
    return total, count


def path_loss_rssi(dist, p0=-30.0, eta=2.2, d0=0.1, extra_db=0.0):
    """Log-distance model: P0 - 10*eta*log10(max(d, d0)/d0) - extra attenuation."""
    return p0 - 10.0 * eta * np.log10(np.maximum(dist, d0) / d0) - extra_db


def clean_channels(env: FloorEnvironment, points):
    """Noise-free physical quantities at each position (dict of arrays)."""
    spec = env.spec
    wifi, uwb = env.wifi, env.uwb
    dw = np.linalg.norm(points[:, None] - wifi[None], axis=2)
    du = np.linalg.norm(points[:, None] - uwb[None], axis=2)
    att_w, _ = _crossing_attenuation(points, wifi, env.obstacles, env.attenuation)
    att_u, cnt_u = _crossing_attenuation(points, uwb, env.obstacles, env.attenuation)
    return {
        "wifi_dist": dw,
        "wifi_att": att_w,
        "wifi_rssi": path_loss_rssi(dw, spec.p0_dbm, spec.eta, spec.d0, att_w),
        "uwb_dist": du,
        "uwb_att": att_u,
        "uwb_nlos": cnt_u,
        "uwb_power": path_loss_rssi(du, spec.p0_dbm, spec.eta, spec.d0, att_u),
    }


def synthesize_signals(env: FloorEnvironment, trajectory: Trajectory, noise=True):
    """Sliding windows (stride 1) over the per-step signal matrix.

    Returns ``(windows [n, window_length, 63] float32, labels [n, 2])`` with
    each window labeled by its last step's position.
    """
    spec = env.spec
    pts = trajectory.points
    m = spec.window_length
    if len(pts) < m:
        raise ConfigError("trajectory shorter than one window")
    rng = np.random.default_rng([env.seed, trajectory.seed, 37])
    z = (lambda shape, s: rng.normal(0.0, s, shape)) if noise else (lambda shape, s: np.zeros(shape))
    ch = clean_channels(env, pts)
    T = len(pts)

    rssi = ch["wifi_rssi"][:, :N_RSSI_ANCHORS] + z((T, N_RSSI_ANCHORS), spec.noise_rssi)

    amp = 10.0 ** ((ch["wifi_rssi"][:, :N_CSI_ANCHORS] - spec.p0_dbm) / 40.0)
    phase_shift = spec.csi_phase_per_db * ch["wifi_att"][:, :N_CSI_ANCHORS]
    lam = np.asarray(CSI_WAVELENGTHS)
    csi = amp[:, :, None] * np.cos(
        2 * np.pi * ch["wifi_dist"][:, :N_CSI_ANCHORS, None] / lam + phase_shift[:, :, None]
    )
    csi = csi.reshape(T, -1) + z((T, N_CSI_ANCHORS * len(lam)), spec.noise_csi)

    uwb_range = ch["uwb_dist"] + spec.uwb_nlos_bias * ch["uwb_nlos"] + z((T, 3), spec.noise_uwb_range)
    uwb_power = ch["uwb_power"] + z((T, 3), spec.noise_uwb_power)

    vel = np.gradient(pts, trajectory.dt, axis=0) if T > 1 else np.zeros_like(pts)
    acc = np.gradient(vel, trajectory.dt, axis=0) if T > 1 else np.zeros_like(pts)
    speed = np.hypot(vel[:, 0], vel[:, 1])
    heading = np.arctan2(vel[:, 1], vel[:, 0])
    turn = np.gradient(np.unwrap(heading), trajectory.dt) if T > 1 else np.zeros(T)
    imu = np.column_stack([
        vel, acc, speed, np.cos(heading), np.sin(heading), np.clip(turn, -5, 5) / 5.0, np.hypot(acc[:, 0], acc[:, 1]),
    ]) + z((T, 9), spec.noise_imu)

    # fixed affine scaling to roughly unit range
    per_step = np.hstack([
        (rssi + 60.0) / 15.0,
        csi,
        np.column_stack([uwb_range / 5.0, (uwb_power + 60.0) / 15.0]),
        imu,
    ]).astype(np.float32)

    idx = np.arange(T - m + 1)[:, None] + np.arange(m)[None]
    windows = per_step[idx]
    labels = pts[m - 1:].copy()
    return windows, labels


@dataclass
class DomainPair:
    source: DomainDataset  # labeled training windows
    source_test: DomainDataset  # labeled held-out source windows
    target: DomainDataset  # labels hidden; call evaluation_view() to score
    environments: tuple = field(default_factory=tuple)
    spec: EnvironmentSpec = None
    seeds: dict = field(default_factory=dict)


def make_domain_pair(spec: EnvironmentSpec = None, seed: int = 0) -> DomainPair:
    spec = spec or EnvironmentSpec()
    env_s, env_t = generate_environment(spec, seed)
    m = spec.window_length
    seeds = {"environment": seed, "source": 1000 * seed + 1, "source_test": 1000 * seed + 2, "target": 1000 * seed + 3}
    traj_s = simulate_trajectory(env_s, spec.n_windows + m - 1, seeds["source"])
    traj_st = simulate_trajectory(env_s, spec.n_test_windows + m - 1, seeds["source_test"])
    traj_t = simulate_trajectory(env_t, spec.n_windows + m - 1, seeds["target"])
    xs, ys = synthesize_signals(env_s, traj_s)
    xst, yst = synthesize_signals(env_s, traj_st)
    xt, yt = synthesize_signals(env_t, traj_t)
    return DomainPair(
        DomainDataset(xs, ys, spec.extents, "source"),
        DomainDataset(xst, yst, spec.extents, "source_test"),
        DomainDataset(xt, yt, spec.extents, "target", labels_visible=False),
        (env_s, env_t),
        spec,
        seeds,
    )


def write_domain_pair(pair: DomainPair, out_dir):
    """Write dataset files and a manifest.json; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    for key in ("source", "source_test", "target"):
        path = out / f"{key}.abrds"
        save_dataset(getattr(pair, key), path)
        files[key] = path.name
    manifest = {
        "format_version": 1,
        "task": "image" if isinstance(pair.spec, ImageTaskSpec) else "rf",
        "files": files,
        "seeds": pair.seeds,
        "spec": None if pair.spec is None else pair.spec.to_dict(),
    }
    mpath = out / "manifest.json"
    mpath.write_text(json.dumps(manifest, indent=2))
    return mpath


@dataclass
class ImageTaskSpec:
    size: int = 32
    n_images: int = 4000
    n_test_images: int = 1000
    min_half: float = 2.0
    max_half: float = 6.0
    shape_color: tuple = (0.9, 0.9, 0.2)
    noise_std: float = 0.35

    def __post_init__(self):
        self.shape_color = tuple(float(v) for v in self.shape_color)
        if self.size < 2 * self.max_half + 2:
            raise ConfigError("image too small for the largest shape")

    def to_dict(self):
        return asdict(self)


def image_label_to_pixels(labels, spec: ImageTaskSpec):
    """(scale, x, y) in [0,1] -> (half size, center col, center row) in pixels."""
    labels = np.asarray(labels, dtype=float)
    half = spec.min_half + labels[:, 0] * (spec.max_half - spec.min_half)
    span = spec.size - 2 * spec.max_half
    cx = spec.max_half + labels[:, 1] * span
    cy = spec.max_half + labels[:, 2] * span
    return half, cx, cy


def render_shapes(labels, spec: ImageTaskSpec):
    """Binary masks [N, size, size] of filled squares, using pixel-center sampling."""
    half, cx, cy = image_label_to_pixels(labels, spec)
    grid = np.arange(spec.size) + 0.5
    inside_x = np.abs(grid[None, :] - cx[:, None]) <= half[:, None]
    inside_y = np.abs(grid[None, :] - cy[:, None]) <= half[:, None]
    return inside_y[:, :, None] & inside_x[:, None, :]


def _smooth_noise(n, size, rng, channels=3):
    coarse = rng.uniform(0, 1, (n, size // 4 + 2, size // 4 + 2, channels))
    up = np.repeat(np.repeat(coarse, 4, axis=1), 4, axis=2)[:, :size, :size]
    k = np.ones(3) / 3
    for axis in (1, 2):
        up = np.apply_along_axis(lambda v: np.convolve(v, k, mode="same"), axis, up)
    return up


def generate_image_task(spec: ImageTaskSpec = None, seed: int = 0):
    """Return (source, source_test, target) image datasets.

    Both domains draw labels from the same sampler, so they differ only in
    background: flat gray for the source, smooth random texture for the target.
    """
    spec = spec or ImageTaskSpec()
    out = []
    for name, n, bg in (("source", spec.n_images, "flat"), ("source_test", spec.n_test_images, "flat"),
                        ("target", spec.n_images, "noise")):
        label_rng = np.random.default_rng([seed, 51, n])
        labels = label_rng.uniform(0, 1, (n, 3))
        mask = render_shapes(labels, spec)[..., None]
        bg_rng = np.random.default_rng([seed, 53, len(out)])
        if bg == "flat":
            back = np.full((n, spec.size, spec.size, 3), 0.3)
        else:
            back = _smooth_noise(n, spec.size, bg_rng) * spec.noise_std * 2 + (0.3 - spec.noise_std)
        img = np.where(mask, np.asarray(spec.shape_color), back).astype(np.float32)
        ds = DomainDataset(img, labels, (1.0, 1.0, 1.0), name, labels_visible=(bg == "flat"))
        out.append(ds)
    return tuple(out)


def shift_variant(spec: EnvironmentSpec, **changes):
    return replace(spec, **changes)
