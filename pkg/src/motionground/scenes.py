"""Synthetic motion scenes: seeded trajectories, visibility, and exact
expression-level ground truth.

Coordinates follow the image convention: x grows to the right, y grows
downward, so "falling" means increasing y. Tracks are seeded on a uniform
grid; every seed inside an agent's box at t=0 follows that agent's motion
law for the whole scene (membership never changes owners), everything else
is background and stays put. Gaussian per-frame jitter is added on top.
"""

from __future__ import annotations

import io
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .util import dump_json, load_json, stable_rng

MOTION_CLASSES = ("stationary", "linear", "circular", "falling", "chase", "oscillating")

GENERATOR_VERSION = "1"

# Default nouns for generated agents, plus extras reserved for distractor
# expressions so the bank can grow beyond what the corpus realizes.
AGENT_NOUNS = ("bear", "panda", "raft", "bird", "dog", "boat", "deer", "fox")
DISTRACTOR_NOUNS = (
    "lion", "buffalo", "kite", "train", "crab", "drone", "otter", "sled",
    "goat", "camel", "canoe", "wolf", "heron", "moose", "truck", "seal",
)


class SceneError(ValueError):
    pass


@dataclass
class AgentSpec:
    motion_class: str
    region: tuple[float, float, float, float]  # (x0, y0, x1, y1) at t=0
    label_noun: str
    params: dict = field(default_factory=dict)

    def validate(self, n_agents: int, index: int) -> None:
        if self.motion_class not in MOTION_CLASSES:
            raise SceneError(f"unknown motion class {self.motion_class!r}")
        x0, y0, x1, y1 = self.region
        if not (x0 < x1 and y0 < y1):
            raise SceneError(f"agent {index}: degenerate region {self.region}")
        if self.motion_class == "linear":
            vx, vy = self.params.get("velocity", (0.0, 0.0))
            if vx == 0.0 and vy == 0.0:
                raise SceneError(f"agent {index}: linear agent needs a nonzero velocity")
        if self.motion_class == "chase":
            target = self.params.get("target", -1)
            if not (0 <= target < n_agents) or target == index:
                raise SceneError(f"agent {index}: chase target {target} is not another agent")

    def center(self) -> np.ndarray:
        x0, y0, x1, y1 = self.region
        return np.array([(x0 + x1) / 2.0, (y0 + y1) / 2.0])

    def area(self) -> float:
        x0, y0, x1, y1 = self.region
        return (x1 - x0) * (y1 - y0)


@dataclass
class SceneSpec:
    T: int
    H: float
    W: float
    grid_rows: int
    grid_cols: int
    agents: list[AgentSpec]
    seed: int
    jitter_sigma: float = 0.5
    occluders: list[tuple[float, float, float, float]] = field(default_factory=list)

    def validate(self) -> None:
        if self.T < 2:
            raise SceneError(f"T must be >= 2, got {self.T}")
        if self.grid_rows < 1 or self.grid_cols < 1:
            raise SceneError("grid must have at least one cell")
        if self.H <= 0 or self.W <= 0:
            raise SceneError("canvas extents must be positive")
        for i, agent in enumerate(self.agents):
            agent.validate(len(self.agents), i)
            x0, y0, x1, y1 = agent.region
            if x0 < 0 or y0 < 0 or x1 > self.W or y1 > self.H:
                raise SceneError(f"agent {i} region {agent.region} leaves the canvas")


@dataclass
class TrackSet:
    positions: np.ndarray   # (N, T, 2)
    visibility: np.ndarray  # (N, T) bool

    @property
    def n_tracks(self) -> int:
        return self.positions.shape[0]

    @property
    def n_frames(self) -> int:
        return self.positions.shape[1]


@dataclass
class ExpressionGT:
    """Ground-truth grounding for one expression: the T+/T- partition."""

    expression: str
    positive_tracks: list[int]
    negative_tracks: list[int]
    motion_class: str
    agent_index: int


@dataclass
class Scene:
    index: int
    spec: SceneSpec
    tracks: TrackSet
    ground_truth: list[ExpressionGT]


def init_grid(rows: int, cols: int, H: float, W: float) -> np.ndarray:
    """Cell-center seed points of a uniform rows x cols grid, row-major."""
    if rows < 1 or cols < 1:
        raise SceneError("grid must have at least one cell")
    if H <= 0 or W <= 0:
        raise SceneError("canvas extents must be positive")
    xs = (np.arange(cols) + 0.5) * (W / cols)
    ys = (np.arange(rows) + 0.5) * (H / rows)
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def _in_box(points: np.ndarray, box) -> np.ndarray:
    x0, y0, x1, y1 = box
    return (
        (points[..., 0] >= x0) & (points[..., 0] <= x1)
        & (points[..., 1] >= y0) & (points[..., 1] <= y1)
    )


def _boxes_overlap(a, b) -> bool:
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    return ax0 <= bx1 and bx0 <= ax1 and ay0 <= by1 and by0 <= ay1


def _center_paths(spec: SceneSpec) -> np.ndarray:
    """Reference-point trajectory per agent, shape (A, T, 2).

    Closed-form classes are vectorized; chase steps toward its target's
    previous-frame position at constant speed.
    """
    T = spec.T
    t = np.arange(T, dtype=np.float64)
    paths = np.zeros((len(spec.agents), T, 2))
    for i, agent in enumerate(spec.agents):
        c0 = agent.center()
        cls = agent.motion_class
        if cls in ("stationary", "chase"):
            paths[i] = c0
        elif cls == "linear":
            v = np.asarray(agent.params["velocity"], dtype=np.float64)
            paths[i] = c0 + t[:, None] * v
        elif cls == "circular":
            omega = float(agent.params["angular_rate"])
            pivot = np.asarray(agent.params.get("center", c0), dtype=np.float64)
            rel = c0 - pivot
            ang = omega * t
            cos, sin = np.cos(ang), np.sin(ang)
            paths[i, :, 0] = pivot[0] + cos * rel[0] - sin * rel[1]
            paths[i, :, 1] = pivot[1] + sin * rel[0] + cos * rel[1]
        elif cls == "falling":
            g = float(agent.params["gravity"])
            v0 = np.asarray(agent.params.get("velocity", (0.0, 0.0)), dtype=np.float64)
            paths[i] = c0 + t[:, None] * v0
            paths[i, :, 1] += 0.5 * g * t * t
        elif cls == "oscillating":
            amp = float(agent.params["amplitude"])
            freq = float(agent.params["frequency"])
            direction = np.asarray(agent.params.get("direction", (1.0, 0.0)), dtype=np.float64)
            direction = direction / np.linalg.norm(direction)
            paths[i] = c0 + np.sin(2.0 * np.pi * freq * t)[:, None] * (amp * direction)
    for step in range(1, T):
        for i, agent in enumerate(spec.agents):
            if agent.motion_class != "chase":
                continue
            speed = float(agent.params["speed"])
            target = paths[agent.params["target"], step - 1]
            here = paths[i, step - 1]
            gap = target - here
            dist = np.linalg.norm(gap)
            if dist <= speed or dist == 0.0:
                paths[i, step] = target
            else:
                paths[i, step] = here + gap * (speed / dist)
    return paths


def simulate(spec: SceneSpec) -> tuple[TrackSet, list[ExpressionGT]]:
    """Roll a scene forward: seeded grid tracks, visibility, ground truth."""
    spec.validate()
    for i in range(len(spec.agents)):
        for j in range(i + 1, len(spec.agents)):
            if _boxes_overlap(spec.agents[i].region, spec.agents[j].region):
                raise SceneError(
                    f"agent regions {i} and {j} overlap at t=0; track membership is ambiguous"
                )

    seeds = init_grid(spec.grid_rows, spec.grid_cols, spec.H, spec.W)
    n = seeds.shape[0]
    T = spec.T
    positions = np.repeat(seeds[:, None, :], T, axis=1)

    centers = _center_paths(spec)
    membership = np.full(n, -1, dtype=np.intp)
    for i, agent in enumerate(spec.agents):
        inside = _in_box(seeds, agent.region)
        membership[inside] = i
        if agent.motion_class == "circular":
            omega = float(agent.params["angular_rate"])
            pivot = np.asarray(agent.params.get("center", agent.center()), dtype=np.float64)
            rel = seeds[inside] - pivot
            ang = omega * np.arange(T, dtype=np.float64)
            cos, sin = np.cos(ang), np.sin(ang)
            positions[inside, :, 0] = pivot[0] + np.outer(rel[:, 0], cos) - np.outer(rel[:, 1], sin)
            positions[inside, :, 1] = pivot[1] + np.outer(rel[:, 0], sin) + np.outer(rel[:, 1], cos)
        else:
            offset = centers[i] - centers[i, 0]
            positions[inside] = seeds[inside][:, None, :] + offset[None, :, :]

    if spec.jitter_sigma > 0:
        rng = stable_rng(spec.seed)
        positions = positions + spec.jitter_sigma * rng.standard_normal(positions.shape)

    visible = (
        (positions[..., 0] >= 0) & (positions[..., 0] <= spec.W)
        & (positions[..., 1] >= 0) & (positions[..., 1] <= spec.H)
    )
    for box in spec.occluders:
        visible &= ~_in_box(positions, box)

    ground_truth = []
    all_idx = np.arange(n)
    for i, agent in enumerate(spec.agents):
        pos_idx = all_idx[membership == i]
        if pos_idx.size == 0:
            raise SceneError(f"agent {i} region contains no grid tracks")
        neg_idx = all_idx[membership != i]
        ground_truth.append(ExpressionGT(
            expression=expression_for(agent, spec.agents),
            positive_tracks=[int(k) for k in pos_idx],
            negative_tracks=[int(k) for k in neg_idx],
            motion_class=agent.motion_class,
            agent_index=i,
        ))
    return TrackSet(positions=positions, visibility=visible), ground_truth


def motion_phrase(agent: AgentSpec, agents: list[AgentSpec] | None = None) -> str:
    cls = agent.motion_class
    if cls == "stationary":
        return "staying still"
    if cls == "linear":
        vx, vy = agent.params["velocity"]
        if abs(vx) >= abs(vy):
            return "moving to the left" if vx < 0 else "moving to the right"
        return "moving up" if vy < 0 else "moving down"
    if cls == "circular":
        return "moving around in a circle"
    if cls == "falling":
        return "falling down"
    if cls == "chase":
        target_noun = agents[agent.params["target"]].label_noun if agents else "one"
        return f"chasing another {target_noun}"
    if cls == "oscillating":
        return "moving back and forth"
    raise SceneError(f"unknown motion class {cls!r}")


def expression_for(agent: AgentSpec, agents: list[AgentSpec] | None = None) -> str:
    """Deterministic template: "<noun> <motion phrase>"."""
    return f"{agent.label_noun} {motion_phrase(agent, agents)}"


# ---------------------------------------------------------------------------
# corpus generation


@dataclass
class CorpusConfig:
    count: int = 200
    seed: int = 7
    T: int = 24
    H: float = 100.0
    W: float = 100.0
    grid_rows: int = 12
    grid_cols: int = 12
    jitter_sigma: float = 0.5
    occluder_prob: float = 0.3
    second_agent_prob: float = 0.5
    # class weights; keys outside MOTION_CLASSES are rejected
    class_mix: dict[str, float] = field(default_factory=lambda: {
        "stationary": 0.55,
        "linear": 1.0,
        "circular": 1.0,
        "falling": 1.0,
        "chase": 1.0,
        "oscillating": 1.0,
    })

    def validate(self) -> None:
        if self.count < 1:
            raise SceneError("corpus count must be >= 1")
        bad = set(self.class_mix) - set(MOTION_CLASSES)
        if bad:
            raise SceneError(f"unknown motion classes in mix: {sorted(bad)}")
        if not self.class_mix or all(w <= 0 for w in self.class_mix.values()):
            raise SceneError("class mix needs at least one positive weight")


def _class_schedule(cfg: CorpusConfig) -> list[str]:
    """Apportion scene counts to classes by weight (largest remainder),
    then interleave with a seeded shuffle so splits stay balanced."""
    classes = [c for c in MOTION_CLASSES if cfg.class_mix.get(c, 0) > 0]
    weights = np.array([cfg.class_mix[c] for c in classes], dtype=np.float64)
    quota = weights / weights.sum() * cfg.count
    counts = np.floor(quota).astype(int)
    remainder = cfg.count - counts.sum()
    order = np.argsort(-(quota - counts), kind="stable")
    for i in range(remainder):
        counts[order[i % len(classes)]] += 1
    schedule = [c for c, k in zip(classes, counts) for _ in range(k)]
    perm = stable_rng(cfg.seed, 0xC1A55).permutation(len(schedule))
    return [schedule[i] for i in perm]


def _sample_box(rng, W, H, side_lo=30.0, side_hi=42.0, margin=0.0, region=None):
    rx0, ry0, rx1, ry1 = region if region is not None else (0.0, 0.0, W, H)
    side_hi = min(side_hi, rx1 - rx0, ry1 - ry0)
    if side_hi < side_lo:
        raise SceneError(f"region {region} too small for a box of side >= {side_lo}")
    side = rng.uniform(side_lo, side_hi)
    x0 = rng.uniform(max(rx0, margin), min(rx1, W - margin) - side)
    y0 = rng.uniform(max(ry0, margin), min(ry1, H - margin) - side)
    return (x0, y0, x0 + side, y0 + side)


def _sample_agent(rng, cls: str, W: float, H: float, T: int, noun: str,
                  taken: list, target_index: int | None = None,
                  target_box=None, region=None) -> AgentSpec:
    """Place one agent whose path stays (mostly) on canvas; rejection-samples
    its box against the already placed ones."""
    horizon = T - 1
    for _ in range(200):
        # Per-class speed bands are kept disjoint (stationary ~0.25 from
        # jitter, chase 0.85-1.15, linear 1.6-2.4, falling 1.84-2.76 mean,
        # circular/oscillating 3.3-5.2) so the kinematic-feature oracle can
        # separate classes that otherwise share direction or straightness.
        if cls == "linear":
            speed = rng.uniform(1.5, 2.1)
            # down is reserved for the falling class so kinematics stay separable
            direction = rng.choice(["left", "right", "up"])
            angle = {"left": np.pi, "right": 0.0, "up": -np.pi / 2}[direction]
            angle += rng.uniform(-0.3, 0.3)
            v = (speed * np.cos(angle), speed * np.sin(angle))
            box = _sample_box(rng, W, H, region=region)
            end = (box[0] + v[0] * horizon, box[1] + v[1] * horizon,
                   box[2] + v[0] * horizon, box[3] + v[1] * horizon)
            if not (0 <= end[0] and end[2] <= W and 0 <= end[1] and end[3] <= H):
                continue
            params = {"velocity": (float(v[0]), float(v[1]))}
        elif cls == "circular":
            omega = float(rng.choice([-1.0, 1.0])) * 2.0 * np.pi / horizon
            box = _sample_box(rng, W, H, side_lo=26.0, side_hi=30.0, region=region)
            cx, cy = (box[0] + box[2]) / 2.0, (box[1] + box[3]) / 2.0
            ang = rng.uniform(0, 2 * np.pi)
            orbit = rng.uniform(10.0, 15.0)
            pivot = (cx + orbit * np.cos(ang), cy + orbit * np.sin(ang))
            half_diag = np.hypot(box[2] - box[0], box[3] - box[1]) / 2.0
            reach = orbit + half_diag
            if not (reach <= pivot[0] <= W - reach and reach <= pivot[1] <= H - reach):
                continue
            params = {"angular_rate": omega, "center": (float(pivot[0]), float(pivot[1]))}
        elif cls == "falling":
            g = rng.uniform(0.20, 0.26)
            drop = 0.5 * g * horizon * horizon
            box = _sample_box(rng, W, max(H - drop, 1.0), region=region)
            if box[3] + drop > H:
                continue
            params = {"gravity": float(g)}
        elif cls == "chase":
            box = _sample_box(rng, W, H, side_lo=28.0, side_hi=36.0, region=region)
            cx = ((box[0] + box[2]) / 2.0, (box[1] + box[3]) / 2.0)
            tx = ((target_box[0] + target_box[2]) / 2.0,
                  (target_box[1] + target_box[3]) / 2.0)
            dist = float(np.hypot(cx[0] - tx[0], cx[1] - tx[1]))
            speed = rng.uniform(0.85, 1.15)
            # the pursuit must outlast the scene: the chaser cannot cover
            # the initial gap, so it never parks on top of its target
            if dist < speed * horizon + 10.0:
                continue
            params = {"speed": float(speed), "target": int(target_index)}
        elif cls == "oscillating":
            amp = rng.uniform(10.0, 15.0)
            freq = 2.0 / horizon
            ang = rng.uniform(0, 2 * np.pi)
            direction = (np.cos(ang), np.sin(ang))
            box = _sample_box(rng, W, H, side_lo=26.0, side_hi=32.0, region=region)
            lo = (box[0] - amp, box[1] - amp)
            hi = (box[2] + amp, box[3] + amp)
            if not (0 <= lo[0] and hi[0] <= W and 0 <= lo[1] and hi[1] <= H):
                continue
            params = {"amplitude": float(amp), "frequency": freq,
                      "direction": (float(direction[0]), float(direction[1]))}
        else:  # stationary
            box = _sample_box(rng, W, H, region=region)
            params = {}
        if any(_boxes_overlap(box, other) for other in taken):
            continue
        taken.append(box)
        return AgentSpec(motion_class=cls, region=tuple(float(c) for c in box),
                         label_noun=noun, params=params)
    raise SceneError(f"could not place a {cls} agent after 200 attempts")


def generate_scene(index: int, cls: str, cfg: CorpusConfig) -> Scene:
    rng = stable_rng(cfg.seed, index)
    nouns = list(AGENT_NOUNS)
    rng.shuffle(nouns)

    def other_class(exclude: tuple[str, ...]) -> str:
        pool = [c for c in MOTION_CLASSES
                if cfg.class_mix.get(c, 0) > 0 and c not in exclude]
        if not pool:
            pool = [c for c in MOTION_CLASSES if c not in exclude]
        return str(rng.choice(pool))

    for attempt in range(30):
        taken: list = []
        agents: list[AgentSpec] = []
        try:
            if cls == "chase":
                # a parked target would let the chaser catch up and stop
                target_cls = other_class(("chase", "stationary"))
                agents.append(_sample_agent(rng, target_cls, cfg.W, cfg.H, cfg.T,
                                            nouns[0], taken))
                agents.append(_sample_agent(rng, "chase", cfg.W, cfg.H, cfg.T, nouns[1],
                                            taken, target_index=0, target_box=taken[0]))
            else:
                agents.append(_sample_agent(rng, cls, cfg.W, cfg.H, cfg.T, nouns[0], taken))
                if rng.uniform() < cfg.second_agent_prob:
                    extra_cls = other_class(("chase", cls))
                    agents.append(_sample_agent(rng, extra_cls, cfg.W, cfg.H, cfg.T,
                                                nouns[1], taken))

            occluders = []
            if rng.uniform() < cfg.occluder_prob:
                side = rng.uniform(14.0, 22.0)
                x0 = rng.uniform(0, cfg.W - side)
                y0 = rng.uniform(0, cfg.H - side)
                occluders.append((float(x0), float(y0), float(x0 + side), float(y0 + side)))

            spec = SceneSpec(
                T=cfg.T, H=cfg.H, W=cfg.W,
                grid_rows=cfg.grid_rows, grid_cols=cfg.grid_cols,
                agents=agents, seed=int(stable_rng(cfg.seed, index, 0xF00D).randint(0, 2**31 - 1)),
                jitter_sigma=cfg.jitter_sigma, occluders=occluders,
            )
            tracks, gts = simulate(spec)
            return Scene(index=index, spec=spec, tracks=tracks, ground_truth=gts)
        except SceneError:
            if attempt == 29:
                raise
    raise SceneError(f"scene {index} could not be generated")


@dataclass
class Corpus:
    scenes: list[Scene]
    manifest: dict

    def split(self, name: str) -> list[Scene]:
        idx = set(self.manifest["splits"][name])
        return [s for s in self.scenes if s.index in idx]

    def all_expressions(self) -> list[tuple[str, str]]:
        """Unique (expression, motion_class) pairs, lexicographic."""
        seen: dict[str, str] = {}
        for scene in self.scenes:
            for gt in scene.ground_truth:
                seen.setdefault(gt.expression, gt.motion_class)
        return sorted(seen.items())


def build_corpus(cfg: CorpusConfig) -> Corpus:
    cfg.validate()
    schedule = _class_schedule(cfg)
    scenes = [generate_scene(i, schedule[i], cfg) for i in range(cfg.count)]
    n = cfg.count
    train_end = int(n * 0.8)
    val_end = int(n * 0.9)
    class_counts: dict[str, int] = {}
    for s in scenes:
        for gt in s.ground_truth:
            class_counts[gt.motion_class] = class_counts.get(gt.motion_class, 0) + 1
    manifest = {
        "count": n,
        "seed": cfg.seed,
        "generator_version": GENERATOR_VERSION,
        "splits": {
            "train": list(range(0, train_end)),
            "val": list(range(train_end, val_end)),
            "test": list(range(val_end, n)),
        },
        "scene_defaults": {
            "T": cfg.T, "H": cfg.H, "W": cfg.W,
            "grid_rows": cfg.grid_rows, "grid_cols": cfg.grid_cols,
            "jitter_sigma": cfg.jitter_sigma,
        },
        "class_mix": dict(cfg.class_mix),
        "agent_class_counts": class_counts,
    }
    return Corpus(scenes=scenes, manifest=manifest)


def _scene_record(scene: Scene) -> dict:
    spec = scene.spec
    return {
        "index": scene.index,
        "spec": {
            "T": spec.T, "H": spec.H, "W": spec.W,
            "grid_rows": spec.grid_rows, "grid_cols": spec.grid_cols,
            "seed": spec.seed, "jitter_sigma": spec.jitter_sigma,
            "occluders": [list(b) for b in spec.occluders],
            "agents": [
                {
                    "motion_class": a.motion_class,
                    "region": list(a.region),
                    "label_noun": a.label_noun,
                    "params": _jsonable_params(a.params),
                }
                for a in spec.agents
            ],
        },
        "positions": scene.tracks.positions.tolist(),
        "visibility": scene.tracks.visibility.astype(int).tolist(),
        "expressions": [
            {
                "expression": gt.expression,
                "positive_tracks": gt.positive_tracks,
                "motion_class": gt.motion_class,
                "agent_index": gt.agent_index,
            }
            for gt in scene.ground_truth
        ],
    }


def _jsonable_params(params: dict) -> dict:
    out = {}
    for k, v in params.items():
        if isinstance(v, tuple):
            out[k] = list(v)
        else:
            out[k] = v
    return out


def _scene_from_record(rec: dict) -> Scene:
    spec_rec = rec["spec"]
    agents = []
    for a in spec_rec["agents"]:
        params = {k: tuple(v) if isinstance(v, list) else v for k, v in a["params"].items()}
        agents.append(AgentSpec(
            motion_class=a["motion_class"], region=tuple(a["region"]),
            label_noun=a["label_noun"], params=params,
        ))
    spec = SceneSpec(
        T=spec_rec["T"], H=spec_rec["H"], W=spec_rec["W"],
        grid_rows=spec_rec["grid_rows"], grid_cols=spec_rec["grid_cols"],
        agents=agents, seed=spec_rec["seed"], jitter_sigma=spec_rec["jitter_sigma"],
        occluders=[tuple(b) for b in spec_rec["occluders"]],
    )
    positions = np.asarray(rec["positions"], dtype=np.float64)
    visibility = np.asarray(rec["visibility"], dtype=bool)
    n = positions.shape[0]
    gts = []
    for e in rec["expressions"]:
        pos = [int(i) for i in e["positive_tracks"]]
        pos_set = set(pos)
        gts.append(ExpressionGT(
            expression=e["expression"], positive_tracks=pos,
            negative_tracks=[i for i in range(n) if i not in pos_set],
            motion_class=e["motion_class"], agent_index=e["agent_index"],
        ))
    return Scene(index=rec["index"], spec=spec,
                 tracks=TrackSet(positions=positions, visibility=visibility),
                 ground_truth=gts)


def save_corpus(corpus: Corpus, path: str) -> None:
    """One JSON document per scene per line, plus a <path>.manifest.json."""
    buf = io.StringIO()
    for scene in corpus.scenes:
        json.dump(_scene_record(scene), buf, sort_keys=True, separators=(",", ":"))
        buf.write("\n")
    os.makedirs(os.path.dirname(os.path.abspath(path)) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(buf.getvalue())
    dump_json(corpus.manifest, path + ".manifest.json")


def load_corpus(path: str) -> Corpus:
    manifest = load_json(path + ".manifest.json")
    scenes = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                scenes.append(_scene_from_record(json.loads(line)))
    if len(scenes) != manifest["count"]:
        raise SceneError(
            f"corpus has {len(scenes)} scenes, manifest expects {manifest['count']}"
        )
    return Corpus(scenes=scenes, manifest=manifest)


def make_corpus(path: str, cfg: CorpusConfig | None = None) -> Corpus:
    corpus = build_corpus(cfg or CorpusConfig())
    save_corpus(corpus, path)
    return corpus


# ---------------------------------------------------------------------------
# kinematic separability oracle


def kinematic_features(tracks: TrackSet, positive_tracks: list[int]) -> np.ndarray:
    """Handcrafted features of an agent's centroid trajectory:
    [mean speed, net direction x, net direction y, turn consistency,
    displacement-to-path-length ratio]."""
    centroid = tracks.positions[positive_tracks].mean(axis=0)  # (T, 2)
    steps = np.diff(centroid, axis=0)
    speeds = np.linalg.norm(steps, axis=1)
    mean_speed = float(speeds.mean())
    net = centroid[-1] - centroid[0]
    net_len = float(np.linalg.norm(net))
    direction = net / net_len if net_len > 1.0 else np.zeros(2)
    path_len = float(speeds.sum())
    straightness = net_len / path_len if path_len > 1e-9 else 0.0
    cross = steps[:-1, 0] * steps[1:, 1] - steps[:-1, 1] * steps[1:, 0]
    turn = float(abs(np.mean(np.sign(cross)))) if cross.size else 0.0
    return np.array([mean_speed, direction[0], direction[1], turn, straightness])


def _direction_octant(feat: np.ndarray) -> int:
    dx, dy = feat[1], feat[2]
    if dx == 0.0 and dy == 0.0:
        return -1
    return int(np.floor((np.arctan2(dy, dx) + np.pi) / (np.pi / 4))) % 8


def motion_class_separability(corpus: Corpus) -> float:
    """Accuracy of a nearest-centroid classifier on kinematic features.

    Classes like linear are multi-directional, so one centroid per class
    would average left and right movers into a meaningless middle; each
    class gets one centroid per direction octant instead, and an agent is
    assigned the class of its nearest centroid. Centroids are fit on
    train-split agents; accuracy is over all agents. Run during corpus
    validation: the corpus is only considered learnable above 0.95."""
    feats, labels, is_train = [], [], []
    train_idx = set(corpus.manifest["splits"]["train"])
    for scene in corpus.scenes:
        for gt in scene.ground_truth:
            feats.append(kinematic_features(scene.tracks, gt.positive_tracks))
            labels.append(gt.motion_class)
            is_train.append(scene.index in train_idx)
    X = np.asarray(feats)
    mu, sd = X.mean(axis=0), X.std(axis=0)
    sd[sd == 0] = 1.0
    Xs = (X - mu) / sd
    groups: dict[tuple[str, int], list[np.ndarray]] = {}
    for raw, x, lab, tr in zip(feats, Xs, labels, is_train):
        if tr:
            groups.setdefault((lab, _direction_octant(raw)), []).append(x)
    if not groups:
        raise SceneError("no train-split agents to fit centroids on")
    keys = sorted(groups)
    centroids = np.stack([np.mean(groups[k], axis=0) for k in keys])
    correct = 0
    for x, lab in zip(Xs, labels):
        best = keys[int(np.argmin(np.linalg.norm(centroids - x, axis=1)))][0]
        correct += best == lab
    return correct / len(labels)


# ---------------------------------------------------------------------------
# distractor expressions for bank construction


def template_expression_pool(nouns: tuple[str, ...]) -> list[tuple[str, str]]:
    """All (expression, motion_class) pairs the templates can produce."""
    pool = []
    for noun in nouns:
        pool.append((f"{noun} staying still", "stationary"))
        for phrase in ("moving to the left", "moving to the right", "moving up", "moving down"):
            pool.append((f"{noun} {phrase}", "linear"))
        pool.append((f"{noun} moving around in a circle", "circular"))
        pool.append((f"{noun} falling down", "falling"))
        pool.append((f"{noun} moving back and forth", "oscillating"))
        for other in nouns:
            if other != noun:
                pool.append((f"{noun} chasing another {other}", "chase"))
    return pool


def distractor_expressions(corpus_expressions: list[str], ratio: float = 3.0,
                           seed: int = 11) -> list[tuple[str, str]]:
    """Plausible-but-absent expressions, `ratio` times the true count."""
    want = int(round(ratio * len(corpus_expressions)))
    present = set(corpus_expressions)
    pool = [(e, c) for e, c in
            sorted(set(template_expression_pool(AGENT_NOUNS + DISTRACTOR_NOUNS)))
            if e not in present]
    if want >= len(pool):
        return pool
    rng = stable_rng(seed, 0xD157)
    idx = rng.choice(len(pool), size=want, replace=False)
    idx.sort()
    return [pool[i] for i in idx]
