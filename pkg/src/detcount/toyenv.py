"""Desk-scale synthetic environment and GRPO trainer.

Scenes live on a fixed candidate grid of cell centers. A run-wide layout
(derived from habitat_seed, not the per-scene seed) marks habitat cells
where fish may appear and distractor cells holding fish-like non-targets.
The policy is a factorized categorical: one Bernoulli emit probability per
candidate cell plus one probability of declaring a count consistent with
the emissions. Likelihoods, likelihood ratios, the KL to the reference
policy, and the gradient of the clipped surrogate are all exact, so the
optimizer math is testable without autodiff.
"""

from __future__ import annotations

import functools
import math
import random
from dataclasses import dataclass, replace

from .grpo import GRPOConfig, group_advantages
from .matching import match_points
from .metrics import game as game_metric
from .parsing import Detection, ParsedResponse, serialize_response
from .rewards import RewardConfig, score_text

THINK_TEXT = "sweeping the candidate grid for fish"


@dataclass(frozen=True)
class EnvParams:
    image_size: tuple[float, float] = (64.0, 64.0)
    grid: int = 6
    min_fish: int = 2
    max_fish: int = 4
    n_distractors: int = 3
    difficulty: float = 1.0
    habitat_seed: int = 0
    habitat_size: int = 8
    # Minimum fish-to-distractor spacing; None means twice the default
    # fractional match threshold on this image size.
    min_separation: float | None = None

    def __post_init__(self):
        width, height = self.image_size
        if width < 64 or height < 64:
            raise ValueError("image_size must be at least 64x64")
        if self.grid < 2:
            raise ValueError("grid must be at least 2")
        if not 0 <= self.min_fish <= self.max_fish:
            raise ValueError("need 0 <= min_fish <= max_fish")
        if self.max_fish > self.habitat_size:
            raise ValueError("max_fish cannot exceed habitat_size")
        if self.habitat_size > self.grid * self.grid:
            raise ValueError("habitat_size cannot exceed the cell count")
        if self.n_distractors < 0 or self.difficulty < 0:
            raise ValueError("n_distractors and difficulty must be non-negative")

    @property
    def cell_size(self) -> tuple[float, float]:
        return (self.image_size[0] / self.grid, self.image_size[1] / self.grid)

    @property
    def separation(self) -> float:
        if self.min_separation is not None:
            return self.min_separation
        return 2.0 * 0.05 * math.hypot(*self.image_size)

    @property
    def effective_distractors(self) -> int:
        return int(round(self.n_distractors * self.difficulty))


@dataclass(frozen=True)
class SyntheticScene:
    image_size: tuple[float, float]
    gt_points: tuple[tuple[float, float], ...]
    distractor_points: tuple[tuple[float, float], ...]
    difficulty: float
    seed: int

    def __post_init__(self):
        width, height = self.image_size
        for x, y in self.gt_points + self.distractor_points:
            if not (0 <= x <= width and 0 <= y <= height):
                raise ValueError(f"point ({x}, {y}) outside the image")


def candidate_points(params: EnvParams) -> tuple[tuple[float, float], ...]:
    """Cell centers of the candidate grid, row-major."""
    cw, ch = params.cell_size
    return tuple(
        ((col + 0.5) * cw, (row + 0.5) * ch)
        for row in range(params.grid)
        for col in range(params.grid)
    )


@functools.lru_cache(maxsize=64)
def _layout(params: EnvParams) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """(habitat cell indices, distractor cell indices), fixed per run.

    Distractor cells keep at least params.separation from every habitat
    cell so no scene can violate the spacing invariant.
    """
    cells = candidate_points(params)
    rng = random.Random(f"layout-{params.habitat_seed}-{params.grid}")
    habitat = tuple(sorted(rng.sample(range(len(cells)), params.habitat_size)))
    eligible = [
        i
        for i in range(len(cells))
        if i not in habitat
        and all(math.dist(cells[i], cells[h]) >= params.separation for h in habitat)
    ]
    wanted = params.effective_distractors
    if len(eligible) < wanted:
        raise ValueError(
            "params leave no room for distractors at the required separation"
        )
    distractors = tuple(sorted(rng.sample(eligible, wanted)))
    return habitat, distractors


def habitat_cells(params: EnvParams) -> tuple[int, ...]:
    return _layout(params)[0]


def distractor_cells(params: EnvParams) -> tuple[int, ...]:
    return _layout(params)[1]


def generate_scene(seed: int, params: EnvParams) -> SyntheticScene:
    cells = candidate_points(params)
    habitat, distractors = _layout(params)
    rng = random.Random(f"scene-{params.habitat_seed}-{seed}")
    n_fish = rng.randint(params.min_fish, params.max_fish)
    fish = rng.sample(habitat, n_fish)
    return SyntheticScene(
        image_size=params.image_size,
        gt_points=tuple(cells[i] for i in fish),
        distractor_points=tuple(cells[i] for i in distractors),
        difficulty=params.difficulty,
        seed=seed,
    )


@dataclass
class ToyPolicy:
    """Factorized categorical policy over the candidate grid."""

    candidates: tuple[tuple[float, float], ...]
    emit: list[float]
    p_consistent: float
    box_half: tuple[float, float]

    def __post_init__(self):
        if len(self.emit) != len(self.candidates):
            raise ValueError("one emit probability per candidate required")
        if any(not 0.0 <= p <= 1.0 for p in self.emit):
            raise ValueError("emit probabilities must lie in [0, 1]")
        if not 0.0 <= self.p_consistent <= 1.0:
            raise ValueError("p_consistent must lie in [0, 1]")

    def copy(self) -> "ToyPolicy":
        return ToyPolicy(
            candidates=self.candidates,
            emit=list(self.emit),
            p_consistent=self.p_consistent,
            box_half=self.box_half,
        )

    def params_vector(self) -> list[float]:
        return [*self.emit, self.p_consistent]


def make_policy(
    params: EnvParams,
    emit_base: float = 0.08,
    emit_distractor: float = 0.3,
    p_consistent: float = 0.5,
) -> ToyPolicy:
    """Initial policy: distractor cells start with elevated emission, the
    way fish-shaped clutter attracts an untrained detector."""
    cells = candidate_points(params)
    emit = [emit_base] * len(cells)
    for i in distractor_cells(params):
        emit[i] = emit_distractor
    cw, ch = params.cell_size
    return ToyPolicy(
        candidates=cells,
        emit=emit,
        p_consistent=p_consistent,
        box_half=(cw / 2.0, ch / 2.0),
    )


@dataclass(frozen=True)
class Rollout:
    """One sampled response with the bits needed for exact likelihoods."""

    emitted: tuple[int, ...]
    declared: int
    text: str


def _declare_count(n_emitted: int, consistent: bool, rng: random.Random) -> int:
    if consistent:
        return n_emitted
    if n_emitted == 0:
        return 1
    return n_emitted + rng.choice((-1, 1))


def sample_rollout(policy: ToyPolicy, rng: random.Random) -> Rollout:
    emitted = tuple(1 if rng.random() < p else 0 for p in policy.emit)
    n = sum(emitted)
    consistent = rng.random() < policy.p_consistent
    declared = _declare_count(n, consistent, rng)
    hx, hy = policy.box_half
    detections = tuple(
        Detection(bbox=(x - hx, y - hy, x + hx, y + hy), point=(x, y), label="fish")
        for bit, (x, y) in zip(emitted, policy.candidates)
        if bit
    )
    text = serialize_response(
        ParsedResponse(think=THINK_TEXT, detections=detections, fish_count=declared)
    )
    return Rollout(emitted=emitted, declared=declared, text=text)


def sample_response(policy: ToyPolicy, scene: SyntheticScene, rng: random.Random) -> str:
    """Raw response text; always parses with structure_ok by construction."""
    del scene  # the policy is scene-blind; the argument fixes the call shape
    return sample_rollout(policy, rng).text


def _log(p: float) -> float:
    return math.log(p) if p > 0.0 else -math.inf


def log_likelihood(policy: ToyPolicy, rollout: Rollout) -> float:
    total = 0.0
    for bit, p in zip(rollout.emitted, policy.emit):
        total += _log(p) if bit else _log(1.0 - p)
    n = sum(rollout.emitted)
    if rollout.declared == n:
        total += _log(policy.p_consistent)
    elif n == 0 and rollout.declared == 1:
        total += _log(1.0 - policy.p_consistent)
    elif abs(rollout.declared - n) == 1:
        total += _log(1.0 - policy.p_consistent) + _log(0.5)
    else:
        return -math.inf
    return total


def bernoulli_kl(p: float, q: float) -> float:
    """Exact KL(Bern(p) || Bern(q)); infinite when q has a hard zero p uses."""

    def term(a: float, b: float) -> float:
        if a == 0.0:
            return 0.0
        if b == 0.0:
            return math.inf
        return a * math.log(a / b)

    return term(p, q) + term(1.0 - p, 1.0 - q)


def policy_kl(policy: ToyPolicy, ref: ToyPolicy) -> float:
    """KL of the full response distribution, summed over independent factors."""
    total = sum(bernoulli_kl(p, q) for p, q in zip(policy.emit, ref.emit))
    return total + bernoulli_kl(policy.p_consistent, ref.p_consistent)


def _logit(p: float) -> float:
    return math.log(p) - math.log(1.0 - p)


def _grad_step(
    policy: ToyPolicy,
    old: ToyPolicy,
    ref: ToyPolicy,
    rollouts: list[Rollout],
    advantages: list[float],
    grpo_cfg: GRPOConfig,
    step_size: float,
    floor: float,
) -> bool:
    """One exact ascent step on the clipped surrogate.

    Parameters are the log-odds of each probability, so likelihood-score
    terms are the bounded (emitted - p) form. Returns whether projecting
    probabilities back into [floor, 1 - floor] clamped anything.
    """
    m = len(policy.emit)
    grad = [0.0] * (m + 1)
    g = len(rollouts)
    eps = grpo_cfg.clip_epsilon
    for rollout, adv in zip(rollouts, advantages):
        if adv == 0.0:
            continue
        rho = math.exp(log_likelihood(policy, rollout) - log_likelihood(old, rollout))
        # Outside the trust region the clipped branch is active and the
        # gradient through rho vanishes.
        if adv > 0.0 and rho >= 1.0 + eps:
            continue
        if adv < 0.0 and rho <= 1.0 - eps:
            continue
        coeff = adv * rho / g
        for j, (bit, p) in enumerate(zip(rollout.emitted, policy.emit)):
            grad[j] += coeff * (bit - p)
        pc = policy.p_consistent
        consistent = rollout.declared == sum(rollout.emitted)
        grad[m] += coeff * ((1.0 - pc) if consistent else -pc)
    beta = grpo_cfg.kl_beta
    if beta > 0.0:
        for j, p in enumerate(policy.emit):
            grad[j] -= beta * p * (1.0 - p) * (_logit(p) - _logit(ref.emit[j]))
        pc = policy.p_consistent
        grad[m] -= (
            beta * pc * (1.0 - pc) * (_logit(pc) - _logit(ref.p_consistent))
        )
    lo, hi = _logit(floor), _logit(1.0 - floor)

    def ascend(p: float, g_val: float) -> tuple[float, bool]:
        raw = _logit(p) + step_size * g_val
        proj = min(max(raw, lo), hi)
        return 1.0 / (1.0 + math.exp(-proj)), proj != raw

    clamped = False
    for j in range(m):
        policy.emit[j], hit = ascend(policy.emit[j], grad[j])
        clamped = clamped or hit
    policy.p_consistent, hit = ascend(policy.p_consistent, grad[m])
    return clamped or hit


@dataclass(frozen=True)
class TrainParams:
    epochs: int = 300
    scenes_per_epoch: int = 2
    inner_steps: int = 2
    step_size: float = 0.05
    prob_floor: float = 0.002
    seed: int = 0
    eval_scenes: int = 4
    eval_samples: int = 2
    emit_base: float = 0.06
    emit_distractor: float = 0.3
    p_consistent_init: float = 0.5

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.scenes_per_epoch < 1 or self.inner_steps < 1:
            raise ValueError("scenes_per_epoch and inner_steps must be >= 1")
        if not 0.0 < self.prob_floor < 0.5:
            raise ValueError("prob_floor must lie in (0, 0.5)")
        if self.step_size <= 0.0:
            raise ValueError("step_size must be positive")


@dataclass(frozen=True)
class TrainRecord:
    epoch: int
    mean_total_reward: float
    mean_format: float
    mean_detect: float
    mean_count: float
    mean_non_repeat: float
    alignment_rate: float
    game: float
    projection_rate: float

    def __post_init__(self):
        if not 0.0 <= self.alignment_rate <= 1.0:
            raise ValueError("alignment_rate must lie in [0, 1]")

    def as_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "mean_total_reward": self.mean_total_reward,
            "mean_format": self.mean_format,
            "mean_detect": self.mean_detect,
            "mean_count": self.mean_count,
            "mean_non_repeat": self.mean_non_repeat,
            "alignment_rate": self.alignment_rate,
            "game": self.game,
            "projection_rate": self.projection_rate,
        }


def _scene_seed(seed: int, epoch: int, index: int) -> int:
    return (seed * 1000003 + epoch) * 1009 + index


def _epoch_game(
    policy: ToyPolicy, env: EnvParams, train: TrainParams, epoch: int
) -> float:
    rng = random.Random(f"eval-{train.seed}-{epoch}")
    preds = []
    gts = []
    for i in range(train.eval_scenes):
        scene = generate_scene(9_000_000 + train.seed * 1000 + i, env)
        for _ in range(train.eval_samples):
            rollout = sample_rollout(policy, rng)
            preds.append(
                [c for bit, c in zip(rollout.emitted, policy.candidates) if bit]
            )
            gts.append(list(scene.gt_points))
    mean, _ = game_metric(preds, gts, env.image_size)
    return mean


def train_toy_grpo(
    grpo_cfg: GRPOConfig,
    reward_cfg: RewardConfig,
    env: EnvParams,
    train: TrainParams,
) -> tuple[list[TrainRecord], ToyPolicy]:
    """GRPO on the toy policy; deterministic for fixed configs and seed."""
    policy = make_policy(
        env, train.emit_base, train.emit_distractor, train.p_consistent_init
    )
    ref = policy.copy()
    rng = random.Random(f"train-{train.seed}")
    records = []
    for epoch in range(train.epochs):
        totals = {"total": 0.0, "format": 0.0, "detect": 0.0, "count": 0.0, "non": 0.0}
        aligned = 0
        n_rollouts = 0
        clamp_events = 0
        step_events = 0
        for s in range(train.scenes_per_epoch):
            scene = generate_scene(_scene_seed(train.seed, epoch, s), env)
            old = policy.copy()
            rollouts = [sample_rollout(old, rng) for _ in range(grpo_cfg.group_size)]
            rewards = []
            for rollout in rollouts:
                breakdown, _, _ = score_text(
                    rollout.text, list(scene.gt_points), reward_cfg, scene.image_size
                )
                rewards.append(breakdown.total)
                totals["total"] += breakdown.total
                totals["format"] += breakdown.format
                totals["detect"] += breakdown.detect
                totals["count"] += breakdown.count
                totals["non"] += breakdown.non_repeat
                aligned += rollout.declared == sum(rollout.emitted)
                n_rollouts += 1
            advantages = group_advantages(rewards, grpo_cfg)
            for _ in range(train.inner_steps):
                clamped = _grad_step(
                    policy,
                    old,
                    ref,
                    rollouts,
                    advantages,
                    grpo_cfg,
                    train.step_size,
                    train.prob_floor,
                )
                clamp_events += clamped
                step_events += 1
        records.append(
            TrainRecord(
                epoch=epoch,
                mean_total_reward=totals["total"] / n_rollouts,
                mean_format=totals["format"] / n_rollouts,
                mean_detect=totals["detect"] / n_rollouts,
                mean_count=totals["count"] / n_rollouts,
                mean_non_repeat=totals["non"] / n_rollouts,
                alignment_rate=aligned / n_rollouts,
                game=_epoch_game(policy, env, train, epoch),
                projection_rate=clamp_events / step_events,
            )
        )
    return records, policy


def evaluate_policy(
    policy: ToyPolicy,
    env: EnvParams,
    reward_cfg: RewardConfig,
    seed: int,
    n_scenes: int = 12,
    samples_per_scene: int = 16,
) -> dict:
    """Final measurement pass: alignment, count accuracy, GAME, matched
    fraction over fresh scenes."""
    rng = random.Random(f"final-{seed}")
    threshold = reward_cfg.resolve_threshold(env.image_size)
    aligned = 0
    exact = 0
    abs_err = 0
    matched_fraction_sum = 0.0
    n_samples = 0
    preds = []
    gts = []
    for i in range(n_scenes):
        scene = generate_scene(7_000_000 + seed * 1000 + i, env)
        n_gt = len(scene.gt_points)
        for _ in range(samples_per_scene):
            rollout = sample_rollout(policy, rng)
            points = [
                c for bit, c in zip(rollout.emitted, policy.candidates) if bit
            ]
            n = len(points)
            aligned += rollout.declared == n
            exact += rollout.declared == n_gt
            abs_err += abs(rollout.declared - n_gt)
            if n_gt > 0:
                n_valid = (
                    match_points(points, list(scene.gt_points), threshold).n_valid
                    if points
                    else 0
                )
                matched_fraction_sum += n_valid / n_gt
            else:
                matched_fraction_sum += 1.0 if n == 0 else 0.0
            preds.append(points)
            gts.append(list(scene.gt_points))
            n_samples += 1
    game_mean, _ = game_metric(preds, gts, env.image_size)
    return {
        "alignment_rate": aligned / n_samples,
        "match_rate": exact / n_samples,
        "mae": abs_err / n_samples,
        "game": game_mean,
        "matched_fraction": matched_fraction_sum / n_samples,
    }


def ablation_presets(base: RewardConfig | None = None) -> dict[str, RewardConfig]:
    base = base or RewardConfig()
    return {
        "count_only": replace(base, w2=0.0),
        "detect_only": replace(base, w3=0.0),
        "combined": base,
    }


def ablation_train_params(seed: int) -> TrainParams:
    """Budget calibrated so reward-setting comparisons separate cleanly."""
    return TrainParams(seed=seed, epochs=350, step_size=0.4)


def ablation_grpo_config() -> GRPOConfig:
    """A soft KL anchor; the default beta holds the count-consistency
    parameter too close to its reference for alignment to saturate."""
    return GRPOConfig(kl_beta=0.005)


def run_ablation(
    settings: dict[str, RewardConfig],
    seed: int,
    env: EnvParams | None = None,
    train: TrainParams | None = None,
    grpo_cfg: GRPOConfig | None = None,
) -> list[dict]:
    """Train one policy per reward setting on a shared seed and report the
    final measurements, one row per setting."""
    if len(settings) < 2:
        raise ValueError("an ablation needs at least 2 settings")
    env = env or ablation_env()
    grpo_cfg = grpo_cfg or ablation_grpo_config()
    train = train or ablation_train_params(seed)
    if train.seed != seed:
        train = replace(train, seed=seed)
    rows = []
    for name, reward_cfg in settings.items():
        _, policy = train_toy_grpo(grpo_cfg, reward_cfg, env, train)
        row = {"setting": name, "seed": seed}
        # Wide final sampling so rate estimates resolve past the per-sample
        # granularity that training-time telemetry tolerates.
        row.update(
            evaluate_policy(policy, env, reward_cfg, seed, samples_per_scene=48)
        )
        rows.append(row)
    return rows


def ablation_env() -> EnvParams:
    """Environment used for reward-ablation comparisons: a fixed fish count
    in a small habitat keeps count matching learnable for a scene-blind
    policy, so count pressure and localization pressure can be separated."""
    return EnvParams(
        image_size=(64.0, 64.0),
        grid=6,
        min_fish=3,
        max_fish=3,
        n_distractors=3,
        habitat_size=4,
    )


def env_params_from_dict(section: dict) -> EnvParams:
    allowed = {f.name for f in EnvParams.__dataclass_fields__.values()}
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ValueError(f"unknown keys in config section 'env': {unknown}")
    fixed = dict(section)
    if "image_size" in fixed:
        fixed["image_size"] = tuple(fixed["image_size"])
    return EnvParams(**fixed)


def train_params_from_dict(section: dict) -> TrainParams:
    allowed = {f.name for f in TrainParams.__dataclass_fields__.values()}
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ValueError(f"unknown keys in config section 'train': {unknown}")
    return TrainParams(**section)
