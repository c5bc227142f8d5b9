from __future__ import annotations

from dataclasses import asdict, dataclass, field


@dataclass
class TrainConfig:
    # data
    batch: int = 24
    patch: int = 64
    kind: str = "gaussian"
    seed: int = 0
    width_scale: float = 1.0
    policy_width_scale: float = 1.0
    policy_observation: bool = False  # feed the degraded input to the policy alongside the estimate

    # restorer training
    iterations: int = 2000
    restorer_lr: float = 1e-3
    plateau_factor: float = 0.1
    plateau_patience: int = 5     # evaluation rounds without improvement
    plateau_min_delta: float = 0.01  # dB
    lr_floor: float = 1e-6
    eval_every: int = 100
    val_patches: int = 48

    # policy training
    policy_lr: float = 1e-4
    reward_scale: float = 100.0
    gamma: float = 0.99
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_fraction: float = 0.3
    replay_capacity: int = 10_000
    warmup: int = 500
    target_sync: int = 200
    policy_updates: int = 3000
    policy_batch: int = 32
    episodes_per_round: int = 8
    max_steps: int = 20
    levels: list[float] = field(default_factory=lambda: [25.0, 35.0, 45.0, 55.0])

    def __post_init__(self):
        positives = dict(batch=self.batch, patch=self.patch, iterations=self.iterations,
                         restorer_lr=self.restorer_lr, policy_lr=self.policy_lr,
                         plateau_factor=self.plateau_factor, reward_scale=self.reward_scale,
                         replay_capacity=self.replay_capacity, target_sync=self.target_sync,
                         policy_updates=self.policy_updates, policy_batch=self.policy_batch,
                         eval_every=self.eval_every, max_steps=self.max_steps,
                         episodes_per_round=self.episodes_per_round)
        for k, v in positives.items():
            if not v > 0:
                raise ValueError(f"{k} must be positive, got {v}")
        if not 0 < self.gamma <= 1:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")
        if not 0 <= self.eps_end <= self.eps_start <= 1:
            raise ValueError("need 0 <= eps_end <= eps_start <= 1")
        if self.warmup < self.policy_batch:
            raise ValueError("warmup must cover at least one minibatch")

    def to_dict(self) -> dict:
        return asdict(self)

    def epsilon(self, update: int) -> float:
        """Linear decay over the first ``eps_fraction`` of the policy updates."""
        horizon = max(1.0, self.eps_fraction * self.policy_updates)
        frac = min(1.0, update / horizon)
        return self.eps_start + frac * (self.eps_end - self.eps_start)
