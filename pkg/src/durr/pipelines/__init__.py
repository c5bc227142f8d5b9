from .config import TrainConfig
from .dqn import ReplayBuffer, Transition, reward, train_policy_dqn
from .schedule import NAIVE_LOOPS, REFINED_DEBLOCK, REFINED_DENOISE, Schedule
from .train_restorer import TrainingAborted, train_restorer

__all__ = ["NAIVE_LOOPS", "REFINED_DEBLOCK", "REFINED_DENOISE", "ReplayBuffer", "Schedule", "TrainConfig",
           "TrainingAborted", "Transition", "reward", "train_policy_dqn", "train_restorer"]
