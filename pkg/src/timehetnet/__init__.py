"""Few-shot forecasting across multivariate time-series tasks with
heterogeneous channels: permutation-invariant set networks with temporal
blocks, an episodic task sampler over synthetic meta-datasets, baselines,
and a training/evaluation harness."""

__version__ = "0.1.0"

from .tensor import Tensor, backward, grad_check, no_grad
from .tasks import Task, TaskSplit

__all__ = ["Tensor", "backward", "grad_check", "no_grad", "Task", "TaskSplit",
           "__version__"]
