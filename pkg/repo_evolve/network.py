import copy
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn
from torch.utils.data import DataLoader, Dataset
from tqdm import tqdm

from repo_evolve.errors import DataError, NumericError
from repo_evolve.models.config import MtsConfig
from repo_evolve.models.events import NUM_EVENT_TYPES

logger = logging.getLogger(__name__)

PROBABILITY_FLOOR = 1e-7
_LOG2 = math.log(2.0)


class MtsOutput(NamedTuple):
    type_probs: torch.Tensor
    delay: torch.Tensor
    group_probs: torch.Tensor


def _branch(in_dim: int, hidden: Tuple[int, int], out_dim: int, dropout: float) -> nn.Sequential:
    return nn.Sequential(
        nn.Linear(in_dim, hidden[0]),
        nn.ReLU(),
        nn.Dropout(dropout),
        nn.Linear(hidden[0], hidden[1]),
        nn.ReLU(),
        nn.Dropout(dropout),
        nn.Linear(hidden[1], out_dim),
    )


class MtsNetwork(nn.Module):
    """
    Two stacked LSTMs encode a window of events; the last hidden state feeds
    three dense branches predicting event type, encoded delay and user group.
    """

    def __init__(
        self,
        input_dim: int,
        total_groups: int,
        lstm_hidden: Tuple[int, int] = (250, 150),
        branch_hidden: Tuple[int, int] = (128, 64),
        dropout: float = 0.5,
    ):
        super().__init__()
        self.input_dim = input_dim
        self.total_groups = total_groups
        self.lstm_hidden = tuple(lstm_hidden)
        self.branch_hidden = tuple(branch_hidden)
        self.dropout = dropout

        self.lstm1 = nn.LSTM(input_dim, lstm_hidden[0], batch_first=True)
        self.lstm2 = nn.LSTM(lstm_hidden[0], lstm_hidden[1], batch_first=True)
        self.type_branch = _branch(lstm_hidden[1], branch_hidden, NUM_EVENT_TYPES, dropout)
        self.delay_branch = _branch(lstm_hidden[1], branch_hidden, 1, dropout)
        self.group_branch = _branch(lstm_hidden[1], branch_hidden, total_groups, dropout)
        self.reset_parameters()

    def reset_parameters(self):
        """Uniform +-1/sqrt(fan_in) weights, zero biases, forget-gate input bias 1."""
        for lstm in (self.lstm1, self.lstm2):
            hidden = lstm.hidden_size
            for name, parameter in lstm.named_parameters():
                if name.startswith("weight_ih"):
                    bound = 1.0 / math.sqrt(lstm.input_size)
                    nn.init.uniform_(parameter, -bound, bound)
                elif name.startswith("weight_hh"):
                    bound = 1.0 / math.sqrt(hidden)
                    nn.init.uniform_(parameter, -bound, bound)
                else:
                    nn.init.zeros_(parameter)
                    if name.startswith("bias_ih"):
                        # gate order is input, forget, cell, output
                        with torch.no_grad():
                            parameter[hidden : 2 * hidden] = 1.0
        for branch in (self.type_branch, self.delay_branch, self.group_branch):
            for module in branch:
                if isinstance(module, nn.Linear):
                    bound = 1.0 / math.sqrt(module.in_features)
                    nn.init.uniform_(module.weight, -bound, bound)
                    nn.init.zeros_(module.bias)

    def forward(self, x: torch.Tensor) -> MtsOutput:
        if x.dim() != 3 or x.shape[-1] != self.input_dim:
            raise DataError(f"Expected a (batch, window, {self.input_dim}) input, got {tuple(x.shape)}")
        h, _ = self.lstm1(x)
        h, _ = self.lstm2(h)
        last = h[:, -1, :]
        return MtsOutput(
            torch.sigmoid(self.type_branch(last)),
            self.delay_branch(last),
            torch.sigmoid(self.group_branch(last)),
        )

    def branch_parameters(self) -> Dict[str, List[nn.Parameter]]:
        return {
            "type": list(self.type_branch.parameters()),
            "delay": list(self.delay_branch.parameters()),
            "group": list(self.group_branch.parameters()),
        }

    def architecture(self) -> Dict:
        return {
            "input_dim": self.input_dim,
            "total_groups": self.total_groups,
            "lstm_hidden": list(self.lstm_hidden),
            "branch_hidden": list(self.branch_hidden),
            "dropout": self.dropout,
        }

    @classmethod
    def from_architecture(cls, architecture: Dict) -> "MtsNetwork":
        return cls(
            architecture["input_dim"],
            architecture["total_groups"],
            tuple(architecture["lstm_hidden"]),
            tuple(architecture["branch_hidden"]),
            architecture["dropout"],
        )


def build_model(input_dim: int, total_groups: int, config: MtsConfig = MtsConfig()) -> MtsNetwork:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(config.seed)
        return MtsNetwork(input_dim, total_groups, config.lstm_hidden, config.branch_hidden, config.dropout)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def bce_sum(probs: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Per-class binary cross-entropy, averaged over the batch and summed over classes."""
    p = probs.clamp(PROBABILITY_FLOOR, 1.0 - PROBABILITY_FLOOR)
    losses = -(targets * torch.log(p) + (1.0 - targets) * torch.log1p(-p))
    return losses.sum(dim=-1).mean()


def log_cosh(x: torch.Tensor) -> torch.Tensor:
    return x + F.softplus(-2.0 * x) - _LOG2


@dataclass
class LossBreakdown:
    total: torch.Tensor
    type: torch.Tensor
    delay: torch.Tensor
    group: torch.Tensor

    def detached(self) -> Tuple[float, float, float, float]:
        return float(self.total), float(self.type), float(self.delay), float(self.group)


def mts_loss(
    output: MtsOutput,
    target_types: torch.Tensor,
    target_delays: torch.Tensor,
    target_groups: torch.Tensor,
    weights: Sequence[float] = (1.0, 1.0, 1.0),
) -> LossBreakdown:
    """
    w_e * BCE(type) + w_t * mean log cosh(delay error) + w_c * BCE(group).
    Class targets are indices; they are expanded to one-hot here.
    """
    for name, tensor in zip(MtsOutput._fields, output):
        if not torch.isfinite(tensor).all():
            raise NumericError(f"Non-finite {name} prediction")
    dtype = output.type_probs.dtype
    type_targets = F.one_hot(target_types.long(), output.type_probs.shape[-1]).to(dtype)
    group_targets = F.one_hot(target_groups.long(), output.group_probs.shape[-1]).to(dtype)

    type_loss = bce_sum(output.type_probs, type_targets)
    delay_loss = log_cosh(output.delay.reshape(-1) - target_delays.to(dtype).reshape(-1)).mean()
    group_loss = bce_sum(output.group_probs, group_targets)
    w_e, w_t, w_c = weights
    total = w_e * type_loss + w_t * delay_loss + w_c * group_loss
    return LossBreakdown(total, type_loss, delay_loss, group_loss)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    type_loss: float
    delay_loss: float
    group_loss: float


@dataclass
class TrainResult:
    model: MtsNetwork
    history: List[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0

    @property
    def best_val_loss(self) -> float:
        return self.history[self.best_epoch - 1].val_loss if self.history else float("nan")


def evaluate_loss(model: MtsNetwork, dataset: Dataset, weights: Sequence[float], batch_size: int = 1024) -> Tuple[float, float, float, float]:
    """Sample-weighted mean loss and components in inference mode."""
    if len(dataset) == 0:
        return (float("nan"),) * 4
    model.eval()
    sums = np.zeros(4)
    with torch.no_grad():
        for inputs, types, delays, groups in DataLoader(dataset, batch_size=batch_size, shuffle=False):
            breakdown = mts_loss(model(inputs), types, delays, groups, weights)
            sums += np.array(breakdown.detached()) * len(inputs)
    return tuple(float(v) for v in sums / len(dataset))


def train_model(
    train_dataset: Dataset,
    val_dataset: Optional[Dataset],
    config: MtsConfig = MtsConfig(),
    model: Optional[MtsNetwork] = None,
) -> TrainResult:
    """
    Adam over seeded shuffled mini-batches (last partial batch kept). Keeps
    the parameters of the epoch with the lowest validation loss, or the
    lowest training loss when there is no validation data.
    """
    if len(train_dataset) == 0:
        raise DataError("Training set is empty")
    if model is None:
        model = build_model(train_dataset.input_dim, train_dataset.total_groups, config)
    weights = config.loss_weights
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate, betas=config.betas, eps=config.eps)
    generator = torch.Generator().manual_seed(config.seed)
    loader = DataLoader(train_dataset, batch_size=config.batch_size, shuffle=True, drop_last=False, generator=generator)
    has_validation = val_dataset is not None and len(val_dataset) > 0

    result = TrainResult(model)
    best_loss = math.inf
    best_state = None
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(config.seed)
        for epoch in tqdm(range(1, config.epochs + 1), desc="train", disable=None):
            model.train()
            sums = np.zeros(4)
            for inputs, types, delays, groups in loader:
                try:
                    breakdown = mts_loss(model(inputs), types, delays, groups, weights)
                except NumericError as error:
                    raise NumericError(str(error), epoch) from None
                if not torch.isfinite(breakdown.total):
                    raise NumericError("Training loss diverged", epoch)
                optimizer.zero_grad()
                breakdown.total.backward()
                optimizer.step()
                sums += np.array(breakdown.detached()) * len(inputs)
            train_loss, type_loss, delay_loss, group_loss = sums / len(train_dataset)

            val_loss = evaluate_loss(model, val_dataset, weights)[0] if has_validation else float("nan")
            if has_validation and not math.isfinite(val_loss):
                raise NumericError("Validation loss is not finite", epoch)
            result.history.append(EpochRecord(epoch, train_loss, val_loss, type_loss, delay_loss, group_loss))

            selection = val_loss if has_validation else train_loss
            if selection < best_loss:
                best_loss = selection
                best_state = copy.deepcopy(model.state_dict())
                result.best_epoch = epoch
            logger.debug("epoch %d train %.6f val %.6f", epoch, train_loss, val_loss)

    model.load_state_dict(best_state)
    model.eval()
    logger.info("Best epoch %d of %d, %s loss %.6f", result.best_epoch, config.epochs,
                "validation" if has_validation else "training", best_loss)
    return result


def predict(model: MtsNetwork, inputs: torch.Tensor) -> MtsOutput:
    model.eval()
    with torch.no_grad():
        return model(inputs.to(next(model.parameters()).dtype))


def grad_check(
    model: MtsNetwork,
    inputs: torch.Tensor,
    target_types: torch.Tensor,
    target_delays: torch.Tensor,
    target_groups: torch.Tensor,
    weights: Sequence[float] = (1.0, 1.0, 1.0),
    step: float = 1e-5,
) -> float:
    """
    Max relative error between autograd gradients of the loss and central
    finite differences over every parameter, in double precision with
    dropout disabled. Relative error is |a - n| / max(|a|, |n|, 1e-5).
    """
    model = copy.deepcopy(model).double()
    model.eval()
    inputs = inputs.double()
    target_delays = target_delays.double()

    def loss_value() -> torch.Tensor:
        return mts_loss(model(inputs), target_types, target_delays, target_groups, weights).total

    model.zero_grad()
    loss_value().backward()
    worst = 0.0
    with torch.no_grad():
        for parameter in model.parameters():
            analytic = parameter.grad.detach().clone().reshape(-1)
            flat = parameter.data.reshape(-1)
            for index in range(flat.numel()):
                original = float(flat[index])
                flat[index] = original + step
                plus = float(loss_value())
                flat[index] = original - step
                minus = float(loss_value())
                flat[index] = original
                numeric = (plus - minus) / (2.0 * step)
                a = float(analytic[index])
                error = abs(a - numeric) / max(abs(a), abs(numeric), 1e-5)
                worst = max(worst, error)
    return worst


def tiny_model(input_dim: int, total_groups: int, seed: int = 0) -> MtsNetwork:
    config = MtsConfig(lstm_hidden=(8, 6), branch_hidden=(8, 4), dropout=0.0, seed=seed)
    return build_model(input_dim, total_groups, config)


def model_arrays(model: MtsNetwork) -> Dict[str, np.ndarray]:
    return {name: tensor.detach().cpu().numpy().copy() for name, tensor in model.state_dict().items()}


def model_from_arrays(architecture: Dict, arrays: Dict[str, np.ndarray]) -> MtsNetwork:
    model = MtsNetwork.from_architecture(architecture)
    state = {name: torch.from_numpy(np.array(arrays[name])) for name in model.state_dict()}
    dtype = next(iter(state.values())).dtype
    if dtype == torch.float64:
        model = model.double()
    model.load_state_dict(state)
    model.eval()
    return model
