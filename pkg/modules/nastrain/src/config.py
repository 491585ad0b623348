"""Search and fine-tune settings, and the running state of a search."""

from typing import Any, Literal

from attrs import define, field, validators
from srnet import ArchitectureSnapshot

SearchMode = Literal["both", "width", "depth", "none"]
SEARCH_MODES = ("both", "width", "depth", "none")


def _epochs(value: Any) -> tuple[int, ...]:
    return tuple(int(epoch) for epoch in value)


@define(frozen=True)
class SearchConfig:
    """
    ``v_t`` is the latency budget in ms (``inf`` disables the speed loss) and
    ``gamma`` its weight. Learning rates are halved at the start of every epoch
    listed in ``lr_halve_epochs`` (search) and ``finetune_lr_halve_epochs``
    (fine-tune, counted from its own first epoch).
    """

    v_t: float = field(default=40.0, converter=float, validator=validators.gt(0))
    gamma: float = field(default=0.01, converter=float, validator=validators.ge(0))
    search_epochs: int = field(default=20, validator=validators.ge(1))
    finetune_epochs: int = field(default=30, validator=validators.ge(0))
    warmup_epochs: int = field(default=0, validator=validators.ge(0))
    lr: float = field(default=1e-4, converter=float, validator=validators.gt(0))
    arch_lr: float | None = field(default=None)
    lr_halve_epochs: tuple[int, ...] = field(default=(10, 16), converter=_epochs)
    finetune_lr_halve_epochs: tuple[int, ...] = field(default=(20, 25), converter=_epochs)
    beta1: float = field(default=0.9, validator=[validators.ge(0), validators.lt(1)])
    beta2: float = field(default=0.999, validator=[validators.ge(0), validators.lt(1)])
    eps: float = field(default=1e-8, validator=validators.gt(0))
    batch_size: int = field(default=8, validator=validators.ge(1))
    patch: int = field(default=48, validator=validators.ge(1))
    patches_per_epoch: int = field(default=200, validator=validators.ge(1))
    scale: int = field(default=2, validator=validators.in_((2, 4)))
    seed: int = 0
    mode: SearchMode = field(default="both", validator=validators.in_(SEARCH_MODES))

    @arch_lr.validator
    def _check_arch_lr(self, _: Any, value: float | None) -> None:
        if value is not None and not value > 0:
            raise ValueError(f"arch_lr must be positive, got {value}")

    @property
    def architecture_lr(self) -> float:
        return self.lr if self.arch_lr is None else float(self.arch_lr)


@define
class TrainState:
    """Progress of a search; the losses are those of the latest step."""

    epoch: int = 0
    step: int = 0
    lr: float = 0.0
    l_sr: float = 0.0
    l_spd: float = 0.0
    l_total: float = 0.0
    v_n: float = 0.0
    snapshot: ArchitectureSnapshot | None = None
