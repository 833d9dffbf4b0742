from enum import Enum
from typing import TYPE_CHECKING, Optional

from simcp.conf import Config
from simcp.data import ClassPartition, ConfigError, SimilarityMatrix
from simcp.reflection import get_class_for_name
from simcp.similarity import PenaltySource

if TYPE_CHECKING:
    from simcp.scoring import ScoreFunction


class ScoreKind(Enum):
    LAC = 'lac'
    RAPS = 'raps'
    SAPS = 'saps'

    def create(self,
               **params) -> 'ScoreFunction':
        """
        Instantiates the registered score function, passing only the
        hyperparameters it accepts.
        """
        cls = get_class_for_name(Config[f"Score.{self.value}"])
        accepted = {
            ScoreKind.LAC:  (),
            ScoreKind.RAPS: ("lambda_raps", "k_reg"),
            ScoreKind.SAPS: ("lambda_saps",),
        }[self]
        return cls(**{k: v for k, v in params.items()
                      if k in accepted and v is not None})


class PenaltyKind(Enum):
    NONE = 'none'
    MA = 'ma'
    MS = 'ms'
    DIAG = 'diag'
    AIR = 'air'

    @property
    def is_penalized(self) -> bool:
        return self in (PenaltyKind.MA, PenaltyKind.MS, PenaltyKind.DIAG)

    @property
    def method_name(self) -> str:
        return {
            PenaltyKind.NONE: "Standard",
            PenaltyKind.MA:   "MA-CS",
            PenaltyKind.MS:   "MS-CS",
            PenaltyKind.DIAG: "MA-Diag",
            PenaltyKind.AIR:  "AIR",
        }[self]

    def source(self,
               partition: Optional[ClassPartition] = None,
               similarity: Optional[SimilarityMatrix] = None) \
            -> Optional[PenaltySource]:
        if self is PenaltyKind.MA:
            if partition is None:
                raise ConfigError("--penalty ma needs --partition")
            return PenaltySource.binary(partition)
        if self is PenaltyKind.MS:
            if similarity is None:
                raise ConfigError("--penalty ms needs --similarity")
            return PenaltySource.soft(similarity)
        if self is PenaltyKind.DIAG:
            return PenaltySource.diagonal()
        if self is PenaltyKind.AIR and partition is None:
            raise ConfigError("--penalty air needs --partition")
        return None
