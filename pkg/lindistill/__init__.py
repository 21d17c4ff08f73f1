"""Numerical laboratory for distilling linear classifiers."""

from .error import ContractError
from .error import DomainError
from .error import FormatError
from .error import MissingDataError
from .error import NumericError
from .error import SingularityError
from .error import StepSizeError
from .error import UsageError
from .config import Config
from .distill import closed_form_solution
from .experiments import ExperimentConfig
from .experiments import ResultTable
from .tasks import TransferSet
from .trainers import train_deep
from .trainers import train_shallow
