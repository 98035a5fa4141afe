class SimulationError(Exception):
    """Base class for every failure raised by the simulation suite"""


class ConfigError(SimulationError):
    """Unknown, ill-typed or out-of-range configuration"""


class ScenarioError(ConfigError):
    """Scenario topology is inconsistent"""


class InvalidCamError(SimulationError):
    """A CAM carries non-finite fields or comes from the future"""


class AnalysisError(SimulationError):
    """Post-processing cannot classify a record"""


class MissingTrajectoryError(AnalysisError):
    """Trajectory log does not cover an entity at the instant needed"""


class MissingLogsError(SimulationError):
    """A run directory lacks one of the logs an operation consumes"""
