"""Exception hierarchy shared across the package."""


class RobofleetError(Exception):
    """Base class for every error raised by robofleet."""


# memory
class SharedMemoryError(RobofleetError):
    pass


class KindMismatchError(SharedMemoryError):
    pass


class UnknownNodeError(SharedMemoryError, KeyError):
    pass


class CycleError(SharedMemoryError):
    pass


class HierarchyError(SharedMemoryError):
    pass


class EmptyQueryError(SharedMemoryError, ValueError):
    pass


class UnknownRoomError(SharedMemoryError):
    pass


class RegistrationConflictError(SharedMemoryError):
    pass


class UnknownRobotError(SharedMemoryError, KeyError):
    pass


class RobotStateError(SharedMemoryError, ValueError):
    pass


# planner
class PlannerError(RobofleetError):
    pass


class NoRobotsError(PlannerError):
    pass


class InfeasibleTaskError(PlannerError):
    pass


class UnmatchedTemplateError(PlannerError):
    pass


class MissingPlaceholderError(PlannerError):
    pass


class MalformedResponseError(PlannerError):
    def __init__(self, message, field=None):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field


class PlanValidationError(PlannerError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


class PlannerUnavailableError(PlannerError):
    pass


# scheduler
class SchedulerError(RobofleetError):
    pass


class DuplicateGraphError(SchedulerError):
    pass


class UnknownSubtaskError(SchedulerError, KeyError):
    pass


class InvalidTransitionError(SchedulerError):
    pass


class NotReadyError(SchedulerError):
    pass


class AssigneeOfflineError(SchedulerError):
    pass


class AssigneeBusyError(SchedulerError):
    pass


# skills
class SkillError(RobofleetError):
    pass


class UnknownToolError(SkillError, KeyError):
    pass


class EmbodimentMismatchError(SkillError):
    pass


class InvalidProfileError(SkillError, ValueError):
    pass


# bus
class BusError(RobofleetError):
    pass


class EndpointUnavailableError(BusError):
    pass


class NoSessionError(BusError):
    pass


# sim
class ScenarioError(RobofleetError):
    def __init__(self, message, path=None):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class SchemaError(ScenarioError):
    pass


class DanglingReferenceError(ScenarioError):
    pass


class MissingGoldError(RobofleetError, KeyError):
    pass


class TemplateExhaustionError(RobofleetError):
    pass
