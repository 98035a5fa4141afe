import math
from numbers import Real
from typing import Any, Iterable, Mapping, Tuple

from utils.logger import get_logger

logger = get_logger("validation")


class Validator:
    """Input checks for CAMs and configuration documents.

    Every check returns ``(ok, message)``; callers decide which exception
    a failure maps to.
    """

    def validate_cam(self, cam, now: float) -> Tuple[bool, str]:
        """Check a CAM is finite and not generated after `now`"""
        if not math.isfinite(cam.generated_at):
            return False, f"CAM from {cam.sender_id} has non-finite timestamp"
        if cam.generated_at < 0:
            return False, f"CAM from {cam.sender_id} has negative timestamp {cam.generated_at}"
        if not cam.state.is_finite():
            return False, f"CAM from {cam.sender_id} has non-finite kinematics"
        if not math.isfinite(now):
            return False, "server time is not finite"
        if now < cam.generated_at:
            return False, f"CAM from {cam.sender_id} generated at {cam.generated_at} arrives at {now}"
        return True, "CAM looks good"

    def validate_keys(self, section: str, data: Mapping[str, Any], allowed: Iterable[str]) -> Tuple[bool, str]:
        """Reject keys that the schema does not know"""
        if not isinstance(data, Mapping):
            return False, f"{section}: expected a mapping, got {type(data).__name__}"
        unknown = sorted(set(data) - set(allowed))
        if unknown:
            logger.warning("Unknown configuration keys", {"section": section, "keys": unknown})
            return False, f"{section}: unknown key(s) {', '.join(unknown)}"
        return True, "keys look good"

    def validate_number(self, name: str, value: Any, *, positive: bool = False,
                        non_negative: bool = False, upper: float = None) -> Tuple[bool, str]:
        """Finite real number with optional sign and upper bound"""
        if isinstance(value, bool) or not isinstance(value, Real):
            return False, f"{name}: expected a number, got {value!r}"
        if not math.isfinite(value):
            return False, f"{name}: must be finite"
        if positive and not value > 0:
            return False, f"{name}: must be > 0, got {value}"
        if non_negative and value < 0:
            return False, f"{name}: must be >= 0, got {value}"
        if upper is not None and value > upper:
            return False, f"{name}: must be <= {upper}, got {value}"
        return True, f"{name} looks good"

    def validate_grid(self, name: str, values: Any) -> Tuple[bool, str]:
        """Non-empty list of finite numbers"""
        if not isinstance(values, (list, tuple)) or len(values) == 0:
            return False, f"{name}: grid must be a non-empty list"
        for v in values:
            ok, message = self.validate_number(name, v)
            if not ok:
                return False, message
        return True, f"{name} looks good"


# Create a single instance to use throughout the app
validator = Validator()
