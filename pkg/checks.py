from dataclasses import dataclass, field
from typing import Any, Dict, List

PASS = "PASS"
FAIL = "FAIL"
INFO = "INFO"


class LaboratoryError(Exception):
    @property
    def qualified_name(self) -> str:
        return f"{type(self).__module__}.{type(self).__name__}"


class InputError(LaboratoryError):
    """Bad polygon file, bad configuration or invalid polygon: exit code 2."""


@dataclass
class CheckResult:
    name: str = ""
    status: str = INFO
    value: float = float("nan")
    threshold: float = float("nan")
    message: str = ""
    details: Dict[str, Any] = field(default_factory=dict)
    flags: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.status != FAIL

    def to_dict(self) -> Dict[str, Any]:
        return {
            "status": self.status,
            "value": _plain(self.value),
            "threshold": _plain(self.threshold),
            "message": self.message,
            "flags": list(self.flags),
            "details": _plain(self.details),
        }


def verdict(ok: bool) -> str:
    return PASS if ok else FAIL


def combine(name: str, parts: List[CheckResult], message: str = "") -> CheckResult:
    """Fold sub-checks into one: FAIL if any part fails, INFO if all are INFO."""
    if not parts:
        return CheckResult(name=name, status=INFO, message=message or "no sub-checks ran")
    if any(p.status == FAIL for p in parts):
        status = FAIL
    elif all(p.status == INFO for p in parts):
        status = INFO
    else:
        status = PASS
    worst = max(parts, key=lambda p: (p.status == FAIL, _finite_or(p.value, float("-inf"))))
    return CheckResult(
        name=name,
        status=status,
        value=worst.value,
        threshold=worst.threshold,
        message=message,
        details={p.name: p.to_dict() for p in parts},
    )


def _finite_or(x: float, default: float) -> float:
    try:
        x = float(x)
    except (TypeError, ValueError):
        return default
    return x if x == x and abs(x) != float("inf") else default


def _plain(obj: Any) -> Any:
    # numpy scalars and arrays -> builtin types; nan/inf -> strings so the JSON stays valid
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if hasattr(obj, "tolist"):
        return _plain(obj.tolist())
    if isinstance(obj, bool) or obj is None or isinstance(obj, str):
        return obj
    if isinstance(obj, int):
        return obj
    if isinstance(obj, float):
        if obj != obj:
            return "nan"
        if obj in (float("inf"), float("-inf")):
            return "inf" if obj > 0 else "-inf"
        return obj
    return str(obj)
