from dataclasses import dataclass, field


@dataclass
class CheckReport:
    """Outcome of a property sweep or an assertion over a run."""

    name: str
    passed: bool
    metrics: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)
    reference: str = ""

    def to_dict(self):
        return {
            "name": self.name,
            "passed": bool(self.passed),
            "reference": self.reference,
            "metrics": {k: _plain(v) for k, v in self.metrics.items()},
            "failures": [_plain(f) for f in self.failures[:20]],
            "n_failures": len(self.failures),
        }

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        shown = ", ".join(f"{k}={_fmt(v)}" for k, v in self.metrics.items())
        return f"[{status}] {self.name}: {shown}"


def _plain(v):
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if hasattr(v, "item"):
        return v.item()
    return v


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)
