"""Anomaly profile: alert payload plus detected abnormal metrics, rendered as a description."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from .retrieval import AbnormalQuery


@dataclass(frozen=True)
class Alert:
    name: str
    severity: str = "warning"
    summary: str = ""


@dataclass
class Anomaly:
    start_time: int
    end_time: int
    alerts: list[Alert] = field(default_factory=list)
    query: AbnormalQuery | None = None
    description: str = ""

    def __post_init__(self):
        if not self.start_time < self.end_time:
            raise ValueError("anomaly needs start_time < end_time")
        if self.query is None:
            self.query = AbnormalQuery(frozenset(), (self.start_time, self.end_time))
        if not self.description:
            self.description = describe(self)

    @property
    def title(self) -> str:
        names = ", ".join(a.name for a in self.alerts) or "database anomaly"
        return f"Diagnosis of {names}"

    @property
    def date(self) -> str:
        return datetime.fromtimestamp(self.start_time, tz=timezone.utc).strftime("%Y-%m-%d")

    @property
    def abnormal_metrics(self) -> list[str]:
        return sorted(self.query.metrics)


def _iso(ts: float) -> str:
    return datetime.fromtimestamp(ts, tz=timezone.utc).strftime("%Y-%m-%d %H:%M:%S UTC")


def describe(anomaly: Anomaly) -> str:
    lines = [
        f"The anomaly started at {_iso(anomaly.start_time)} (start_time {anomaly.start_time}) "
        f"and ended at {_iso(anomaly.end_time)} (end_time {anomaly.end_time})."
    ]
    for a in anomaly.alerts:
        lines.append(f"Alert {a.name} (severity {a.severity}): {a.summary}".rstrip(": "))
    if anomaly.query.metrics:
        lines.append("Abnormal metrics: " + ", ".join(anomaly.abnormal_metrics) + ".")
    return "\n".join(lines)


def profile_anomaly(alert_doc: dict, query: AbnormalQuery | None = None) -> Anomaly:
    """Build an Anomaly from ``{start_time, end_time, alerts: [{name, severity, summary}]}``."""
    alerts = [Alert(a["name"], a.get("severity", "warning"), a.get("summary", "")) for a in alert_doc.get("alerts", [])]
    return Anomaly(int(alert_doc["start_time"]), int(alert_doc["end_time"]), alerts, query, alert_doc.get("description", ""))


def load_alert(path: str | Path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
