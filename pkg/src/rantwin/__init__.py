"""Desk-scale digital twin of a 5G RAN: link-level simulator, in-controller
anomaly detection, and closed-loop remediation."""

__version__ = "0.1.0"
