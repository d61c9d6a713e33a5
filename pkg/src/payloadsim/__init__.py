"""Deterministic desk-scale simulator for a dual-port drone payload.

A mock drone exposes an E-port and a SkyPort with the per-port capability
matrix of the real platform. Two payload applications bind to them: the
E-port app pulls telemetry and RGB/stereo camera feeds over USB-bulk-style
pipes and commands the drone; the SkyPort app streams a synthetic desktop
to the operator's controller under a fixed encoder budget. An orchestrator
enforces the empirically known startup constraints (uptime gate, SkyPort
before E-port, stereo requires bulk) as testable rules.
"""

__version__ = "0.1.0"
