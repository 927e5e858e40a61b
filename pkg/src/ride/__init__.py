"""Packet-level intrusion detection with tree distillation and a
hardware-aware quantization cost model."""

__version__ = "0.1.0"
