"""Joint model provisioning, bandwidth and GPU allocation for overlapped
model downloading and on-device inference."""

__version__ = "0.1.0"
