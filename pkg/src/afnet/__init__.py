"""AF/AFL detection from raw single-lead ECG."""
__version__ = "0.1.0"
