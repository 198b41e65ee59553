from core.validation.validator import CASES, DEFAULT_TOLERANCE, TINY_MODEL, GradientValidator

__all__ = ["CASES", "DEFAULT_TOLERANCE", "TINY_MODEL", "GradientValidator"]
