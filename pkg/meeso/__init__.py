"""
meeso: multi-objective end-to-end self-optimizing search over learning
pipelines (preprocessing x architecture x optimizer x training budget).
"""
__version__ = "0.1.0"
