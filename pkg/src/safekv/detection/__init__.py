"""Three-tier privacy detection: rule engine, tier detectors and the async pipeline."""

from .detectors import (AlertLevel, DetectionInput, Detector, DetectorMode, DetectorSpec, DetectorUnavailable,
                        ExternalDetector, LatencyModel, MockDetector, OracleDetector, RuleDetector, ThresholdState,
                        ThresholdTuning, adjust_threshold, make_detector, tier2_classify, tier3_validate)
from .pipeline import ClassificationJob, Completion, DetectionPipeline, PipelineStats, classify_block, default_tiers
from .rules import (CompileError, DetectionVerdict, ParseError, PatternRule, PatternSet, RuleEngine, RuleKind,
                    RuleMatch, default_rules_path, load_default_rules, load_rules, parse_rules, tier1_scan)

__all__ = [
    "AlertLevel", "ClassificationJob", "Completion", "CompileError", "DetectionInput", "DetectionPipeline",
    "DetectionVerdict", "Detector", "DetectorMode", "DetectorSpec", "DetectorUnavailable", "ExternalDetector",
    "LatencyModel", "MockDetector", "OracleDetector", "ParseError", "PatternRule", "PatternSet", "PipelineStats",
    "RuleDetector", "RuleEngine", "RuleKind", "RuleMatch", "ThresholdState", "ThresholdTuning", "adjust_threshold",
    "classify_block", "default_rules_path", "default_tiers", "load_default_rules", "load_rules", "make_detector",
    "parse_rules", "tier1_scan", "tier2_classify", "tier3_validate",
]
