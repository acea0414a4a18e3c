# Assessment Pipeline Module
from .assessment_pipeline import AssessmentOutput, ServiceFile, run_assessment
from .bench_pipeline import BenchMatrix, BenchOutput, run_bench

__all__ = ["AssessmentOutput", "ServiceFile", "run_assessment", "BenchMatrix", "BenchOutput", "run_bench"]
