from .dataset import Batch, Dataset, Sample, Split, Vocab, check_no_leakage, load_dataset, save_dataset
from .ingest import IngestConfig, LogRecord, ingest_logs, ingest_records, read_logs, write_logs
from .synthetic import SyntheticConfig, bayes_scores, dwell_bucket, generate_synthetic

__all__ = [
    "Batch", "Dataset", "Sample", "Split", "Vocab", "check_no_leakage", "load_dataset", "save_dataset",
    "IngestConfig", "LogRecord", "ingest_logs", "ingest_records", "read_logs", "write_logs",
    "SyntheticConfig", "bayes_scores", "dwell_bucket", "generate_synthetic",
]
