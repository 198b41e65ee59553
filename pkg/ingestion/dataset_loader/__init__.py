from ingestion.dataset_loader.loader import (
    VqaDataset,
    VqaSample,
    batch_iter,
    collate,
    load_dataset,
    load_split,
    read_manifest,
)

__all__ = ["VqaDataset", "VqaSample", "batch_iter", "collate", "load_dataset", "load_split", "read_manifest"]
