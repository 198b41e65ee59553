"""MVQA Ingestion - synthetic scene generation and dataset loading"""
from ingestion.dataset_loader.loader import VqaDataset, VqaSample, batch_iter, collate, load_dataset
from ingestion.scene_generator.generator import build_vocabulary, generate_dataset, write_split

__all__ = [
    "VqaDataset",
    "VqaSample",
    "batch_iter",
    "build_vocabulary",
    "collate",
    "generate_dataset",
    "load_dataset",
    "write_split",
]
