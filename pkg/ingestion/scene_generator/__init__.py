from ingestion.scene_generator.generator import (
    SPLITS,
    TEMPLATES,
    DatasetSummary,
    GeneratedSample,
    Question,
    Scene,
    SceneObject,
    answer_inventory,
    answer_question,
    build_vocabulary,
    generate_dataset,
    generate_split,
    render_scene,
    sample_question,
    sample_scene,
    write_split,
)

__all__ = [
    "SPLITS",
    "TEMPLATES",
    "DatasetSummary",
    "GeneratedSample",
    "Question",
    "Scene",
    "SceneObject",
    "answer_inventory",
    "answer_question",
    "build_vocabulary",
    "generate_dataset",
    "generate_split",
    "render_scene",
    "sample_question",
    "sample_scene",
    "write_split",
]
