# ============================================================================
# ingestion/scene_generator/generator.py - Synthetic Shapes VQA Generator
# ============================================================================

"""
Renders scenes of 1-3 colored shapes on a 2x2 position grid and asks closed
(yes/no) and open-ended questions about them. Every answer is computed
from the scene record, never from the pixels.
"""

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from core.config import GeneratorConfig, flatten_config
from core.encoders.vocabulary import Vocabulary
from core.errors import ConfigError
from ingestion.image_io import write_pixmap

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
SPLITS = ("train", "val", "test")

PALETTE: Dict[str, Tuple[float, float, float]] = {
    "red": (0.90, 0.12, 0.12),
    "green": (0.15, 0.75, 0.20),
    "blue": (0.15, 0.30, 0.95),
    "yellow": (0.95, 0.85, 0.10),
    "white": (0.97, 0.97, 0.97),
    "purple": (0.60, 0.20, 0.80),
}
SUPPORTED_SHAPES = ("square", "circle", "triangle")
BACKGROUND = 0.1
COUNT_WORDS = ("zero", "one", "two", "three", "four")

# name -> (question template, open-ended)
TEMPLATES: Dict[str, Tuple[str, bool]] = {
    "color_shape_exists": ("is there a {color} {shape}", False),
    "shape_at_position": ("is there a {shape} in the {position}", False),
    "object_at_position": ("what is in the {position}", True),
    "position_of_object": ("where is the {color} {shape}", True),
    "object_count": ("how many shapes are there", True),
}
CLOSED_TEMPLATES = [name for name, (_, is_open) in TEMPLATES.items() if not is_open]
OPEN_TEMPLATES = [name for name, (_, is_open) in TEMPLATES.items() if is_open]


@dataclass(frozen=True)
class SceneObject:
    shape: str
    color: str
    position: str
    center: Tuple[int, int]  # (row, col) in pixels
    radius: int


@dataclass
class Scene:
    objects: List[SceneObject] = field(default_factory=list)

    def at(self, position: str) -> Optional[SceneObject]:
        return next((obj for obj in self.objects if obj.position == position), None)

    def find(self, color: str, shape: str) -> Optional[SceneObject]:
        return next((obj for obj in self.objects if obj.color == color and obj.shape == shape), None)

    def to_fields(self) -> Dict[str, Union[str, int]]:
        """Flat `object_<i>_<attr>` fields for a one-level sample record"""
        fields: Dict[str, Union[str, int]] = {"object_count": len(self.objects)}
        for i, o in enumerate(self.objects):
            prefix = f"object_{i}_"
            fields.update({
                prefix + "shape": o.shape, prefix + "color": o.color, prefix + "position": o.position,
                prefix + "row": o.center[0], prefix + "col": o.center[1], prefix + "radius": o.radius,
            })
        return fields

    @classmethod
    def from_fields(cls, record: Mapping[str, Union[str, int]]) -> "Scene":
        objects = []
        for i in range(int(record.get("object_count", 0))):
            prefix = f"object_{i}_"
            objects.append(SceneObject(
                str(record[prefix + "shape"]), str(record[prefix + "color"]), str(record[prefix + "position"]),
                (int(record[prefix + "row"]), int(record[prefix + "col"])), int(record[prefix + "radius"]),
            ))
        return cls(objects)


@dataclass(frozen=True)
class Question:
    template: str
    slots: Dict[str, str]
    text: str
    is_open: bool


@dataclass
class GeneratedSample:
    sample_id: str
    image: np.ndarray
    question: str
    answer: str
    is_open: bool
    scene: Scene
    template: str

    def to_record(self, image_path: str) -> Dict:
        return {
            "id": self.sample_id,
            "image": image_path,
            "question": self.question,
            "answer": self.answer,
            "is_open": self.is_open,
            "template": self.template,
            **self.scene.to_fields(),
        }


def check_inventory(config: GeneratorConfig) -> None:
    unknown_colors = [c for c in config.colors if c not in PALETTE]
    unknown_shapes = [s for s in config.shapes if s not in SUPPORTED_SHAPES]
    if unknown_colors or unknown_shapes:
        raise ConfigError(
            f"unsupported inventory: colors {unknown_colors} shapes {unknown_shapes}; "
            f"known colors {sorted(PALETTE)}, shapes {list(SUPPORTED_SHAPES)}"
        )
    if len(config.colors) * len(config.shapes) < config.max_objects + 1:
        raise ConfigError("inventory too small: need more color/shape pairs than objects per scene")
    if len(config.shapes) < 2 and config.max_objects >= len(config.positions):
        raise ConfigError("a single shape cannot fill every position; negative position questions need a gap")


# ---------------------------------------------------------------------------
# Ground truth
# ---------------------------------------------------------------------------

def count_phrase(count: int) -> str:
    return f"{COUNT_WORDS[count]} shape" if count == 1 else f"{COUNT_WORDS[count]} shapes"


def answer_question(scene: Scene, template: str, slots: Dict[str, str]) -> str:
    """Answer from the scene record"""
    if template == "color_shape_exists":
        return "yes" if scene.find(slots["color"], slots["shape"]) else "no"
    if template == "shape_at_position":
        obj = scene.at(slots["position"])
        return "yes" if obj is not None and obj.shape == slots["shape"] else "no"
    if template == "object_at_position":
        obj = scene.at(slots["position"])
        return "nothing" if obj is None else f"{obj.color} {obj.shape}"
    if template == "position_of_object":
        obj = scene.find(slots["color"], slots["shape"])
        return "nowhere" if obj is None else obj.position
    if template == "object_count":
        return count_phrase(len(scene.objects))
    raise ConfigError(f"unknown question template {template!r}")


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def sample_scene(config: GeneratorConfig, rng: np.random.Generator) -> Scene:
    count = int(rng.integers(config.min_objects, config.max_objects + 1))
    positions = rng.choice(len(config.positions), size=count, replace=False)
    pairs = rng.choice(len(config.colors) * len(config.shapes), size=count, replace=False)
    quadrant = config.image_size // 2
    radius = max(2, int(quadrant * 0.3))
    jitter = max(0, min(config.position_jitter, quadrant // 2 - radius - 1))
    objects = []
    for slot, pair in zip(positions, pairs):
        row, col = divmod(int(slot), 2)
        offset = rng.integers(-jitter, jitter + 1, size=2) if jitter else np.zeros(2, dtype=int)
        center = (row * quadrant + quadrant // 2 + int(offset[0]), col * quadrant + quadrant // 2 + int(offset[1]))
        color, shape = config.colors[int(pair) // len(config.shapes)], config.shapes[int(pair) % len(config.shapes)]
        objects.append(SceneObject(shape, color, config.positions[int(slot)], center, radius))
    return Scene(objects)


def shape_mask(shape: str, center: Tuple[int, int], radius: int, size: int) -> np.ndarray:
    rows, cols = np.mgrid[0:size, 0:size]
    dr, dc = rows - center[0], cols - center[1]
    if shape == "square":
        return (np.abs(dr) <= radius) & (np.abs(dc) <= radius)
    if shape == "circle":
        return dr * dr + dc * dc <= radius * radius
    if shape == "triangle":
        # apex on top, base of width 2r at the bottom
        return (dr >= -radius) & (dr <= radius) & (2 * np.abs(dc) <= dr + radius)
    raise ConfigError(f"unknown shape {shape!r}")


def render_scene(scene: Scene, config: GeneratorConfig, rng: np.random.Generator) -> np.ndarray:
    """(H, W, 3) float image in [0, 1]"""
    size = config.image_size
    image = np.full((size, size, 3), BACKGROUND)
    for obj in scene.objects:
        image[shape_mask(obj.shape, obj.center, obj.radius, size)] = PALETTE[obj.color]
    if config.noise_level > 0:
        image = image + rng.uniform(-config.noise_level, config.noise_level, size=image.shape)
    return np.clip(image, 0.0, 1.0)


def _closed_question(scene: Scene, config: GeneratorConfig, rng: np.random.Generator, want_yes: bool):
    template = CLOSED_TEMPLATES[int(rng.integers(len(CLOSED_TEMPLATES)))]
    if template == "color_shape_exists":
        if want_yes:
            obj = scene.objects[int(rng.integers(len(scene.objects)))]
            return template, {"color": obj.color, "shape": obj.shape}
        absent = [(c, s) for c in config.colors for s in config.shapes if scene.find(c, s) is None]
        color, shape = absent[int(rng.integers(len(absent)))]
        return template, {"color": color, "shape": shape}
    if want_yes:
        obj = scene.objects[int(rng.integers(len(scene.objects)))]
        return template, {"shape": obj.shape, "position": obj.position}
    options = [
        (s, p) for p in config.positions for s in config.shapes
        if scene.at(p) is None or scene.at(p).shape != s
    ]
    shape, position = options[int(rng.integers(len(options)))]
    return template, {"shape": shape, "position": position}


def _open_question(scene: Scene, rng: np.random.Generator):
    template = OPEN_TEMPLATES[int(rng.integers(len(OPEN_TEMPLATES)))]
    obj = scene.objects[int(rng.integers(len(scene.objects)))]
    if template == "object_at_position":
        return template, {"position": obj.position}
    if template == "position_of_object":
        return template, {"color": obj.color, "shape": obj.shape}
    return template, {}


def sample_question(scene: Scene, config: GeneratorConfig, rng: np.random.Generator, is_open: bool) -> Question:
    if is_open:
        template, slots = _open_question(scene, rng)
    else:
        template, slots = _closed_question(scene, config, rng, want_yes=bool(rng.random() < 0.5))
    text = TEMPLATES[template][0].format(**slots)
    return Question(template=template, slots=slots, text=text, is_open=is_open)


def generate_split(config: GeneratorConfig, split: str, count: int, rng: np.random.Generator) -> List[GeneratedSample]:
    samples = []
    for i in range(count):
        scene = sample_scene(config, rng)
        image = render_scene(scene, config, rng)
        question = sample_question(scene, config, rng, is_open=bool(rng.random() < config.open_fraction))
        samples.append(GeneratedSample(
            sample_id=f"{split}-{i:06d}",
            image=image,
            question=question.text,
            answer=answer_question(scene, question.template, question.slots),
            is_open=question.is_open,
            scene=scene,
            template=question.template,
        ))
    return samples


# ---------------------------------------------------------------------------
# Vocabulary
# ---------------------------------------------------------------------------

def vocabulary_words(config: GeneratorConfig) -> List[str]:
    """Every word a question or answer can contain, in a fixed order"""
    words: List[str] = ["yes", "no", "nothing", "nowhere"]
    for template, _ in TEMPLATES.values():
        words.extend(w for w in template.split() if not w.startswith("{"))
    words.extend(config.colors)
    words.extend(config.shapes)
    for position in config.positions:
        words.extend(position.split())
    for count in range(config.min_objects, config.max_objects + 1):
        words.extend(count_phrase(count).split())
    return words


def build_vocabulary(config: GeneratorConfig) -> Vocabulary:
    return Vocabulary.from_words(vocabulary_words(config))


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------

def sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def images_digest(paths: Sequence[Path]) -> str:
    digest = hashlib.sha256()
    for path in paths:
        digest.update(path.read_bytes())
    return digest.hexdigest()


def write_split(root: Union[str, Path], split: str, samples: Sequence[GeneratedSample],
                vocab: Vocabulary, seed: int) -> Dict[str, str]:
    """Write images, samples.jsonl and the manifest for one split; returns the manifest"""
    split_dir = Path(root) / split
    image_dir = split_dir / "images"
    image_dir.mkdir(parents=True, exist_ok=True)
    lines, image_paths = [], []
    for sample in samples:
        relative = f"images/{sample.sample_id}.ppm"
        write_pixmap(split_dir / relative, sample.image)
        image_paths.append(split_dir / relative)
        lines.append(json.dumps(sample.to_record(relative), sort_keys=True))
    samples_file = split_dir / "samples.jsonl"
    samples_file.write_text("".join(line + "\n" for line in lines), encoding="utf-8")

    open_count = sum(1 for s in samples if s.is_open)
    manifest = {
        "format_version": str(FORMAT_VERSION),
        "split": split,
        "count": str(len(samples)),
        "open_count": str(open_count),
        "closed_count": str(len(samples) - open_count),
        "seed": str(seed),
        "vocab_sha": vocab.sha256(),
        "samples_sha": sha256_file(samples_file),
        "images_sha": images_digest(image_paths),
    }
    (split_dir / "manifest.txt").write_text(
        "".join(f"{key}={value}\n" for key, value in manifest.items()), encoding="utf-8"
    )
    return manifest


@dataclass
class DatasetSummary:
    root: str
    seed: int
    vocab_size: int
    counts: Dict[str, int]
    open_counts: Dict[str, int]

    def to_dict(self) -> Dict:
        return asdict(self)


def generate_dataset(config: GeneratorConfig, seed: int, out_dir: Union[str, Path]) -> DatasetSummary:
    """Generate train/val/test under out_dir; identical seed and config give identical bytes"""
    check_inventory(config)
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    vocab = build_vocabulary(config)
    vocab.save(root / "vocab.txt")
    (root / "generator.conf").write_text("\n".join(flatten_config(config)) + "\n", encoding="utf-8")

    counts, open_counts = {}, {}
    for index, (split, count) in enumerate(config.split_counts.items()):
        rng = np.random.default_rng([int(seed), index])
        samples = generate_split(config, split, count, rng)
        manifest = write_split(root, split, samples, vocab, seed)
        counts[split] = count
        open_counts[split] = int(manifest["open_count"])
        logger.info(f"Wrote {count} {split} samples ({open_counts[split]} open-ended) to {root / split}")
    return DatasetSummary(root=str(root), seed=int(seed), vocab_size=len(vocab), counts=counts, open_counts=open_counts)


def answer_inventory(config: GeneratorConfig) -> List[str]:
    """Every answer the templates can produce for this inventory"""
    answers = ["yes", "no"]
    answers += [f"{color} {shape}" for color in config.colors for shape in config.shapes]
    answers += list(config.positions)
    answers += [count_phrase(n) for n in range(config.min_objects, config.max_objects + 1)]
    return answers
