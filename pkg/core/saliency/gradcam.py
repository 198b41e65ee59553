# ============================================================================
# core/saliency/gradcam.py - Grad-CAM over Image Patch Tokens
# ============================================================================

"""
Class-activation maps from the gradient of one class logit with respect to
the final image-encoder patch tokens A (N x d):

    w_c = mean over patches of dlogit/dA[:, c]
    map = relu(A @ w), max-normalized to [0, 1]

The map lives on the patch grid and is upsampled by pixel repetition.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Protocol, Tuple, Union

import numpy as np

from core.errors import ContractError
from core.numcore import Tensor, backward, new_tape
from ingestion.image_io import write_pixmap

logger = logging.getLogger(__name__)

HEAT_COLOR = np.array([1.0, 0.0, 0.0])


class CapturingModel(Protocol):
    def forward_with_capture(self, images: np.ndarray, question_ids: np.ndarray) -> Tuple[Tensor, Tensor]:
        ...

    def zero_grad(self) -> None:
        ...


@dataclass
class SaliencyMap:
    heatmap: np.ndarray        # (grid, grid) in [0, 1]
    target_class: int
    predicted_class: int
    degenerate: bool           # all-zero map (no positive evidence or zero gradient)

    def upsample(self, patch_size: int) -> np.ndarray:
        return np.kron(self.heatmap, np.ones((patch_size, patch_size)))


class GradCam:
    def __init__(self, model: CapturingModel, patch_grid: int):
        self.model = model
        self.patch_grid = patch_grid

    def compute(self, images: np.ndarray, question_ids: np.ndarray, target_class: Optional[int] = None) -> SaliencyMap:
        images = np.asarray(images)
        if images.ndim == 3:
            images = images[None]
        question_ids = np.asarray(question_ids)
        if question_ids.ndim == 1:
            question_ids = question_ids[None]
        if images.shape[0] != 1:
            raise ContractError(f"saliency maps are computed one sample at a time, got batch {images.shape[0]}")

        new_tape()
        logits, tokens = self.model.forward_with_capture(images, question_ids)
        tokens.retain_grad()
        num_classes = logits.shape[-1]
        predicted = int(np.argmax(logits.data[0]))
        target = predicted if target_class is None else int(target_class)
        if not 0 <= target < num_classes:
            raise ContractError(f"target class {target} outside [0, {num_classes})")
        if tokens.shape[1] != self.patch_grid * self.patch_grid:
            raise ContractError(f"{tokens.shape[1]} patch tokens do not form a {self.patch_grid}x{self.patch_grid} grid")

        backward(logits[0, target])
        grad = tokens.grad[0] if tokens.grad is not None else np.zeros(tokens.shape[1:])
        self.model.zero_grad()

        weights = grad.mean(axis=0)
        cam = np.maximum(tokens.data[0].astype(np.float64) @ weights.astype(np.float64), 0.0)
        peak = cam.max() if cam.size else 0.0
        degenerate = not peak > 0.0
        heatmap = np.zeros_like(cam) if degenerate else cam / peak
        if degenerate:
            logger.warning(f"Saliency for class {target} is all zero (no positive gradient evidence)")
        return SaliencyMap(
            heatmap=heatmap.reshape(self.patch_grid, self.patch_grid),
            target_class=target,
            predicted_class=predicted,
            degenerate=degenerate,
        )


def overlay(image: np.ndarray, saliency: SaliencyMap, opacity: float = 0.5) -> np.ndarray:
    """Blend the upsampled map (as red) over an (H, W, C) image"""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 4:
        image = image[0]
    patch_size = image.shape[0] // saliency.heatmap.shape[0]
    heat = saliency.upsample(patch_size)[..., None]
    color = HEAT_COLOR if image.shape[-1] == 3 else np.ones(image.shape[-1])
    return np.clip(image * (1.0 - opacity * heat) + opacity * heat * color, 0.0, 1.0)


def write_overlay(path: Union[str, Path], image: np.ndarray, saliency: SaliencyMap, opacity: float = 0.5) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    write_pixmap(path, overlay(image, saliency, opacity))
    return path
