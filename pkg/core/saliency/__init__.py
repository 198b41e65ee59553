from core.saliency.gradcam import CapturingModel, GradCam, SaliencyMap, overlay, write_overlay

__all__ = ["CapturingModel", "GradCam", "SaliencyMap", "overlay", "write_overlay"]
