"""Selective-deblur license plate reading pipeline."""

__version__ = "0.1.0"

from .blur_gate import BlurGateConfig, BlurVerdict, calibrate, check, laplacian_variance
from .deblur import build_multiscale, deblur
from .detect import Detection, DetectionConfig, DetectorSpec, detect, head_width, iou, nms
from .imaging import BBox, Image, Kernel, box_blur, convolve, crop, load_image, resize, save_image, to_grayscale
from .metrics import mssim, psnr, ssim_global
from .pipeline import Backends, PipelineConfig, PipelineResult, PlateReading, run, run_batch

__all__ = [
    "BBox", "Backends", "BlurGateConfig", "BlurVerdict", "Detection", "DetectionConfig",
    "DetectorSpec", "Image", "Kernel", "PipelineConfig", "PipelineResult", "PlateReading",
    "box_blur", "build_multiscale", "calibrate", "check", "convolve", "crop", "deblur", "detect",
    "head_width", "iou", "laplacian_variance", "load_image", "mssim", "nms", "psnr", "resize",
    "run", "run_batch", "save_image", "ssim_global", "to_grayscale",
]
