"""Local deep hiding: compress a secret image into a compact code, embed it in a
local region of a cover image, locate it, and reconstruct the full-size secret."""

from ldh.data import DatasetSplit, load_image, quantize, resize, save_image, split_dataset
from ldh.embedding import (
    Region,
    crop,
    extract_regions,
    local_add,
    make_ground_truth_map,
    sample_regions,
)
from ldh.losses import LossWeights, hiding_loss, locating_loss, revealing_loss, total_loss
from ldh.metrics import QualityReport, apd, locating_iou, mse, psnr, ssim
from ldh.networks import (
    HidingNetwork,
    LocatingNetwork,
    NetworkConfig,
    RevealingNetwork,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from ldh.training import TrainingSchedule, train, train_step

__version__ = "0.1.0"
