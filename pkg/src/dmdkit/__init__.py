"""Depth-guided scan orders, state-space recurrences over pixel
sequences, memory-backed expert compensation, and the matching loss and
image-metric toolbox, all at verifiable desk scale."""

__version__ = "0.1.0"

from .config import RunConfig, config_from_dict, load_config, save_config
from .errors import FormatError, ValidationError
from .gradcheck import (GradCheckReport, corrupt_gradients,
                        finite_diff_grad_check, relative_error)
from .imaging import (BlendResult, blend, load_image, psnr, read_netpbm,
                      save_image, ssim, write_metrics_csv)
from .loss import (LossWeights, appearance_loss, appearance_loss_grad,
                   load_loss, load_loss_grad, memory_matching_loss,
                   memory_matching_loss_grad, total_loss)
from .mecm import (ExpertParams, ExpertRoute, GateParams, GlobalAdjustResult,
                   MaskHead, MecmResult, MemoryBank, conv2d_same,
                   expert_forward, gate_route, gp_adjust, gp_adjust_vjp,
                   init_expert, init_gate, init_mask_head, init_memory_bank,
                   load_experts, load_gate, mecm_forward, memory_evolve,
                   memory_increment, save_experts, save_gate, sc_refine,
                   sc_refine_vjp)
from .scan import (ProximityMap, RegionMap, ScanOrder, apply_order, da_gscan,
                   da_rscan, normalize_proximity, partition_regions,
                   restore_order, reverse_order)
from .ssm import (PositionalEncoding, SsmParams, blend_matrices,
                  depth_features_from_proximity, ds_scan, ds_scan_vjp,
                  gamma_from_proximity, random_params, realign_pe,
                  spatial_positional_encoding, vanilla_scan, vanilla_scan_vjp)
from .tensorfile import load_tensor, save_tensor, tensor_bytes, tensor_from_bytes

__all__ = [name for name in dir() if not name.startswith("_")]
