"""Selective state-space scans, 2D vision scan mechanisms and multimodal
connectors for a toy Mamba vision-language model."""
from .bench import attention_baseline, attention_flops, run_scaling, scan_flops
from .mamba_block import (MambaLayerWeights, MambaLmWeights, causal_conv1d, init_mamba_layer,
                          init_mamba_lm, mamba_layer_forward, mamba_lm_forward)
from .mmc import MmcConfig, connector_forward, init_connector, mmc_mlp, mmc_vss_l2, mmc_vss_mlp
from .pipeline import (ModelConfig, TokenStream, assemble, build_model, demo_image, detokenize,
                       encode_image, generate_greedy, generate_ids, tokenize)
from .ssm import (DiscreteParams, SelectiveInputs, SelectiveScanParams, SsmParams, discretize_zoh,
                  scan_parallel, scan_sequential, selective_params, selective_scan,
                  selective_scan_backward)
from .tensor_core import Prng, activation, load_vlmf, matmul, rms_norm, save_vlmf, tensor
from .vision import PatchGrid, load_features, patchify_encode, save_features
from .vision_scan import ScanOrder, VssWeights, scan_orders, vss_direction_outputs, vss_forward

__version__ = "0.1.0"
