from core.fusion.cmm import CmmBlock, CmmStack, FusedFeature, cifr_forward, cmm_block, partner_summary
from core.fusion.mamba import MambaBlock, causal_depthwise_conv, mamba_block
from core.fusion.selective_scan import (
    ScanInputs,
    SsmParams,
    scan_kernel,
    scan_reference,
    scan_states,
    selective_scan,
    state_bound,
)

__all__ = [
    "CmmBlock",
    "CmmStack",
    "FusedFeature",
    "MambaBlock",
    "ScanInputs",
    "SsmParams",
    "causal_depthwise_conv",
    "cifr_forward",
    "cmm_block",
    "mamba_block",
    "partner_summary",
    "scan_kernel",
    "scan_reference",
    "scan_states",
    "selective_scan",
    "state_bound",
]
