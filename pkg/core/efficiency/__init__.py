from core.efficiency.counter import (
    EfficiencyReport,
    attention_score_flops,
    cmm_stream_flops,
    count_params_flops,
    module_flops,
    module_params,
    reference_fusion_flops,
    reference_fusion_params,
)

__all__ = [
    "EfficiencyReport",
    "attention_score_flops",
    "cmm_stream_flops",
    "count_params_flops",
    "module_flops",
    "module_params",
    "reference_fusion_flops",
    "reference_fusion_params",
]
