"""MCP prompt functions for workflow guidance."""

from __future__ import annotations


async def missing_modality_protocol() -> str:
    """Guide for training a model and running both missing-modality protocols."""
    return """Evaluate robustness to missing modalities:

1. Read derl://presets/toy for a resolved config to start from

2. Generate data with derl_gen_data (or point data.path at precomputed features)

3. Start training with derl_train_start, passing config_text and overrides
   - Poll derl_train_status until ready is true
   - Page through step losses with derl_train_history_chunk (l_task, l_dec, l_rec, l_total)
   - If error is set, report it and stop

4. Run derl_evaluate with protocol "intra":
   - One row per missing rate r = 0.0 .. 0.9 plus the "avg" row over all rates
   - Expect MAE to rise and neutral_rate to grow as r increases

5. Run derl_evaluate with protocol "inter":
   - One row per available subset (t, v, a, t+v, t+a, v+a, t+v+a)
   - The "avg" row covers the six incomplete subsets only

6. Close the run with derl_train_close
"""


async def ablation_study() -> str:
    """Guide for comparing module ablations."""
    return """Compare module ablations:

1. Variants: full, wo_hed (linear split instead of experts), wo_mlcr (no reconstruction),
   rec1 / rec2 / rec3 (one reconstruction level), wo_mrf (uniform expert averaging)

2. Run the CLI: derl eval --protocol ablation --config run.ini --out ablation
   - Each variant is retrained from the same seed
   - ablation_intra.csv: intra-protocol averages per variant
   - ablation_inter.csv: neg-vs-pos F1 per modality subset plus the 6-subset average

3. Use derl_count_params with overrides (model.use_hed=false, model.recon_levels=, ...)
   to report model size next to each variant

4. Summarize: which module removal costs the most under heavy missingness
"""
