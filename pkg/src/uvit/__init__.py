"""Single-scale vision transformer with progressive attention windows.

Numeric core (float64 + reverse-mode autodiff), window-strategy tooling, the
encoder itself, architecture factories, analytic cost modeling, and
attention receptive-field analysis.
"""

from .analysis import (RRFSummary, layer_rf_summary, read_scores_csv,
                       relative_receptive_field, scores_to_records,
                       uniform_rrf, write_rf_long_csv, write_rf_summary_csv)
from .blocks import (BlockWeights, EmbedWeights, FeatureOutput, TokenGrid,
                     adapt_patch_kernel, adapt_pos_embedding, encoder_block,
                     forward, mhsa, patch_embed)
from .costs import (COST_CSV_COLUMNS, CostReport, OffsetFit, cost_row,
                    count_flops, count_params, fit_head_offset, write_cost_csv)
from .errors import (BindingError, ConfigError, ContractError, DimensionError,
                     DivisibilityError, NumericError, ParseError, UViTError)
from .estimator import UViTFeatureExtractor
from .factory import (ABLATION_GRID, PRESET_NAMES, SCALING_GRID, ArchConfig,
                      StageSpec, TransitionSpec, ablation_config,
                      ablation_grid_configs, config_from_dict, config_to_dict,
                      enumerate_scaling, init_weights, load_config,
                      override_input, preset, scaling_grid_configs)
from .tensor import (Tensor, backward, bilinear_resize, concat_cols, concat_rows,
                     gather, gelu, layernorm, matmul, reshape, slice_cols,
                     softmax_rows, take_rows, trace, transpose)
from .weights import WeightSet, validate_weights, weight_shapes
from .windows import (ALLOWED_SCALES, WindowLayout, WindowStrategy,
                      bind_strategy, format_strategy, parse_strategy,
                      plan_windows, window_merge, window_partition,
                      window_row_indices)

__version__ = "0.1.0"
