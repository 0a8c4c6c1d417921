"""Adaptive MCMC with per-sampler tuning and online sampler selection.

The package splits into a model layer (graph, state), a sampler layer
(samplers, blocking), measurement (diagnostics), the two-level adaptation
engine (engine), and a benchmark harness with a CLI (benchmarks, cli).
"""

from .blocking import (BLOCK_CAP, HEIGHT_GRID, BlockingError, Dendrogram,
                       block_containing, cap_block, distance_matrix,
                       hclust_complete)
from .benchmarks import (ALGO_NAMES, DESK_SIZE, MODEL_NAMES, ArmResult,
                         ComparisonResults, ComparisonTable, ExperimentConfig,
                         boxplot_csv, build_baseline_kernel, build_glmm,
                         build_litters, build_model, build_spatial,
                         resolve_workers, run_comparison, time_to_effective)
from .diagnostics import (ChainTrace, DegenerateChainError, DiagnosticsError,
                          EfficiencyReport, InsufficientDataError,
                          correlation_matrix, efficiency_report, ess, iact,
                          trace_from_csv, trace_to_csv)
from .engine import (AdaptSchedule, AutoAdaptResult, ClockState, EngineConfig,
                     KernelComposition, KernelError, OuterRecord,
                     SamplerArchive, all_scalar_structure, build_kernel,
                     initial_scalar_kernel, propose_kernel, run_auto_adapt,
                     run_segment, validate_kernel)
from .graph import (ExpCov, GraphError, ModelGraph, build_graph, data,
                    det, detect_conjugacy, log_density_conditional,
                    log_density_full, loglin, node, parse_model,
                    parse_model_file, ref)
from .samplers import (ALL_KINDS, BLOCK_KINDS, SCALAR_KINDS,
                       SamplerAssignment, SamplerError, SamplerState,
                       default_state, factor_rotation, sampler_adapt,
                       sampler_step, states_equal)
from .state import ModelState

__version__ = "0.1.0"
