"""Concept bottleneck models with a learnable differentiable logic layer."""

from .analysis import (
    AlignmentReport,
    CcgReport,
    ClassFormula,
    GateHistogram,
    SuccessRatioReport,
    ccg,
    concept_alignment,
    concept_alignment_for,
    extract_formulas,
    gate_distribution,
    intervene,
    intervention_success_ratio,
    misleading_unit,
    neuron_formulas,
)
from .datasets import (
    ConceptDataset,
    LogicClassSpec,
    gen_clevr_logic,
    gen_truth_table,
    load_csv,
    save_csv,
)
from .formulas import (
    Binary,
    ConceptRef,
    FormulaAst,
    Not,
    format_formula,
    formula_equivalent,
    formula_eval,
    parse_formula,
    parse_rules_file,
    pretty_formula,
)
from .gates import (
    GateDescriptor,
    GateSubset,
    gate_eval,
    gate_grad,
    gate_subset,
    gate_table,
)
from .logic import (
    CpMatrix,
    GateMixture,
    LayerCache,
    LogicLayer,
    PairingPlan,
    harden,
    init_mixture,
    layer_backward,
    layer_forward,
    pair_correlated,
    pair_from_cp,
    pair_random,
    stack_forward,
)
from .model import (
    ClassHead,
    DualHeadModel,
    Encoder,
    EncoderSpec,
    LogicCbmModel,
    VanillaCbmModel,
    build_dual_head,
    build_logic_cbm,
    build_vanilla_cbm,
    checkpoint_load,
    checkpoint_save,
    make_random_plans,
)
from .training import (
    EvalResult,
    TrainConfig,
    TrainReport,
    evaluate,
    loss_finetune,
    loss_total,
    train,
)

__version__ = "0.1.0"
