"""Drug pair scoring on numpy.

Featurize drugs from SMILES, house drug/context features and labeled
``(drug, drug', context, label)`` triples, batch them, and train one of five
pair scoring networks with a small built-in autodiff core.
"""

from .batch import BatchGenerator, DrugPairBatch, PackedGraph, make_generator, pack_graphs
from .dataset import (
    ContextFeatureSet,
    DrugFeatureSet,
    LabeledTriples,
    load_context_set,
    load_drug_set,
    load_triples,
    sample_negatives,
    train_test_split,
)
from .metrics import MetricsReport, aupr, auroc, f1, metrics_report
from .models import MODEL_NAMES, PairScorer, Prediction, build_model, load_model
from .molio import MolecularGraph, atom_features, bond_features, morgan_fingerprint, parse_smiles
from .neuro import OptimizerConfig
from .pipeline import (
    benchmark_epoch,
    calibrate_inference,
    evaluate_protocol,
    generator_for,
    predict,
    project_inference,
    train,
)

__version__ = "0.1.0"
