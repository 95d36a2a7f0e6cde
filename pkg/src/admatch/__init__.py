"""admatch: train deployable dual-encoder ad matching models from graded
relevance labels and weakly annotated search-log data."""

from .annotate import (
    MAIN_TASK_AC,
    MAIN_TASK_LP,
    ScoredSample,
    TaskBinarization,
    binarize,
    score_dataset,
)
from .corpus import (
    AdListing,
    CorpusSpec,
    GradedLabel,
    LabeledSample,
    UnlabeledPair,
    generate_corpus,
    load_dataset,
    save_dataset,
    split_labeled,
    subsample,
)
from .distill import (
    FinetuneConfig,
    MappingConfig,
    finetune,
    label_aware_weight,
    map_target,
    map_weight,
    train_student,
)
from .featurize import FeaturizeConfig, TrigramVocab, featurize_fields, hash_word, lexical_features, tokenize
from .gbdt import GbdtConfig, GbdtModel, train_gbdt
from .metrics import MetricsReport, SweepResult, pr_auc, roc_auc
from .models import CdssmConfig, CdssmModel, DeepCrossingConfig, DeepCrossingModel, TaskSet
from .retrieval import VectorDictionary, build_dictionary, top_k

__version__ = "0.1.0"
