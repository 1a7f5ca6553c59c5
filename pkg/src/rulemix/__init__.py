"""rulemix: a grey-box tabular classifier.

A learned two-way gate mixes a black-box softmax model with an abstaining
rule expert whose rules are discovered as local anchor surrogates and
refined through a validated reviewer protocol (offline stub or remote LLM).
The gate trains under a task-loss constraint via dynamic-barrier gradient
descent, so interpretable rules are used as much as possible without giving
up predictive performance.
"""

from .anchors import AnchorConfig, BinTable, find_anchor, make_bins
from .bundle import ModelBundle, load_bundle, save_bundle
from .config import ConfigError, RunConfig, load_run_config
from .data import (
    Dataset,
    FeatureSchema,
    FeatureSpec,
    Standardizer,
    encode,
    fit_standardizer,
    load_csv,
    load_schema,
    save_csv,
    save_schema,
    split,
)
from .discovery import DiscoveryConfig, RunState, run, select_candidates
from .mixture import (
    BaselineSnapshot,
    DbgdConfig,
    MixtureModel,
    SgdConfig,
    dbgd_epoch,
    init_train,
    mixture_predict,
)
from .models import DiffClassifier, ce_loss, grad_params, predictive_entropy, sgd_step
from .refiner import (
    LlmClientConfig,
    RefinementUnavailableError,
    RemoteChatClient,
    StubChatClient,
    refine,
)
from .rules import Predicate, Rule, RuleSet, canonical_text, coverage, dedup, parse_rule, usage

__version__ = "0.1.0"
