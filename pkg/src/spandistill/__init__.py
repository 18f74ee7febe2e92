"""spandistill: distill label-to-span information extraction from an LLM
into small sequence-labeling models.

The pipeline: synthesize a (label, span) dataset by prompting an LLM over
raw corpus sentences, encode it under a label-prefix + BIO scheme, train a
pluggable tagger on it, then few-shot fine-tune and evaluate on any of six
IE task families (NER, RE, EE, SRL, ABSA, ASTE).
"""

__version__ = "0.1.0"

from .codec import (
    ScoredSpan,
    TagDistribution,
    TaggedExample,
    align_tags,
    bi_sequence_score,
    decode_spans,
    decode_with_probs,
    encode_query,
    resolve_conflicts,
)
from .evaluate import EvalReport, evaluate_run, micro_f1
from .formats import convert_causal, convert_seq2seq, distill_to_training
from .llm import LLMClient, MockLLMClient, OpenAIChatClient
from .records import DistillRecord, LabelSpanPair, SourceSentence
from .synth import (
    align_span,
    build_prompt,
    label_stats,
    parse_llm_response,
    sample_sentences,
    split_conjunctions,
    subsample,
    synthesize,
)
from .tagger import HashedWindowTagger, LookupTagger, TrainConfig, fit_tagger
from .tasks import (
    AbsaSchema,
    AsteSchema,
    EeSchema,
    FewShotSpec,
    NerSchema,
    ReSchema,
    SrlSchema,
    TaskItem,
    TaskSchema,
    TaskTuple,
    fewshot_sample,
    predict_task,
    to_training_examples,
)

__all__ = [
    "__version__",
    "ScoredSpan",
    "TagDistribution",
    "TaggedExample",
    "align_tags",
    "bi_sequence_score",
    "decode_spans",
    "decode_with_probs",
    "encode_query",
    "resolve_conflicts",
    "EvalReport",
    "evaluate_run",
    "micro_f1",
    "convert_causal",
    "convert_seq2seq",
    "distill_to_training",
    "LLMClient",
    "MockLLMClient",
    "OpenAIChatClient",
    "DistillRecord",
    "LabelSpanPair",
    "SourceSentence",
    "align_span",
    "build_prompt",
    "label_stats",
    "parse_llm_response",
    "sample_sentences",
    "split_conjunctions",
    "subsample",
    "synthesize",
    "HashedWindowTagger",
    "LookupTagger",
    "TrainConfig",
    "fit_tagger",
    "AbsaSchema",
    "AsteSchema",
    "EeSchema",
    "FewShotSpec",
    "NerSchema",
    "ReSchema",
    "SrlSchema",
    "TaskItem",
    "TaskSchema",
    "TaskTuple",
    "fewshot_sample",
    "predict_task",
    "to_training_examples",
]
