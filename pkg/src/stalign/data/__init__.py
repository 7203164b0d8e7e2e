from .assembly import ExclusionError, assemble_video, assembled_length
from .corpus_io import CorpusFormatError, load_corpus, read_index, save_corpus
from .manifest import DataError, Series, StudyManifest, ViewSpec
from .sampling import SamplingPlan, inference_plan, segment_bounds, tsn_sample
from .split import hash_split
from .synthetic import gen_synthetic_corpus

__all__ = [
    "ExclusionError", "assemble_video", "assembled_length", "CorpusFormatError", "load_corpus",
    "read_index", "save_corpus", "DataError", "Series", "StudyManifest", "ViewSpec",
    "SamplingPlan", "inference_plan", "segment_bounds", "tsn_sample", "hash_split",
    "gen_synthetic_corpus",
]
