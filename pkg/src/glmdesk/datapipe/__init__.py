from .documents import Document, read_documents, write_documents
from .filtering import FilterRules, Verdict, filter_corpus, rule_filter
from .lsh import DedupResult, lsh_dedup
from .minhash import MinHashSignature, minhash_signature, shingle, true_jaccard

__all__ = [
    "DedupResult",
    "Document",
    "FilterRules",
    "MinHashSignature",
    "Verdict",
    "filter_corpus",
    "lsh_dedup",
    "minhash_signature",
    "read_documents",
    "rule_filter",
    "shingle",
    "true_jaccard",
    "write_documents",
]
