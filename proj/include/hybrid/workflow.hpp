#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "hybrid/forward_index.hpp"
#include "hybrid/letor.hpp"
#include "hybrid/model1.hpp"
#include "hybrid/pipeline.hpp"

namespace hybrid {

/// Reads a JSONL corpus and writes `<out_dir>/<field>.fwd` for every spec.
std::map<std::string, ForwardIndex> ingest_corpus(const std::filesystem::path &jsonl,
                                                  std::span<const FieldSpec> specs, bool keep_positions,
                                                  const std::filesystem::path &out_dir);

/// Model 1 training pairs: every judged-relevant document (or each of its
/// chunks of at most `chunk_len` tokens; 0 keeps it whole) is a source and
/// the query is the target.
std::vector<BitextPair> relevance_bitext(const ForwardIndex &field, std::span<const QueryEntry> queries,
                                         const Qrels &qrels, const std::string &query_field,
                                         std::size_t chunk_len);

/// Document tokens in order (sequence when stored, otherwise the bag
/// expanded in term-id order).
std::vector<std::string> document_tokens(const ForwardIndex &field, DocId doc);

struct TrainingData {
    std::vector<std::string> columns;
    std::vector<FeatureMatrix> features;
    std::vector<QueryGroup> groups;
};

/// Candidates from `provider` for each query, scored by `extractors`.
TrainingData collect_training_data(const CandidateProvider &provider, const CompositeExtractor &extractors,
                                   const ForwardIndex &docnos, std::span<const QueryEntry> queries,
                                   const Qrels &qrels, std::size_t cand_qty, unsigned threads = 1);

}  // namespace hybrid
