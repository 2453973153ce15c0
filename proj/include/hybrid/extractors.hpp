#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "hybrid/embeddings.hpp"
#include "hybrid/forward_index.hpp"
#include "hybrid/model1.hpp"

namespace hybrid {

/// Bad or inconsistent configuration (unknown extractor type, missing
/// field, missing positions, unreadable referenced file).
class ConfigError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

/// Loads forward indices on first use from `<dir>/<field>.fwd`, or serves
/// indices registered in memory. Returned indices are immutable.
class ForwardStore {
   public:
    ForwardStore() = default;
    explicit ForwardStore(std::filesystem::path dir) : dir_(std::move(dir)) {}

    void add(ForwardIndex index);
    [[nodiscard]] std::shared_ptr<const ForwardIndex> get(const std::string &field) const;

   private:
    std::filesystem::path dir_;
    mutable std::mutex mu_;
    mutable std::map<std::string, std::shared_ptr<const ForwardIndex>> cache_;
};

/// Per-query feature rows for a candidate list, one column per feature.
struct FeatureMatrix {
    std::string query_id;
    std::vector<std::string> columns;
    std::vector<DocId> docs;
    std::vector<std::string> docnos;
    std::vector<std::vector<double>> rows;
    /// Rows where some extractor fell back to its missing-data value.
    std::vector<bool> flagged;
};

/// A scoring module that turns (query, document) into feature values.
class FeatureExtractor {
   public:
    virtual ~FeatureExtractor() = default;

    [[nodiscard]] virtual std::vector<std::string> feature_names() const = 0;
    /// One row per candidate, each with feature_names().size() values.
    /// `flagged` (when given) is OR-ed with per-row fallback markers.
    [[nodiscard]] virtual std::vector<std::vector<double>> score(const QueryEntry &query, std::span<const DocId> docs,
                                                                 std::vector<bool> *flagged = nullptr) const = 0;
};

/// Extractors whose score is exactly the inner product of a query vector
/// and a document vector.
class InnerProductExtractor : public FeatureExtractor {
   public:
    [[nodiscard]] virtual FieldVector query_vector(const QueryEntry &query) const = 0;
    [[nodiscard]] virtual FieldVector doc_vector(DocId doc) const = 0;
    [[nodiscard]] virtual bool sparse() const = 0;
    /// Term-id space size (sparse) or dimension (dense).
    [[nodiscard]] virtual std::size_t vector_space() const = 0;
    /// False when the configured feature is not the inner product (for
    /// example an averaged embedding compared by L2 distance).
    [[nodiscard]] virtual bool inner_product_equivalent() const { return true; }
};

class Bm25Extractor final : public InnerProductExtractor {
   public:
    Bm25Extractor(std::shared_ptr<const ForwardIndex> field, std::string query_field, BM25Params params);

    [[nodiscard]] std::vector<std::string> feature_names() const override;
    [[nodiscard]] std::vector<std::vector<double>> score(const QueryEntry &query, std::span<const DocId> docs,
                                                         std::vector<bool> *flagged) const override;
    [[nodiscard]] FieldVector query_vector(const QueryEntry &query) const override;
    [[nodiscard]] FieldVector doc_vector(DocId doc) const override;
    [[nodiscard]] bool sparse() const override { return true; }
    [[nodiscard]] std::size_t vector_space() const override { return field_->vocabulary_size(); }

    [[nodiscard]] double score_one(std::span<const TermCount> query, DocId doc) const;
    [[nodiscard]] std::vector<TermCount> query_terms(const QueryEntry &query) const;
    [[nodiscard]] const BM25Params &params() const { return params_; }

   private:
    std::shared_ptr<const ForwardIndex> field_;
    std::string query_field_;
    BM25Params params_;
};

struct ProximityParams {
    std::uint32_t window = 8;
    BM25Params bm25;
};

/// How often a query-term pair co-occurs in one document's term sequence.
struct PairOccurrences {
    std::uint32_t ordered = 0;    // positions of `first` with `second` within (p, p+W]
    std::uint32_t unordered = 0;  // positions of `first` with `second` within [p-W, p+W], p excluded
};

PairOccurrences count_pair_occurrences(std::span<const TermId> sequence, TermId first, TermId second,
                                       std::uint32_t window);

/// BM25 over ordered and unordered query-term pairs treated as pseudo
/// terms. Pair document frequencies are computed on demand over the whole
/// collection and cached.
class ProximityExtractor final : public FeatureExtractor {
   public:
    ProximityExtractor(std::shared_ptr<const ForwardIndex> field, std::string query_field, ProximityParams params);

    [[nodiscard]] std::vector<std::string> feature_names() const override;
    [[nodiscard]] std::vector<std::vector<double>> score(const QueryEntry &query, std::span<const DocId> docs,
                                                         std::vector<bool> *flagged) const override;

    /// Distinct in-vocabulary query terms in query order.
    [[nodiscard]] std::vector<TermId> query_terms(const QueryEntry &query) const;
    [[nodiscard]] double score_one(std::span<const TermId> query_terms, DocId doc) const;

   private:
    struct PairDf {
        std::uint32_t ordered;
        std::uint32_t unordered;
    };
    [[nodiscard]] PairDf pair_doc_freq(TermId a, TermId b) const;

    std::shared_ptr<const ForwardIndex> field_;
    std::string query_field_;
    ProximityParams params_;
    std::vector<std::vector<DocId>> term_docs_;
    mutable std::mutex cache_mu_;
    mutable std::unordered_map<std::uint64_t, PairDf> pair_cache_;
};

class Model1Extractor final : public FeatureExtractor {
   public:
    Model1Extractor(std::shared_ptr<const ForwardIndex> field, std::string query_field,
                    std::shared_ptr<const Model1Table> table);

    [[nodiscard]] std::vector<std::string> feature_names() const override;
    [[nodiscard]] std::vector<std::vector<double>> score(const QueryEntry &query, std::span<const DocId> docs,
                                                         std::vector<bool> *flagged) const override;

   private:
    std::shared_ptr<const ForwardIndex> field_;
    std::string query_field_;
    std::shared_ptr<const Model1Table> table_;
    // forward-index term id -> table source id (or -1)
    std::vector<std::int64_t> source_of_term_;
};

class AvgEmbedExtractor final : public InnerProductExtractor {
   public:
    AvgEmbedExtractor(std::shared_ptr<const ForwardIndex> field, std::string query_field,
                      std::shared_ptr<const EmbeddingTable> query_table,
                      std::shared_ptr<const EmbeddingTable> doc_table, AvgEmbedParams params);

    [[nodiscard]] std::vector<std::string> feature_names() const override;
    [[nodiscard]] std::vector<std::vector<double>> score(const QueryEntry &query, std::span<const DocId> docs,
                                                         std::vector<bool> *flagged) const override;
    /// Unit-length weighted centroids; zero vector when nothing is in
    /// vocabulary.
    [[nodiscard]] FieldVector query_vector(const QueryEntry &query) const override;
    [[nodiscard]] FieldVector doc_vector(DocId doc) const override;
    [[nodiscard]] bool sparse() const override { return false; }
    [[nodiscard]] std::size_t vector_space() const override { return doc_table_->dim(); }
    [[nodiscard]] bool inner_product_equivalent() const override
    {
        return params_.dist_type == EmbedDistance::Cosine;
    }

   private:
    [[nodiscard]] std::vector<std::string> doc_tokens(DocId doc) const;

    std::shared_ptr<const ForwardIndex> field_;
    std::string query_field_;
    std::shared_ptr<const EmbeddingTable> query_table_;
    std::shared_ptr<const EmbeddingTable> doc_table_;
    AvgEmbedParams params_;
    IdfLookup idf_;
};

/// One entry of a scoring configuration: {"type": ..., "params": {...}}.
struct ExtractorConfig {
    std::string type;
    nlohmann::json params;
};

/// Accepts {"extractors": [...]} or a bare array.
std::vector<ExtractorConfig> parse_extractor_configs(const nlohmann::json &doc);
std::vector<ExtractorConfig> load_extractor_configs(const std::filesystem::path &path);

/// Parameter readers tolerant of string-encoded numbers and booleans
/// ("1.2", "True").
double param_double(const nlohmann::json &params, const std::string &key, double fallback);
bool param_bool(const nlohmann::json &params, const std::string &key, bool fallback);
std::string param_string(const nlohmann::json &params, const std::string &key, const std::string &fallback);
std::string param_required(const nlohmann::json &params, const std::string &key);

/// Files referenced by configurations are resolved against `base_dir`.
struct ExtractorResources {
    std::shared_ptr<const ForwardStore> forward;
    std::filesystem::path base_dir;
};

/// Instantiates one extractor. Types: bm25 (also TFIDFSimilarity with
/// similType bm25), proximity, model1, avgWordEmbed.
std::unique_ptr<FeatureExtractor> make_extractor(const ExtractorConfig &config, const ExtractorResources &res);

/// Holds one extractor instance per configuration entry and concatenates
/// their columns in configuration order.
class CompositeExtractor {
   public:
    CompositeExtractor(std::span<const ExtractorConfig> configs, const ExtractorResources &res);
    explicit CompositeExtractor(std::vector<std::unique_ptr<FeatureExtractor>> extractors);

    [[nodiscard]] const std::vector<std::string> &columns() const { return columns_; }
    [[nodiscard]] std::size_t size() const { return extractors_.size(); }
    [[nodiscard]] const FeatureExtractor &at(std::size_t i) const { return *extractors_.at(i); }

    [[nodiscard]] FeatureMatrix extract(const QueryEntry &query, std::span<const DocId> docs,
                                        const ForwardIndex &docnos) const;

   private:
    void collect_columns();

    std::vector<std::unique_ptr<FeatureExtractor>> extractors_;
    std::vector<std::string> columns_;
};

}  // namespace hybrid
