#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hybrid/ann_index.hpp"
#include "hybrid/extractors.hpp"
#include "hybrid/inverted_index.hpp"
#include "hybrid/knn_export.hpp"
#include "hybrid/letor.hpp"

namespace hybrid {

enum class ProviderKind { InvertedBm25, KnnHnsw, KnnBruteForce };

std::string provider_name(ProviderKind kind);
ProviderKind provider_from_name(const std::string &name);

/// One experiment. Relative paths are resolved against the descriptor's
/// directory when loaded from a file.
struct ExperimentDescriptor {
    ProviderKind provider = ProviderKind::InvertedBm25;
    std::filesystem::path provider_config;  // candProvAddConfParam
    std::filesystem::path interm_extractors;  // extrTypeInterm
    std::filesystem::path interm_model;       // modelInterm
    std::filesystem::path final_extractors;   // extrType
    std::filesystem::path final_model;        // modelFinal
    std::filesystem::path forward_dir;        // fwdIndexDir
    std::size_t cand_qty = 100;
    std::size_t top_final = 150;
    bool test_only = false;
    std::string run_id = "run";
    std::string exper_subdir;

    /// Reads one descriptor object. Throws ConfigError on unknown providers,
    /// bad numbers or candQty < topFinal when both are given.
    static ExperimentDescriptor from_json(const nlohmann::json &j, const std::filesystem::path &base_dir);
    /// Accepts a single object or an array of objects (picks `index`).
    static ExperimentDescriptor load_file(const std::filesystem::path &path, std::size_t index = 0);
    [[nodiscard]] nlohmann::json to_json() const;
};

struct StageInfo {
    std::string name;
    std::size_t input = 0;
    std::size_t output = 0;
};

struct PipelineResult {
    std::string qid;
    std::vector<RankedDoc> docs;
    std::vector<StageInfo> stages;
};

struct Candidate {
    DocId doc;
    double score;
};

/// First pipeline stage. Candidates come back best first.
class CandidateProvider {
   public:
    virtual ~CandidateProvider() = default;
    [[nodiscard]] virtual std::string name() const = 0;
    [[nodiscard]] virtual std::vector<Candidate> candidates(const QueryEntry &query, std::size_t k) const = 0;
};

/// Exact BM25 over an inverted file. Provider configuration keys:
/// indexFieldName, queryFieldName, k1, b, indexFile (optional; built from
/// the forward index when absent).
class Bm25Provider final : public CandidateProvider {
   public:
    Bm25Provider(std::shared_ptr<const ForwardIndex> field, std::shared_ptr<const InvertedIndex> index,
                 std::string query_field, BM25Params params);

    [[nodiscard]] std::string name() const override { return "inverted-bm25"; }
    [[nodiscard]] std::vector<Candidate> candidates(const QueryEntry &query, std::size_t k) const override;

   private:
    std::shared_ptr<const ForwardIndex> field_;
    std::shared_ptr<const InvertedIndex> index_;
    std::string query_field_;
    BM25Params params_;
};

/// k-NN search over exported vectors. Provider configuration keys:
/// exportDir, weights (optional, per-field exports only), efSearch, M,
/// efConstruction, seed, hnswFile (optional prebuilt graph).
class KnnProvider final : public CandidateProvider {
   public:
    KnnProvider(ProviderKind kind, ExportData data, std::shared_ptr<const VectorExporter> query_side,
                std::size_t ef_search, const HnswParams &hnsw, const std::filesystem::path &hnsw_file = {});

    [[nodiscard]] std::string name() const override { return provider_name(kind_); }
    [[nodiscard]] std::vector<Candidate> candidates(const QueryEntry &query, std::size_t k) const override;
    [[nodiscard]] const ExportManifest &manifest() const { return manifest_; }
    [[nodiscard]] AnyVector query_vector(const QueryEntry &query) const;
    [[nodiscard]] std::vector<Candidate> search(const AnyVector &query, std::size_t k) const;
    [[nodiscard]] const Space &space() const { return exact_ ? exact_->space() : graph_->space(); }

   private:
    ProviderKind kind_;
    ExportManifest manifest_;
    std::shared_ptr<const VectorExporter> query_side_;
    std::optional<BruteForceIndex> exact_;
    std::optional<HnswIndex> graph_;
    std::size_t ef_search_;
};

/// A feature extractor set plus the linear model that fuses it.
struct Reranker {
    std::shared_ptr<const CompositeExtractor> extractors;
    LinearModel model;
};

/// Candidate generation followed by optional intermediate and final
/// re-rankers. Everything is loaded at construction; run() is const and
/// may be called concurrently.
class Pipeline {
   public:
    explicit Pipeline(const ExperimentDescriptor &descriptor);
    Pipeline(std::shared_ptr<const ForwardStore> forward, std::string docno_field,
             std::shared_ptr<const CandidateProvider> provider, std::optional<Reranker> interm,
             std::optional<Reranker> final_stage, std::size_t cand_qty, std::size_t top_final, std::string run_id);

    [[nodiscard]] PipelineResult run(const QueryEntry &query) const;
    [[nodiscard]] PipelineResult run(const QueryEntry &query, std::size_t cand_qty) const;
    /// Results in input order; `threads` > 1 splits queries across workers.
    [[nodiscard]] std::vector<PipelineResult> run_all(std::span<const QueryEntry> queries,
                                                      unsigned threads = 1) const;
    /// Queries ordered by query id.
    [[nodiscard]] RunOutput to_run(std::span<const PipelineResult> results) const;

    [[nodiscard]] const CandidateProvider &provider() const { return *provider_; }
    [[nodiscard]] const std::optional<Reranker> &interm_stage() const { return interm_; }
    [[nodiscard]] const std::optional<Reranker> &final_stage() const { return final_; }
    [[nodiscard]] const ForwardIndex &docnos() const { return *docnos_; }
    [[nodiscard]] std::shared_ptr<const ForwardStore> forward() const { return forward_; }
    [[nodiscard]] const std::string &run_id() const { return run_id_; }
    [[nodiscard]] std::size_t cand_qty() const { return cand_qty_; }
    [[nodiscard]] std::size_t top_final() const { return top_final_; }

   private:
    Pipeline(std::shared_ptr<const ForwardStore> forward, const ExperimentDescriptor &descriptor);

    std::shared_ptr<const ForwardStore> forward_;
    std::shared_ptr<const ForwardIndex> docnos_;
    std::shared_ptr<const CandidateProvider> provider_;
    std::optional<Reranker> interm_;
    std::optional<Reranker> final_;
    std::size_t cand_qty_;
    std::size_t top_final_;
    std::string run_id_;
};

/// Reads a provider configuration file and instantiates the provider.
std::shared_ptr<const CandidateProvider> make_provider(ProviderKind kind, const std::filesystem::path &config,
                                                       std::shared_ptr<const ForwardStore> forward,
                                                       std::string *docno_field = nullptr);

Reranker load_reranker(const std::filesystem::path &extractors, const std::filesystem::path &model,
                       std::shared_ptr<const ForwardStore> forward);

}  // namespace hybrid
