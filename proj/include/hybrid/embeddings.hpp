#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "hybrid/vectors.hpp"

namespace hybrid {

class ForwardIndex;

/// Word embeddings. Text format: first line "count dim", then one token
/// followed by dim reals per line.
class EmbeddingTable {
   public:
    EmbeddingTable() = default;
    explicit EmbeddingTable(std::size_t dim) : dim_(dim) {}

    void add(std::string token, DenseVector v);
    [[nodiscard]] const DenseVector *find(std::string_view token) const;
    [[nodiscard]] std::size_t dim() const { return dim_; }
    [[nodiscard]] std::size_t size() const { return table_.size(); }

    static EmbeddingTable load_text(std::istream &in);
    static EmbeddingTable load_text_file(const std::filesystem::path &path);
    /// Tokens written in lexicographic order.
    void save_text(std::ostream &out) const;

   private:
    std::size_t dim_ = 0;
    std::unordered_map<std::string, DenseVector> table_;
};

/// Document-side IDF lookup, ln(1 + (N - df + 0.5)/(df + 0.5)); tokens
/// missing from the field get df = 0.
class IdfLookup {
   public:
    explicit IdfLookup(const ForwardIndex &field) : field_(&field) {}
    [[nodiscard]] double operator()(std::string_view token) const;

   private:
    const ForwardIndex *field_;
};

enum class EmbedDistance { L2, Cosine };

struct AvgEmbedParams {
    bool use_idf_weight = true;
    bool use_l2_norm = true;
    EmbedDistance dist_type = EmbedDistance::L2;
};

/// Returned for an L2 comparison when a side has no in-vocabulary token.
inline constexpr double kMissingEmbedL2 = 1e6;

struct AvgEmbedValue {
    double value = 0.0;
    bool flagged = false;  // a side had no in-vocabulary token
};

/// Sum over distinct tokens of tf * idf * embedding (idf factor 1 when
/// `use_idf` is off). `in_vocab` reports whether any token was found.
DenseVector weighted_centroid(std::span<const std::string> tokens, const EmbeddingTable &table,
                              const IdfLookup *idf, bool *in_vocab = nullptr);

/// Averaged-embedding feature: centroids per side, optionally
/// L2-normalized, compared by L2 distance or cosine similarity.
AvgEmbedValue avg_embed_feature(std::span<const std::string> query, std::span<const std::string> doc,
                                const EmbeddingTable &query_table, const EmbeddingTable &doc_table,
                                const IdfLookup &idf, const AvgEmbedParams &params);

}  // namespace hybrid
