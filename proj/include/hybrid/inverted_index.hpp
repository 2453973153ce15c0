#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "hybrid/ann_index.hpp"
#include "hybrid/vectors.hpp"

namespace hybrid {

struct Posting {
    DocId doc;
    float weight;

    friend bool operator==(const Posting &, const Posting &) = default;
};

struct BM25Params {
    double k1 = 1.2;
    double b = 0.75;

    /// Throws std::invalid_argument unless k1 >= 0 and 0 <= b <= 1.
    void validate() const;
};

/// A query term with its in-query frequency.
struct TermCount {
    TermId term;
    std::uint32_t count;

    friend bool operator==(const TermCount &, const TermCount &) = default;
};

/// ln(1 + (N - df + 0.5) / (df + 0.5)); never negative.
double bm25_idf(std::uint64_t doc_count, std::uint64_t doc_freq);
/// tf (k1 + 1) / (tf + k1 (1 - b + b dl / avgdl)).
double bm25_tf_norm(double tf, double doc_length, double avg_doc_length, const BM25Params &params);

/// Which quantity the postings carry. Both share one layout.
enum class PostingFlavor : std::uint8_t {
    Weights = 1,          // raw sparse-vector values, for exact inner-product search
    TermFrequencies = 2,  // raw term counts, for BM25
};

/// Uncompressed term-level inverted file with document-at-a-time traversal.
class InvertedIndex {
   public:
    InvertedIndex() = default;

    /// Postings carry vector values verbatim. Document length is the
    /// number of nonzeros.
    static InvertedIndex build_from_sparse(std::span<const SparseVector> docs);
    /// Postings carry term counts; document length is the sum of counts.
    static InvertedIndex build_from_counts(std::span<const std::vector<TermCount>> docs);

    [[nodiscard]] PostingFlavor flavor() const { return flavor_; }
    [[nodiscard]] std::size_t doc_count() const { return doc_lengths_.size(); }
    [[nodiscard]] std::size_t term_space() const { return postings_.size(); }
    [[nodiscard]] double avg_doc_length() const { return avg_doc_length_; }
    [[nodiscard]] double doc_length(DocId doc) const { return doc_lengths_.at(doc); }
    [[nodiscard]] std::size_t doc_freq(TermId term) const
    {
        return term < postings_.size() ? postings_[term].size() : 0;
    }
    [[nodiscard]] std::span<const Posting> postings(TermId term) const
    {
        if (term >= postings_.size()) {
            return {};
        }
        return postings_[term];
    }

    /// Rebuilds one document's vector from the postings.
    [[nodiscard]] SparseVector reconstruct(DocId doc) const;

    /// Exact top-k inner product over documents sharing at least one term
    /// with `q`. Ties go to the lower document id.
    [[nodiscard]] std::vector<SearchHit> daat_mips(const SparseVector &q, std::size_t k) const;

    [[nodiscard]] double bm25_score(std::span<const TermCount> query, DocId doc, const BM25Params &params) const;
    /// Exact top-k BM25 over documents containing at least one query term.
    [[nodiscard]] std::vector<SearchHit> bm25_retrieve(std::span<const TermCount> query, std::size_t k,
                                                       const BM25Params &params) const;

    void save(std::ostream &out) const;
    static InvertedIndex load(std::istream &in);

    friend bool operator==(const InvertedIndex &, const InvertedIndex &) = default;

   private:
    void finish_stats();

    PostingFlavor flavor_ = PostingFlavor::Weights;
    std::vector<std::vector<Posting>> postings_;
    std::vector<double> doc_lengths_;
    double avg_doc_length_ = 0.0;
};

/// Merges duplicate term ids and sorts by term id.
std::vector<TermCount> normalize_query(std::vector<TermCount> terms);

}  // namespace hybrid
