#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace hybrid {

class ForwardIndex;

/// One aligned training pair. Target words are generated from source
/// words: the table stores T(target | source).
struct BitextPair {
    std::vector<std::string> source;
    std::vector<std::string> target;
};

struct Model1Options {
    int iterations = 20;
    double prune_threshold = 1e-6;
};

/// Per-iteration diagnostics. `log_likelihood[i]` is the corpus
/// log-likelihood under the table before update i; the last entry is for
/// the final (unpruned) table. `max_row_deviation[i]` is the largest
/// |sum_t T(t|w) - 1| right after update i.
struct Model1Trace {
    std::vector<double> log_likelihood;
    std::vector<double> max_row_deviation;
};

/// IBM Model 1 lexical translation table with a NULL source word, plus the
/// smoothing weight and collection unigram model used for scoring.
class Model1Table {
   public:
    static constexpr std::string_view kNullWord = "<NULL>";
    static constexpr double kMinCollectionProb = 1e-9;

    Model1Table();

    [[nodiscard]] std::optional<std::uint32_t> source_id(std::string_view word) const;
    [[nodiscard]] std::optional<std::uint32_t> target_id(std::string_view word) const;
    [[nodiscard]] std::size_t source_vocab_size() const { return source_words_.size(); }
    [[nodiscard]] std::size_t target_vocab_size() const { return target_words_.size(); }
    [[nodiscard]] const std::string &source_word(std::uint32_t id) const { return source_words_.at(id); }
    [[nodiscard]] const std::string &target_word(std::uint32_t id) const { return target_words_.at(id); }

    /// T(target | source) by id; 0 for pairs not stored.
    [[nodiscard]] double prob(std::uint32_t target, std::uint32_t source) const;
    /// T(target | source) by word; 0 for unknown words.
    [[nodiscard]] double prob(std::string_view target, std::string_view source) const;
    [[nodiscard]] double row_sum(std::uint32_t source) const;
    [[nodiscard]] std::size_t entry_count() const;

    [[nodiscard]] double lambda() const { return lambda_; }
    void set_lambda(double lambda);

    /// P_c(word), floored at kMinCollectionProb.
    [[nodiscard]] double collection_prob(std::string_view word) const;
    [[nodiscard]] bool has_collection_model() const { return !collection_.empty(); }
    void set_collection_model(std::unordered_map<std::string, double> probs) { collection_ = std::move(probs); }

    void save(std::ostream &out) const;
    static Model1Table load(std::istream &in);

    friend Model1Table model1_train(std::span<const BitextPair>, const Model1Options &, Model1Trace *);
    friend bool operator==(const Model1Table &a, const Model1Table &b);

   private:
    struct Entry {
        std::uint32_t target;
        double prob;

        friend bool operator==(const Entry &, const Entry &) = default;
    };

    std::uint32_t intern_source(const std::string &w);
    std::uint32_t intern_target(const std::string &w);

    std::vector<std::string> source_words_;
    std::unordered_map<std::string, std::uint32_t> source_lookup_;
    std::vector<std::string> target_words_;
    std::unordered_map<std::string, std::uint32_t> target_lookup_;
    // rows_[source] sorted by target id
    std::vector<std::vector<Entry>> rows_;
    double lambda_ = 0.1;
    std::unordered_map<std::string, double> collection_;
};

/// Standard Model 1 EM. Throws std::invalid_argument on an empty bitext.
Model1Table model1_train(std::span<const BitextPair> bitext, const Model1Options &options = {},
                         Model1Trace *trace = nullptr);

/// Sum over query words q of
///   ln[(1 - lambda) (sum_{w in doc} T(q|w) + T(q|NULL)) / (|doc| + 1) + lambda P_c(q)].
double model1_score(std::span<const std::string> query, std::span<const std::string> doc, const Model1Table &table);

/// Same score with the document given as (source id, count) pairs sorted
/// by source id; `doc_length` counts every document token, including
/// those unknown to the table.
double model1_score_sources(std::span<const std::string> query,
                            std::span<const std::pair<std::uint32_t, double>> doc_sources, std::size_t doc_length,
                            const Model1Table &table);

/// Unigram model cf(t) / total tokens over a parsed field.
std::unordered_map<std::string, double> collection_model(const ForwardIndex &field);

/// Consecutive non-overlapping chunks of at most `max_len` tokens.
std::vector<std::vector<std::string>> chunk_document(std::span<const std::string> tokens, std::size_t max_len);

}  // namespace hybrid
