#include "hybrid/model1.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <stdexcept>

#include "hybrid/binary_io.hpp"
#include "hybrid/forward_index.hpp"

namespace hybrid {

namespace {

constexpr std::uint32_t kModel1Version = 1;

}  // namespace

Model1Table::Model1Table()
{
    intern_source(std::string(kNullWord));
}

std::uint32_t Model1Table::intern_source(const std::string &w)
{
    auto [it, inserted] = source_lookup_.try_emplace(w, static_cast<std::uint32_t>(source_words_.size()));
    if (inserted) {
        source_words_.push_back(w);
        rows_.emplace_back();
    }
    return it->second;
}

std::uint32_t Model1Table::intern_target(const std::string &w)
{
    auto [it, inserted] = target_lookup_.try_emplace(w, static_cast<std::uint32_t>(target_words_.size()));
    if (inserted) {
        target_words_.push_back(w);
    }
    return it->second;
}

std::optional<std::uint32_t> Model1Table::source_id(std::string_view word) const
{
    auto it = source_lookup_.find(std::string(word));
    if (it == source_lookup_.end()) {
        return std::nullopt;
    }
    return it->second;
}

std::optional<std::uint32_t> Model1Table::target_id(std::string_view word) const
{
    auto it = target_lookup_.find(std::string(word));
    if (it == target_lookup_.end()) {
        return std::nullopt;
    }
    return it->second;
}

double Model1Table::prob(std::uint32_t target, std::uint32_t source) const
{
    if (source >= rows_.size()) {
        return 0.0;
    }
    const auto &row = rows_[source];
    auto it = std::lower_bound(row.begin(), row.end(), target,
                               [](const Entry &e, std::uint32_t t) { return e.target < t; });
    return it != row.end() && it->target == target ? it->prob : 0.0;
}

double Model1Table::prob(std::string_view target, std::string_view source) const
{
    auto t = target_id(target);
    auto s = source_id(source);
    return t && s ? prob(*t, *s) : 0.0;
}

double Model1Table::row_sum(std::uint32_t source) const
{
    double sum = 0.0;
    for (const auto &e : rows_.at(source)) {
        sum += e.prob;
    }
    return sum;
}

std::size_t Model1Table::entry_count() const
{
    std::size_t n = 0;
    for (const auto &row : rows_) {
        n += row.size();
    }
    return n;
}

void Model1Table::set_lambda(double lambda)
{
    if (!(lambda > 0.0 && lambda <= 1.0)) {
        throw std::invalid_argument("Model 1 smoothing weight must lie in (0, 1]");
    }
    lambda_ = lambda;
}

double Model1Table::collection_prob(std::string_view word) const
{
    auto it = collection_.find(std::string(word));
    if (it == collection_.end()) {
        return kMinCollectionProb;
    }
    return std::max(it->second, kMinCollectionProb);
}

void Model1Table::save(std::ostream &out) const
{
    BinaryWriter w(out);
    w.magic("MOD1");
    w.u32(kModel1Version);
    w.f64(lambda_);
    w.u64(source_words_.size());
    for (const auto &s : source_words_) {
        w.str(s);
    }
    w.u64(target_words_.size());
    for (const auto &t : target_words_) {
        w.str(t);
    }
    for (const auto &row : rows_) {
        w.u32(static_cast<std::uint32_t>(row.size()));
        for (const auto &e : row) {
            w.u32(e.target);
            w.f64(e.prob);
        }
    }
    // Sorted so the file bytes do not depend on hash-map iteration order.
    std::map<std::string, double> sorted(collection_.begin(), collection_.end());
    w.u64(sorted.size());
    for (const auto &[word, p] : sorted) {
        w.str(word);
        w.f64(p);
    }
    w.check();
}

Model1Table Model1Table::load(std::istream &in)
{
    BinaryReader r(in);
    r.expect_magic("MOD1", "Model 1 table");
    r.expect_version(kModel1Version, "Model 1 table");
    Model1Table table;
    table.set_lambda(r.f64());
    table.source_words_.clear();
    table.source_lookup_.clear();
    table.rows_.clear();
    auto ns = r.count(1ULL << 32, "source word");
    for (std::uint64_t i = 0; i < ns; ++i) {
        table.intern_source(r.str());
    }
    if (ns == 0 || table.source_words_[0] != kNullWord) {
        throw FormatError("Model 1 table: first source word must be the NULL word");
    }
    auto nt = r.count(1ULL << 32, "target word");
    for (std::uint64_t i = 0; i < nt; ++i) {
        table.intern_target(r.str());
    }
    for (auto &row : table.rows_) {
        auto len = r.u32();
        if (len > nt) {
            throw FormatError("Model 1 table: row longer than target vocabulary");
        }
        row.resize(len);
        for (auto &e : row) {
            e.target = r.u32();
            e.prob = r.f64();
            if (e.target >= nt) {
                throw FormatError("Model 1 table: target id out of range");
            }
        }
    }
    auto nc = r.count(1ULL << 32, "collection entry");
    for (std::uint64_t i = 0; i < nc; ++i) {
        auto word = r.str();
        table.collection_[word] = r.f64();
    }
    return table;
}

bool operator==(const Model1Table &a, const Model1Table &b)
{
    return a.source_words_ == b.source_words_ && a.target_words_ == b.target_words_ && a.rows_ == b.rows_ &&
           a.lambda_ == b.lambda_ && a.collection_ == b.collection_;
}

Model1Table model1_train(std::span<const BitextPair> bitext, const Model1Options &options, Model1Trace *trace)
{
    if (bitext.empty()) {
        throw std::invalid_argument("Model 1 training needs a nonempty bitext");
    }
    if (options.iterations < 0) {
        throw std::invalid_argument("iteration count must be nonnegative");
    }

    Model1Table table;
    struct Sentence {
        std::vector<std::uint32_t> source;  // includes NULL (id 0) first
        std::vector<std::uint32_t> target;
    };
    std::vector<Sentence> corpus;
    corpus.reserve(bitext.size());
    for (const auto &pair : bitext) {
        Sentence s;
        s.source.push_back(0);
        for (const auto &w : pair.source) {
            s.source.push_back(table.intern_source(w));
        }
        for (const auto &t : pair.target) {
            s.target.push_back(table.intern_target(t));
        }
        corpus.push_back(std::move(s));
    }

    // Uniform start over co-occurring targets keeps every row stochastic.
    using Entry = Model1Table::Entry;
    auto &rows = table.rows_;
    {
        std::vector<std::vector<std::uint32_t>> cooc(rows.size());
        for (const auto &s : corpus) {
            for (auto w : s.source) {
                cooc[w].insert(cooc[w].end(), s.target.begin(), s.target.end());
            }
        }
        for (std::size_t w = 0; w < rows.size(); ++w) {
            auto &c = cooc[w];
            std::sort(c.begin(), c.end());
            c.erase(std::unique(c.begin(), c.end()), c.end());
            rows[w].clear();
            for (auto t : c) {
                rows[w].push_back({t, 1.0 / static_cast<double>(c.size())});
            }
        }
    }

    auto slot = [&rows](std::uint32_t w, std::uint32_t t) -> std::size_t {
        const auto &row = rows[w];
        auto it = std::lower_bound(row.begin(), row.end(), t, [](const Entry &e, std::uint32_t x) { return e.target < x; });
        return static_cast<std::size_t>(it - row.begin());
    };

    // Precomputed row slots per (sentence, target position, source position).
    std::vector<std::vector<std::size_t>> slots(corpus.size());
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const auto &s = corpus[i];
        slots[i].reserve(s.target.size() * s.source.size());
        for (auto t : s.target) {
            for (auto w : s.source) {
                slots[i].push_back(slot(w, t));
            }
        }
    }

    auto e_step = [&](std::vector<std::vector<double>> *counts) {
        double ll = 0.0;
        for (std::size_t i = 0; i < corpus.size(); ++i) {
            const auto &s = corpus[i];
            const double src_len = static_cast<double>(s.source.size());
            std::size_t k = 0;
            for (std::size_t ti = 0; ti < s.target.size(); ++ti) {
                double z = 0.0;
                for (std::size_t si = 0; si < s.source.size(); ++si) {
                    z += rows[s.source[si]][slots[i][k + si]].prob;
                }
                ll += std::log(z / src_len);
                if (counts != nullptr) {
                    for (std::size_t si = 0; si < s.source.size(); ++si) {
                        auto w = s.source[si];
                        auto sl = slots[i][k + si];
                        (*counts)[w][sl] += rows[w][sl].prob / z;
                    }
                }
                k += s.source.size();
            }
        }
        return ll;
    };

    for (int it = 0; it < options.iterations; ++it) {
        std::vector<std::vector<double>> counts(rows.size());
        for (std::size_t w = 0; w < rows.size(); ++w) {
            counts[w].assign(rows[w].size(), 0.0);
        }
        double ll = e_step(&counts);
        double max_dev = 0.0;
        for (std::size_t w = 0; w < rows.size(); ++w) {
            double total = 0.0;
            for (double c : counts[w]) {
                total += c;
            }
            if (total <= 0.0) {
                continue;
            }
            double sum = 0.0;
            for (std::size_t j = 0; j < rows[w].size(); ++j) {
                rows[w][j].prob = counts[w][j] / total;
                sum += rows[w][j].prob;
            }
            max_dev = std::max(max_dev, std::abs(sum - 1.0));
        }
        if (trace != nullptr) {
            trace->log_likelihood.push_back(ll);
            trace->max_row_deviation.push_back(max_dev);
        }
    }
    if (trace != nullptr) {
        trace->log_likelihood.push_back(e_step(nullptr));
    }

    // Prune tiny entries and hand their mass back to the survivors.
    for (auto &row : rows) {
        if (row.empty()) {
            continue;
        }
        double best = 0.0;
        for (const auto &e : row) {
            best = std::max(best, e.prob);
        }
        double threshold = std::min(options.prune_threshold, best);
        std::erase_if(row, [threshold](const Entry &e) { return e.prob < threshold; });
        double sum = 0.0;
        for (const auto &e : row) {
            sum += e.prob;
        }
        for (auto &e : row) {
            e.prob /= sum;
        }
    }
    return table;
}

double model1_score_sources(std::span<const std::string> query,
                            std::span<const std::pair<std::uint32_t, double>> doc_sources, std::size_t doc_length,
                            const Model1Table &table)
{
    const double lambda = table.lambda();
    const double norm = 1.0 / (static_cast<double>(doc_length) + 1.0);
    double score = 0.0;
    for (const auto &q : query) {
        double trans = 0.0;
        if (auto t = table.target_id(q)) {
            trans = table.prob(*t, 0);
            for (const auto &[w, tf] : doc_sources) {
                trans += tf * table.prob(*t, w);
            }
        }
        score += std::log((1.0 - lambda) * norm * trans + lambda * table.collection_prob(q));
    }
    return score;
}

double model1_score(std::span<const std::string> query, std::span<const std::string> doc, const Model1Table &table)
{
    std::map<std::uint32_t, double> counts;
    for (const auto &w : doc) {
        if (auto id = table.source_id(w)) {
            counts[*id] += 1.0;
        }
    }
    std::vector<std::pair<std::uint32_t, double>> sources(counts.begin(), counts.end());
    return model1_score_sources(query, sources, doc.size(), table);
}

std::unordered_map<std::string, double> collection_model(const ForwardIndex &field)
{
    std::unordered_map<std::string, double> probs;
    if (field.total_tokens() == 0) {
        return probs;
    }
    const auto total = static_cast<double>(field.total_tokens());
    for (TermId t = 0; t < field.vocabulary_size(); ++t) {
        probs.emplace(field.term(t), static_cast<double>(field.collection_freq(t)) / total);
    }
    return probs;
}

std::vector<std::vector<std::string>> chunk_document(std::span<const std::string> tokens, std::size_t max_len)
{
    if (max_len == 0) {
        throw std::invalid_argument("chunk length must be at least 1");
    }
    std::vector<std::vector<std::string>> chunks;
    for (std::size_t i = 0; i < tokens.size(); i += max_len) {
        auto end = std::min(tokens.size(), i + max_len);
        chunks.emplace_back(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                            tokens.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return chunks;
}

}  // namespace hybrid
