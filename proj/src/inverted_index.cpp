#include "hybrid/inverted_index.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <queue>
#include <stdexcept>

#include "hybrid/binary_io.hpp"

namespace hybrid {

namespace {

constexpr std::uint32_t kInvertedVersion = 1;

struct Cursor {
    std::span<const Posting> list;
    std::size_t pos = 0;
    double query_weight = 0.0;

    [[nodiscard]] bool done() const { return pos >= list.size(); }
    [[nodiscard]] DocId doc() const { return list[pos].doc; }
};

// Keeps the k best hits (higher score first, lower id on ties).
class TopK {
   public:
    explicit TopK(std::size_t k) : k_(k) {}

    void offer(DocId doc, double score)
    {
        SearchHit h{doc, score};
        if (heap_.size() < k_) {
            heap_.push(h);
        } else if (ahead(h, heap_.top())) {
            heap_.pop();
            heap_.push(h);
        }
    }

    std::vector<SearchHit> take()
    {
        std::vector<SearchHit> out;
        out.reserve(heap_.size());
        while (!heap_.empty()) {
            out.push_back(heap_.top());
            heap_.pop();
        }
        std::reverse(out.begin(), out.end());
        return out;
    }

   private:
    static bool ahead(const SearchHit &a, const SearchHit &b)
    {
        return a.score != b.score ? a.score > b.score : a.id < b.id;
    }
    struct Worse {
        bool operator()(const SearchHit &a, const SearchHit &b) const { return ahead(a, b); }
    };

    std::size_t k_;
    std::priority_queue<SearchHit, std::vector<SearchHit>, Worse> heap_;
};

// Document-at-a-time: every cursor advances in doc order and each document
// is fully scored before moving on.
template <typename Contribution>
std::vector<SearchHit> daat_top_k(std::vector<Cursor> cursors, std::size_t k, Contribution &&contribution)
{
    if (k == 0) {
        throw std::invalid_argument("k must be at least 1");
    }
    TopK top(k);
    std::erase_if(cursors, [](const Cursor &c) { return c.list.empty(); });
    while (true) {
        DocId current = std::numeric_limits<DocId>::max();
        bool any = false;
        for (const auto &c : cursors) {
            if (!c.done()) {
                current = std::min(current, c.doc());
                any = true;
            }
        }
        if (!any) {
            break;
        }
        double score = 0.0;
        for (auto &c : cursors) {
            if (!c.done() && c.doc() == current) {
                score += contribution(c, c.list[c.pos]);
                ++c.pos;
            }
        }
        top.offer(current, score);
    }
    return top.take();
}

}  // namespace

void BM25Params::validate() const
{
    if (!(k1 >= 0.0) || !(b >= 0.0 && b <= 1.0)) {
        throw std::invalid_argument("BM25 parameters require k1 >= 0 and 0 <= b <= 1");
    }
}

double bm25_idf(std::uint64_t doc_count, std::uint64_t doc_freq)
{
    auto n = static_cast<double>(doc_count);
    auto df = static_cast<double>(doc_freq);
    return std::log(1.0 + (n - df + 0.5) / (df + 0.5));
}

double bm25_tf_norm(double tf, double doc_length, double avg_doc_length, const BM25Params &params)
{
    if (tf <= 0.0) {
        return 0.0;
    }
    double rel_len = avg_doc_length > 0.0 ? doc_length / avg_doc_length : 1.0;
    return tf * (params.k1 + 1.0) / (tf + params.k1 * (1.0 - params.b + params.b * rel_len));
}

std::vector<TermCount> normalize_query(std::vector<TermCount> terms)
{
    std::sort(terms.begin(), terms.end(), [](const auto &a, const auto &b) { return a.term < b.term; });
    std::vector<TermCount> out;
    for (const auto &t : terms) {
        if (t.count == 0) {
            continue;
        }
        if (!out.empty() && out.back().term == t.term) {
            out.back().count += t.count;
        } else {
            out.push_back(t);
        }
    }
    return out;
}

void InvertedIndex::finish_stats()
{
    avg_doc_length_ = doc_lengths_.empty()
                          ? 0.0
                          : std::accumulate(doc_lengths_.begin(), doc_lengths_.end(), 0.0) /
                                static_cast<double>(doc_lengths_.size());
}

InvertedIndex InvertedIndex::build_from_sparse(std::span<const SparseVector> docs)
{
    InvertedIndex index;
    index.flavor_ = PostingFlavor::Weights;
    index.doc_lengths_.reserve(docs.size());
    for (std::size_t d = 0; d < docs.size(); ++d) {
        for (const auto &e : docs[d].entries()) {
            if (e.term >= index.postings_.size()) {
                index.postings_.resize(static_cast<std::size_t>(e.term) + 1);
            }
            index.postings_[e.term].push_back({static_cast<DocId>(d), e.value});
        }
        index.doc_lengths_.push_back(static_cast<double>(docs[d].size()));
    }
    index.finish_stats();
    return index;
}

InvertedIndex InvertedIndex::build_from_counts(std::span<const std::vector<TermCount>> docs)
{
    InvertedIndex index;
    index.flavor_ = PostingFlavor::TermFrequencies;
    index.doc_lengths_.reserve(docs.size());
    for (std::size_t d = 0; d < docs.size(); ++d) {
        double length = 0.0;
        TermId prev = 0;
        for (std::size_t i = 0; i < docs[d].size(); ++i) {
            const auto &tc = docs[d][i];
            if (i > 0 && tc.term <= prev) {
                throw std::invalid_argument("term counts must be sorted by strictly increasing term id");
            }
            prev = tc.term;
            if (tc.count == 0) {
                continue;
            }
            if (tc.term >= index.postings_.size()) {
                index.postings_.resize(static_cast<std::size_t>(tc.term) + 1);
            }
            index.postings_[tc.term].push_back({static_cast<DocId>(d), static_cast<float>(tc.count)});
            length += tc.count;
        }
        index.doc_lengths_.push_back(length);
    }
    index.finish_stats();
    return index;
}

SparseVector InvertedIndex::reconstruct(DocId doc) const
{
    if (doc >= doc_count()) {
        throw std::invalid_argument("unknown document id " + std::to_string(doc));
    }
    std::vector<SparseEntry> entries;
    for (std::size_t t = 0; t < postings_.size(); ++t) {
        const auto &list = postings_[t];
        auto it = std::lower_bound(list.begin(), list.end(), doc,
                                   [](const Posting &p, DocId d) { return p.doc < d; });
        if (it != list.end() && it->doc == doc) {
            entries.push_back({static_cast<TermId>(t), it->weight});
        }
    }
    return SparseVector(std::move(entries));
}

std::vector<SearchHit> InvertedIndex::daat_mips(const SparseVector &q, std::size_t k) const
{
    std::vector<Cursor> cursors;
    for (const auto &e : q.entries()) {
        cursors.push_back({postings(e.term), 0, static_cast<double>(e.value)});
    }
    return daat_top_k(std::move(cursors), k, [](const Cursor &c, const Posting &p) {
        return c.query_weight * static_cast<double>(p.weight);
    });
}

double InvertedIndex::bm25_score(std::span<const TermCount> query, DocId doc, const BM25Params &params) const
{
    if (doc >= doc_count()) {
        throw std::invalid_argument("unknown document id " + std::to_string(doc));
    }
    params.validate();
    double score = 0.0;
    for (const auto &qt : normalize_query({query.begin(), query.end()})) {
        auto list = postings(qt.term);
        auto it = std::lower_bound(list.begin(), list.end(), doc,
                                   [](const Posting &p, DocId d) { return p.doc < d; });
        if (it == list.end() || it->doc != doc) {
            continue;
        }
        score += qt.count * bm25_idf(doc_count(), list.size()) *
                 bm25_tf_norm(it->weight, doc_lengths_[doc], avg_doc_length_, params);
    }
    return score;
}

std::vector<SearchHit> InvertedIndex::bm25_retrieve(std::span<const TermCount> query, std::size_t k,
                                                    const BM25Params &params) const
{
    params.validate();
    std::vector<Cursor> cursors;
    for (const auto &qt : normalize_query({query.begin(), query.end()})) {
        auto list = postings(qt.term);
        cursors.push_back({list, 0, qt.count * bm25_idf(doc_count(), list.size())});
    }
    return daat_top_k(std::move(cursors), k, [this, &params](const Cursor &c, const Posting &p) {
        return c.query_weight * bm25_tf_norm(p.weight, doc_lengths_[p.doc], avg_doc_length_, params);
    });
}

void InvertedIndex::save(std::ostream &out) const
{
    BinaryWriter w(out);
    w.magic("INVX");
    w.u32(kInvertedVersion);
    w.u8(static_cast<std::uint8_t>(flavor_));
    w.u64(doc_lengths_.size());
    for (double len : doc_lengths_) {
        w.f64(len);
    }
    w.u64(postings_.size());
    for (const auto &list : postings_) {
        w.u32(static_cast<std::uint32_t>(list.size()));
        for (const auto &p : list) {
            w.u32(p.doc);
            w.f32(p.weight);
        }
    }
    w.check();
}

InvertedIndex InvertedIndex::load(std::istream &in)
{
    BinaryReader r(in);
    r.expect_magic("INVX", "inverted index");
    r.expect_version(kInvertedVersion, "inverted index");
    InvertedIndex index;
    auto flavor = r.u8();
    if (flavor != static_cast<std::uint8_t>(PostingFlavor::Weights) &&
        flavor != static_cast<std::uint8_t>(PostingFlavor::TermFrequencies)) {
        throw FormatError("inverted index: unknown posting flavor");
    }
    index.flavor_ = static_cast<PostingFlavor>(flavor);
    auto n = r.count(1ULL << 32, "document");
    index.doc_lengths_.resize(n);
    for (auto &len : index.doc_lengths_) {
        len = r.f64();
    }
    auto terms = r.count(1ULL << 32, "term");
    index.postings_.resize(terms);
    for (auto &list : index.postings_) {
        auto len = r.u32();
        if (len > n) {
            throw FormatError("inverted index: posting list longer than collection");
        }
        list.resize(len);
        for (auto &p : list) {
            p.doc = r.u32();
            p.weight = r.f32();
            if (p.doc >= n) {
                throw FormatError("inverted index: posting doc id out of range");
            }
        }
    }
    index.finish_stats();
    return index;
}

}  // namespace hybrid
