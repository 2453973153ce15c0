#include "hybrid/embeddings.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "hybrid/forward_index.hpp"
#include "hybrid/inverted_index.hpp"

namespace hybrid {

void EmbeddingTable::add(std::string token, DenseVector v)
{
    if (v.dim() != dim_) {
        throw std::invalid_argument("embedding for '" + token + "' has dimension " + std::to_string(v.dim()) +
                                    ", expected " + std::to_string(dim_));
    }
    table_.insert_or_assign(std::move(token), std::move(v));
}

const DenseVector *EmbeddingTable::find(std::string_view token) const
{
    auto it = table_.find(std::string(token));
    return it == table_.end() ? nullptr : &it->second;
}

EmbeddingTable EmbeddingTable::load_text(std::istream &in)
{
    std::string line;
    if (!std::getline(in, line)) {
        throw std::runtime_error("embedding file is empty");
    }
    std::istringstream header(line);
    std::size_t count = 0;
    std::size_t dim = 0;
    if (!(header >> count >> dim) || dim == 0) {
        throw std::runtime_error("embedding file header must be 'count dim'");
    }
    EmbeddingTable table(dim);
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream ls(line);
        std::string token;
        if (!(ls >> token)) {
            continue;
        }
        std::vector<float> values(dim);
        for (auto &x : values) {
            if (!(ls >> x)) {
                throw std::runtime_error("embedding line " + std::to_string(line_no) + ": expected " +
                                         std::to_string(dim) + " values");
            }
        }
        table.add(std::move(token), DenseVector(std::move(values)));
    }
    if (table.size() != count) {
        throw std::runtime_error("embedding file declares " + std::to_string(count) + " vectors but holds " +
                                 std::to_string(table.size()));
    }
    return table;
}

EmbeddingTable EmbeddingTable::load_text_file(const std::filesystem::path &path)
{
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open embedding file " + path.string());
    }
    return load_text(in);
}

void EmbeddingTable::save_text(std::ostream &out) const
{
    std::map<std::string, const DenseVector *> sorted;
    for (const auto &[tok, v] : table_) {
        sorted.emplace(tok, &v);
    }
    out << table_.size() << ' ' << dim_ << '\n';
    out.precision(9);
    for (const auto &[tok, v] : sorted) {
        out << tok;
        for (float x : v->values()) {
            out << ' ' << x;
        }
        out << '\n';
    }
}

double IdfLookup::operator()(std::string_view token) const
{
    auto id = field_->term_id(token);
    return bm25_idf(field_->doc_count(), id ? field_->doc_freq(*id) : 0);
}

DenseVector weighted_centroid(std::span<const std::string> tokens, const EmbeddingTable &table,
                              const IdfLookup *idf, bool *in_vocab)
{
    std::map<std::string_view, double> tf;
    for (const auto &t : tokens) {
        tf[t] += 1.0;
    }
    std::vector<double> acc(table.dim(), 0.0);
    bool found = false;
    for (const auto &[tok, count] : tf) {
        const auto *e = table.find(tok);
        if (e == nullptr) {
            continue;
        }
        found = true;
        double w = count * (idf != nullptr ? (*idf)(tok) : 1.0);
        for (std::size_t i = 0; i < acc.size(); ++i) {
            acc[i] += w * static_cast<double>((*e)[i]);
        }
    }
    if (in_vocab != nullptr) {
        *in_vocab = found;
    }
    std::vector<float> out(acc.begin(), acc.end());
    return DenseVector(std::move(out));
}

AvgEmbedValue avg_embed_feature(std::span<const std::string> query, std::span<const std::string> doc,
                                const EmbeddingTable &query_table, const EmbeddingTable &doc_table,
                                const IdfLookup &idf, const AvgEmbedParams &params)
{
    if (query_table.dim() != doc_table.dim()) {
        throw std::invalid_argument("query and document embeddings differ in dimension");
    }
    const IdfLookup *w = params.use_idf_weight ? &idf : nullptr;
    bool q_found = false;
    bool d_found = false;
    auto qv = weighted_centroid(query, query_table, w, &q_found);
    auto dv = weighted_centroid(doc, doc_table, w, &d_found);
    if (!q_found || !d_found) {
        return {params.dist_type == EmbedDistance::L2 ? kMissingEmbedL2 : 0.0, true};
    }
    if (params.dist_type == EmbedDistance::Cosine) {
        // Cosine is scale-free, so this is the inner product of the unit
        // centroids, the same quantity the vector export produces.
        return {std::clamp(dot(normalize_l2(qv), normalize_l2(dv)), -1.0, 1.0), false};
    }
    if (params.use_l2_norm) {
        qv = normalize_l2(qv);
        dv = normalize_l2(dv);
    }
    return {l2_distance(qv, dv), false};
}

}  // namespace hybrid
