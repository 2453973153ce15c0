#include "hybrid/extractors.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>

namespace hybrid {

namespace {

std::vector<std::string> field_tokens(const QueryEntry &query, const std::string &field)
{
    return tokenize_parsed(query.field(field));
}

std::shared_ptr<const ForwardIndex> parsed_field(const ExtractorResources &res, const std::string &name)
{
    auto f = res.forward->get(name);
    if (f->kind() != FieldKind::Parsed) {
        throw ConfigError("field '" + name + "' is raw; this extractor needs a parsed field");
    }
    return f;
}

std::filesystem::path resolve(const ExtractorResources &res, const std::string &file)
{
    std::filesystem::path p(file);
    return p.is_absolute() ? p : res.base_dir / p;
}

}  // namespace

// ForwardStore

void ForwardStore::add(ForwardIndex index)
{
    std::lock_guard lock(mu_);
    auto name = index.field_name();
    cache_[name] = std::make_shared<const ForwardIndex>(std::move(index));
}

std::shared_ptr<const ForwardIndex> ForwardStore::get(const std::string &field) const
{
    std::lock_guard lock(mu_);
    if (auto it = cache_.find(field); it != cache_.end()) {
        return it->second;
    }
    if (dir_.empty()) {
        throw ConfigError("no forward index for field '" + field + "'");
    }
    auto path = forward_file(dir_, field);
    if (!std::filesystem::exists(path)) {
        throw ConfigError("no forward index for field '" + field + "' (looked for " + path.string() + ")");
    }
    auto f = std::make_shared<const ForwardIndex>(ForwardIndex::load_file(path));
    cache_.emplace(field, f);
    return f;
}

// BM25

Bm25Extractor::Bm25Extractor(std::shared_ptr<const ForwardIndex> field, std::string query_field, BM25Params params)
    : field_(std::move(field)), query_field_(std::move(query_field)), params_(params)
{
    params_.validate();
}

std::vector<std::string> Bm25Extractor::feature_names() const
{
    return {"bm25:" + field_->field_name()};
}

std::vector<TermCount> Bm25Extractor::query_terms(const QueryEntry &query) const
{
    return field_->query_terms(field_tokens(query, query_field_));
}

double Bm25Extractor::score_one(std::span<const TermCount> query, DocId doc) const
{
    auto bag = field_->bag(doc);
    double score = 0.0;
    for (const auto &qt : query) {
        auto it = std::lower_bound(bag.begin(), bag.end(), qt.term,
                                   [](const TermCount &tc, TermId t) { return tc.term < t; });
        if (it == bag.end() || it->term != qt.term) {
            continue;
        }
        score += qt.count * bm25_idf(field_->doc_count(), field_->doc_freq(qt.term)) *
                 bm25_tf_norm(it->count, field_->doc_length(doc), field_->avg_doc_length(), params_);
    }
    return score;
}

std::vector<std::vector<double>> Bm25Extractor::score(const QueryEntry &query, std::span<const DocId> docs,
                                                      std::vector<bool> * /*flagged*/) const
{
    auto terms = query_terms(query);
    std::vector<std::vector<double>> rows;
    rows.reserve(docs.size());
    for (DocId d : docs) {
        rows.push_back({score_one(terms, d)});
    }
    return rows;
}

FieldVector Bm25Extractor::query_vector(const QueryEntry &query) const
{
    std::vector<SparseEntry> entries;
    for (const auto &qt : query_terms(query)) {
        double w = qt.count * bm25_idf(field_->doc_count(), field_->doc_freq(qt.term));
        if (w != 0.0) {
            entries.push_back({qt.term, static_cast<float>(w)});
        }
    }
    return SparseVector(std::move(entries));
}

FieldVector Bm25Extractor::doc_vector(DocId doc) const
{
    std::vector<SparseEntry> entries;
    for (const auto &tc : field_->bag(doc)) {
        double w = bm25_tf_norm(tc.count, field_->doc_length(doc), field_->avg_doc_length(), params_);
        if (w != 0.0) {
            entries.push_back({tc.term, static_cast<float>(w)});
        }
    }
    return SparseVector(std::move(entries));
}

// Proximity

PairOccurrences count_pair_occurrences(std::span<const TermId> sequence, TermId first, TermId second,
                                       std::uint32_t window)
{
    std::vector<std::size_t> second_pos;
    for (std::size_t i = 0; i < sequence.size(); ++i) {
        if (sequence[i] == second) {
            second_pos.push_back(i);
        }
    }
    PairOccurrences out;
    if (second_pos.empty()) {
        return out;
    }
    for (std::size_t p = 0; p < sequence.size(); ++p) {
        if (sequence[p] != first) {
            continue;
        }
        // Nearest occurrence of `second` strictly after p, and at or before p.
        auto after = std::upper_bound(second_pos.begin(), second_pos.end(), p);
        bool fwd = after != second_pos.end() && *after - p <= window;
        bool back = false;
        auto before = after;
        if (before != second_pos.begin() && *std::prev(before) == p) {
            --before;
        }
        if (before != second_pos.begin()) {
            back = p - *std::prev(before) <= window;
        }
        out.ordered += fwd ? 1 : 0;
        out.unordered += (fwd || back) ? 1 : 0;
    }
    return out;
}

ProximityExtractor::ProximityExtractor(std::shared_ptr<const ForwardIndex> field, std::string query_field,
                                       ProximityParams params)
    : field_(std::move(field)), query_field_(std::move(query_field)), params_(params)
{
    params_.bm25.validate();
    if (!field_->has_positions()) {
        throw ConfigError("proximity extractor needs field '" + field_->field_name() + "' indexed with positions");
    }
    if (params_.window == 0) {
        throw ConfigError("proximity window must be at least 1");
    }
    term_docs_.resize(field_->vocabulary_size());
    for (DocId d = 0; d < field_->doc_count(); ++d) {
        for (const auto &tc : field_->bag(d)) {
            term_docs_[tc.term].push_back(d);
        }
    }
}

std::vector<std::string> ProximityExtractor::feature_names() const
{
    return {"proximity:" + field_->field_name()};
}

std::vector<TermId> ProximityExtractor::query_terms(const QueryEntry &query) const
{
    std::vector<TermId> out;
    for (const auto &tok : field_tokens(query, query_field_)) {
        auto id = field_->term_id(tok);
        if (id && std::find(out.begin(), out.end(), *id) == out.end()) {
            out.push_back(*id);
        }
    }
    return out;
}

ProximityExtractor::PairDf ProximityExtractor::pair_doc_freq(TermId a, TermId b) const
{
    const auto key = (static_cast<std::uint64_t>(a) << 32) | b;
    {
        std::lock_guard lock(cache_mu_);
        if (auto it = pair_cache_.find(key); it != pair_cache_.end()) {
            return it->second;
        }
    }
    const auto &da = term_docs_[a];
    const auto &db = term_docs_[b];
    std::vector<DocId> both;
    std::set_intersection(da.begin(), da.end(), db.begin(), db.end(), std::back_inserter(both));
    PairDf df{0, 0};
    for (DocId d : both) {
        auto occ = count_pair_occurrences(field_->sequence(d), a, b, params_.window);
        df.ordered += occ.ordered > 0 ? 1 : 0;
        df.unordered += occ.unordered > 0 ? 1 : 0;
    }
    std::lock_guard lock(cache_mu_);
    pair_cache_.emplace(key, df);
    return df;
}

double ProximityExtractor::score_one(std::span<const TermId> query_terms, DocId doc) const
{
    if (query_terms.size() < 2) {
        return 0.0;
    }
    auto seq = field_->sequence(doc);
    const double dl = field_->doc_length(doc);
    const double avgdl = field_->avg_doc_length();
    const auto n = field_->doc_count();
    double score = 0.0;
    for (std::size_t i = 0; i < query_terms.size(); ++i) {
        for (std::size_t j = i + 1; j < query_terms.size(); ++j) {
            auto occ = count_pair_occurrences(seq, query_terms[i], query_terms[j], params_.window);
            if (occ.unordered == 0) {
                continue;
            }
            auto df = pair_doc_freq(query_terms[i], query_terms[j]);
            if (occ.ordered > 0) {
                score += bm25_idf(n, df.ordered) * bm25_tf_norm(occ.ordered, dl, avgdl, params_.bm25);
            }
            score += bm25_idf(n, df.unordered) * bm25_tf_norm(occ.unordered, dl, avgdl, params_.bm25);
        }
    }
    return score;
}

std::vector<std::vector<double>> ProximityExtractor::score(const QueryEntry &query, std::span<const DocId> docs,
                                                           std::vector<bool> * /*flagged*/) const
{
    auto terms = query_terms(query);
    std::vector<std::vector<double>> rows;
    rows.reserve(docs.size());
    for (DocId d : docs) {
        rows.push_back({score_one(terms, d)});
    }
    return rows;
}

// Model 1

Model1Extractor::Model1Extractor(std::shared_ptr<const ForwardIndex> field, std::string query_field,
                                 std::shared_ptr<const Model1Table> table)
    : field_(std::move(field)), query_field_(std::move(query_field)), table_(std::move(table))
{
    source_of_term_.resize(field_->vocabulary_size(), -1);
    for (TermId t = 0; t < field_->vocabulary_size(); ++t) {
        if (auto s = table_->source_id(field_->term(t))) {
            source_of_term_[t] = *s;
        }
    }
}

std::vector<std::string> Model1Extractor::feature_names() const
{
    return {"model1:" + field_->field_name()};
}

std::vector<std::vector<double>> Model1Extractor::score(const QueryEntry &query, std::span<const DocId> docs,
                                                        std::vector<bool> * /*flagged*/) const
{
    auto q = field_tokens(query, query_field_);
    std::vector<std::vector<double>> rows;
    rows.reserve(docs.size());
    std::vector<std::pair<std::uint32_t, double>> sources;
    for (DocId d : docs) {
        sources.clear();
        for (const auto &tc : field_->bag(d)) {
            if (auto s = source_of_term_[tc.term]; s >= 0) {
                sources.emplace_back(static_cast<std::uint32_t>(s), static_cast<double>(tc.count));
            }
        }
        std::sort(sources.begin(), sources.end());
        rows.push_back({model1_score_sources(q, sources, field_->doc_length(d), *table_)});
    }
    return rows;
}

// Averaged embeddings

AvgEmbedExtractor::AvgEmbedExtractor(std::shared_ptr<const ForwardIndex> field, std::string query_field,
                                     std::shared_ptr<const EmbeddingTable> query_table,
                                     std::shared_ptr<const EmbeddingTable> doc_table, AvgEmbedParams params)
    : field_(std::move(field)),
      query_field_(std::move(query_field)),
      query_table_(std::move(query_table)),
      doc_table_(std::move(doc_table)),
      params_(params),
      idf_(*field_)
{
    if (query_table_->dim() != doc_table_->dim()) {
        throw ConfigError("query and document embeddings differ in dimension");
    }
}

std::vector<std::string> AvgEmbedExtractor::feature_names() const
{
    return {"avgWordEmbed:" + field_->field_name()};
}

std::vector<std::string> AvgEmbedExtractor::doc_tokens(DocId doc) const
{
    std::vector<std::string> tokens;
    tokens.reserve(field_->doc_length(doc));
    for (const auto &tc : field_->bag(doc)) {
        tokens.insert(tokens.end(), tc.count, field_->term(tc.term));
    }
    return tokens;
}

std::vector<std::vector<double>> AvgEmbedExtractor::score(const QueryEntry &query, std::span<const DocId> docs,
                                                          std::vector<bool> *flagged) const
{
    auto q = field_tokens(query, query_field_);
    std::vector<std::vector<double>> rows;
    rows.reserve(docs.size());
    for (std::size_t i = 0; i < docs.size(); ++i) {
        auto v = avg_embed_feature(q, doc_tokens(docs[i]), *query_table_, *doc_table_, idf_, params_);
        rows.push_back({v.value});
        if (flagged != nullptr && v.flagged) {
            (*flagged)[i] = true;
        }
    }
    return rows;
}

FieldVector AvgEmbedExtractor::query_vector(const QueryEntry &query) const
{
    auto q = field_tokens(query, query_field_);
    return normalize_l2(weighted_centroid(q, *query_table_, params_.use_idf_weight ? &idf_ : nullptr));
}

FieldVector AvgEmbedExtractor::doc_vector(DocId doc) const
{
    auto d = doc_tokens(doc);
    return normalize_l2(weighted_centroid(d, *doc_table_, params_.use_idf_weight ? &idf_ : nullptr));
}

// Configuration

std::vector<ExtractorConfig> parse_extractor_configs(const nlohmann::json &doc)
{
    const nlohmann::json *list = &doc;
    if (doc.is_object()) {
        if (!doc.contains("extractors")) {
            throw ConfigError("scoring configuration lacks an \"extractors\" array");
        }
        list = &doc.at("extractors");
    }
    if (!list->is_array()) {
        throw ConfigError("\"extractors\" must be an array");
    }
    std::vector<ExtractorConfig> out;
    for (const auto &item : *list) {
        if (!item.is_object() || !item.contains("type") || !item.at("type").is_string()) {
            throw ConfigError("every extractor needs a string \"type\"");
        }
        if (!item.contains("params") || !item.at("params").is_object()) {
            throw ConfigError("extractor '" + item.at("type").get<std::string>() + "' needs a \"params\" object");
        }
        out.push_back({item.at("type").get<std::string>(), item.at("params")});
    }
    return out;
}

std::vector<ExtractorConfig> load_extractor_configs(const std::filesystem::path &path)
{
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open extractor configuration " + path.string());
    }
    try {
        return parse_extractor_configs(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception &e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

double param_double(const nlohmann::json &params, const std::string &key, double fallback)
{
    if (!params.contains(key)) {
        return fallback;
    }
    const auto &v = params.at(key);
    if (v.is_number()) {
        return v.get<double>();
    }
    if (v.is_string()) {
        const auto s = v.get<std::string>();
        try {
            std::size_t used = 0;
            double x = std::stod(s, &used);
            if (used == s.size()) {
                return x;
            }
        } catch (const std::exception &) {
        }
        throw ConfigError("parameter \"" + key + "\" is not a number: '" + s + "'");
    }
    throw ConfigError("parameter \"" + key + "\" must be a number");
}

bool param_bool(const nlohmann::json &params, const std::string &key, bool fallback)
{
    if (!params.contains(key)) {
        return fallback;
    }
    const auto &v = params.at(key);
    if (v.is_boolean()) {
        return v.get<bool>();
    }
    if (v.is_number_integer()) {
        return v.get<long long>() != 0;
    }
    if (v.is_string()) {
        auto s = v.get<std::string>();
        std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
        if (s == "true" || s == "1") {
            return true;
        }
        if (s == "false" || s == "0") {
            return false;
        }
    }
    throw ConfigError("parameter \"" + key + "\" must be a boolean");
}

std::string param_string(const nlohmann::json &params, const std::string &key, const std::string &fallback)
{
    if (!params.contains(key)) {
        return fallback;
    }
    const auto &v = params.at(key);
    if (!v.is_string()) {
        throw ConfigError("parameter \"" + key + "\" must be a string");
    }
    return v.get<std::string>();
}

std::string param_required(const nlohmann::json &params, const std::string &key)
{
    if (!params.contains(key)) {
        throw ConfigError("missing required parameter \"" + key + "\"");
    }
    return param_string(params, key, "");
}

std::unique_ptr<FeatureExtractor> make_extractor(const ExtractorConfig &config, const ExtractorResources &res)
{
    const auto &p = config.params;
    const auto index_field = param_required(p, "indexFieldName");
    const auto query_field = param_string(p, "queryFieldName", index_field);
    BM25Params bm25{param_double(p, "k1", 1.2), param_double(p, "b", 0.75)};

    std::string type = config.type;
    if (type == "TFIDFSimilarity") {
        auto simil = param_string(p, "similType", "bm25");
        if (simil != "bm25") {
            throw ConfigError("unsupported similType '" + simil + "' (only bm25)");
        }
        type = "bm25";
    }

    try {
        if (type == "bm25") {
            return std::make_unique<Bm25Extractor>(parsed_field(res, index_field), query_field, bm25);
        }
        if (type == "proximity") {
            ProximityParams prox;
            prox.bm25 = bm25;
            double window = param_double(p, "window", 8);
            if (window < 1) {
                throw ConfigError("proximity window must be at least 1");
            }
            prox.window = static_cast<std::uint32_t>(window);
            return std::make_unique<ProximityExtractor>(parsed_field(res, index_field), query_field, prox);
        }
        if (type == "model1") {
            auto field = parsed_field(res, index_field);
            auto path = resolve(res, param_required(p, "model1File"));
            std::ifstream in(path, std::ios::binary);
            if (!in) {
                throw ConfigError("cannot open Model 1 table " + path.string());
            }
            auto table = Model1Table::load(in);
            if (p.contains("lambda")) {
                table.set_lambda(param_double(p, "lambda", table.lambda()));
            }
            if (!table.has_collection_model()) {
                table.set_collection_model(collection_model(*field));
            }
            return std::make_unique<Model1Extractor>(field, query_field,
                                                     std::make_shared<const Model1Table>(std::move(table)));
        }
        if (type == "avgWordEmbed") {
            AvgEmbedParams ep;
            ep.use_idf_weight = param_bool(p, "useIDFWeight", true);
            ep.use_l2_norm = param_bool(p, "useL2Norm", true);
            auto dist = param_string(p, "distType", "l2");
            if (dist == "l2") {
                ep.dist_type = EmbedDistance::L2;
            } else if (dist == "cosine") {
                ep.dist_type = EmbedDistance::Cosine;
            } else {
                throw ConfigError("unknown distType '" + dist + "' (expected l2 or cosine)");
            }
            auto qt = std::make_shared<const EmbeddingTable>(
                EmbeddingTable::load_text_file(resolve(res, param_required(p, "queryEmbedFile"))));
            auto dt = std::make_shared<const EmbeddingTable>(
                EmbeddingTable::load_text_file(resolve(res, param_required(p, "docEmbedFile"))));
            return std::make_unique<AvgEmbedExtractor>(parsed_field(res, index_field), query_field, qt, dt, ep);
        }
    } catch (const ConfigError &) {
        throw;
    } catch (const std::exception &e) {
        throw ConfigError("extractor '" + config.type + "': " + e.what());
    }
    throw ConfigError("unknown extractor type '" + config.type + "'");
}

CompositeExtractor::CompositeExtractor(std::span<const ExtractorConfig> configs, const ExtractorResources &res)
{
    for (const auto &c : configs) {
        extractors_.push_back(make_extractor(c, res));
    }
    collect_columns();
}

CompositeExtractor::CompositeExtractor(std::vector<std::unique_ptr<FeatureExtractor>> extractors)
    : extractors_(std::move(extractors))
{
    collect_columns();
}

void CompositeExtractor::collect_columns()
{
    std::set<std::string> seen;
    for (const auto &e : extractors_) {
        for (auto name : e->feature_names()) {
            auto unique = name;
            for (int i = 2; !seen.insert(unique).second; ++i) {
                unique = name + "#" + std::to_string(i);
            }
            columns_.push_back(unique);
        }
    }
}

FeatureMatrix CompositeExtractor::extract(const QueryEntry &query, std::span<const DocId> docs,
                                          const ForwardIndex &docnos) const
{
    FeatureMatrix m;
    m.query_id = query.docno;
    m.columns = columns_;
    m.docs.assign(docs.begin(), docs.end());
    m.flagged.assign(docs.size(), false);
    m.rows.assign(docs.size(), {});
    for (DocId d : docs) {
        m.docnos.push_back(docnos.docno(d));
    }
    for (const auto &e : extractors_) {
        auto part = e->score(query, docs, &m.flagged);
        for (std::size_t i = 0; i < docs.size(); ++i) {
            m.rows[i].insert(m.rows[i].end(), part[i].begin(), part[i].end());
        }
    }
    return m;
}

}  // namespace hybrid
