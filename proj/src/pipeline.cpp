#include "hybrid/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <mutex>
#include <thread>

namespace hybrid {

std::string provider_name(ProviderKind kind)
{
    switch (kind) {
        case ProviderKind::InvertedBm25:
            return "inverted-bm25";
        case ProviderKind::KnnHnsw:
            return "knn-hnsw";
        case ProviderKind::KnnBruteForce:
            return "knn-bruteforce";
    }
    throw std::logic_error("unhandled provider kind");
}

ProviderKind provider_from_name(const std::string &name)
{
    if (name == "inverted-bm25" || name == "lucene") {
        return ProviderKind::InvertedBm25;
    }
    if (name == "knn-hnsw") {
        return ProviderKind::KnnHnsw;
    }
    if (name == "knn-bruteforce") {
        return ProviderKind::KnnBruteForce;
    }
    throw ConfigError("unknown candidate provider '" + name +
                      "' (expected inverted-bm25, knn-hnsw or knn-bruteforce)");
}

namespace {

nlohmann::json read_json(const std::filesystem::path &path, const std::string &what)
{
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open " + what + " " + path.string());
    }
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception &e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

std::filesystem::path resolve(const std::filesystem::path &base, const std::string &p)
{
    if (p.empty()) {
        return {};
    }
    std::filesystem::path path(p);
    return path.is_absolute() ? path : base / path;
}

std::size_t count_param(const nlohmann::json &j, const std::string &key, std::size_t fallback)
{
    double v = param_double(j, key, static_cast<double>(fallback));
    if (v < 0 || v != static_cast<double>(static_cast<std::size_t>(v))) {
        throw ConfigError("\"" + key + "\" must be a non-negative integer");
    }
    return static_cast<std::size_t>(v);
}

std::string relative_to(const std::filesystem::path &p)
{
    return p.empty() ? std::string() : p.string();
}

}  // namespace

// Descriptor

ExperimentDescriptor ExperimentDescriptor::from_json(const nlohmann::json &j, const std::filesystem::path &base_dir)
{
    if (!j.is_object()) {
        throw ConfigError("experiment descriptor must be a JSON object");
    }
    ExperimentDescriptor d;
    d.provider = provider_from_name(param_string(j, "candProvider", "inverted-bm25"));
    d.provider_config = resolve(base_dir, param_string(j, "candProvAddConfParam", ""));
    if (d.provider_config.empty()) {
        throw ConfigError("descriptor lacks \"candProvAddConfParam\"");
    }
    d.interm_extractors = resolve(base_dir, param_string(j, "extrTypeInterm", ""));
    d.interm_model = resolve(base_dir, param_string(j, "modelInterm", ""));
    d.final_extractors = resolve(base_dir, param_string(j, "extrType", ""));
    d.final_model = resolve(base_dir, param_string(j, "modelFinal", ""));
    d.forward_dir = resolve(base_dir, param_string(j, "fwdIndexDir", "."));
    d.cand_qty = count_param(j, "candQty", d.cand_qty);
    const bool top_given = j.contains("topFinal");
    d.top_final = count_param(j, "topFinal", d.top_final);
    d.test_only = param_bool(j, "testOnly", false);
    d.run_id = param_string(j, "runId", d.run_id);
    d.exper_subdir = param_string(j, "experSubdir", "");
    if (d.cand_qty == 0 || d.top_final == 0) {
        throw ConfigError("candQty and topFinal must be at least 1");
    }
    if (top_given && d.top_final > d.cand_qty) {
        throw ConfigError("topFinal (" + std::to_string(d.top_final) + ") exceeds candQty (" +
                          std::to_string(d.cand_qty) + ")");
    }
    d.top_final = std::min(d.top_final, d.cand_qty);
    if (d.interm_extractors.empty() != d.interm_model.empty()) {
        throw ConfigError("extrTypeInterm and modelInterm must be given together");
    }
    if (d.final_extractors.empty() != d.final_model.empty()) {
        throw ConfigError("extrType and modelFinal must be given together");
    }
    if (d.run_id.find_first_of(" \t\n") != std::string::npos || d.run_id.empty()) {
        throw ConfigError("runId must be a non-empty token without whitespace");
    }
    return d;
}

ExperimentDescriptor ExperimentDescriptor::load_file(const std::filesystem::path &path, std::size_t index)
{
    auto j = read_json(path, "experiment descriptor");
    auto base = path.parent_path();
    if (j.is_array()) {
        if (index >= j.size()) {
            throw ConfigError("descriptor " + path.string() + " has " + std::to_string(j.size()) +
                              " experiments, asked for #" + std::to_string(index));
        }
        return from_json(j.at(index), base);
    }
    if (index != 0) {
        throw ConfigError("descriptor " + path.string() + " holds a single experiment");
    }
    return from_json(j, base);
}

nlohmann::json ExperimentDescriptor::to_json() const
{
    nlohmann::json j;
    j["candProvider"] = provider_name(provider);
    j["candProvAddConfParam"] = relative_to(provider_config);
    if (!interm_extractors.empty()) {
        j["extrTypeInterm"] = relative_to(interm_extractors);
        j["modelInterm"] = relative_to(interm_model);
    }
    if (!final_extractors.empty()) {
        j["extrType"] = relative_to(final_extractors);
        j["modelFinal"] = relative_to(final_model);
    }
    j["fwdIndexDir"] = relative_to(forward_dir);
    j["candQty"] = cand_qty;
    j["topFinal"] = top_final;
    j["testOnly"] = test_only ? 1 : 0;
    j["runId"] = run_id;
    if (!exper_subdir.empty()) {
        j["experSubdir"] = exper_subdir;
    }
    return j;
}

// Providers

Bm25Provider::Bm25Provider(std::shared_ptr<const ForwardIndex> field, std::shared_ptr<const InvertedIndex> index,
                           std::string query_field, BM25Params params)
    : field_(std::move(field)), index_(std::move(index)), query_field_(std::move(query_field)), params_(params)
{
    params_.validate();
    if (index_->flavor() != PostingFlavor::TermFrequencies) {
        throw ConfigError("BM25 provider needs an inverted index built from term counts");
    }
    if (index_->doc_count() != field_->doc_count() || index_->term_space() > field_->vocabulary_size()) {
        throw ConfigError("inverted index does not match forward index '" + field_->field_name() + "'");
    }
}

std::vector<Candidate> Bm25Provider::candidates(const QueryEntry &query, std::size_t k) const
{
    auto terms = field_->query_terms(tokenize_parsed(query.field(query_field_)));
    std::vector<Candidate> out;
    for (const auto &h : index_->bm25_retrieve(terms, k, params_)) {
        out.push_back({h.id, h.score});
    }
    return out;
}

KnnProvider::KnnProvider(ProviderKind kind, ExportData data, std::shared_ptr<const VectorExporter> query_side,
                         std::size_t ef_search, const HnswParams &hnsw, const std::filesystem::path &hnsw_file)
    : kind_(kind), manifest_(std::move(data.manifest)), query_side_(std::move(query_side)), ef_search_(ef_search)
{
    if (kind_ == ProviderKind::InvertedBm25) {
        throw std::invalid_argument("k-NN provider needs a k-NN kind");
    }
    if (query_side_->fields().size() != manifest_.fields.size()) {
        throw ConfigError("query vectorizer does not match the export manifest");
    }
    if (kind_ == ProviderKind::KnnBruteForce) {
        exact_.emplace(std::move(data.vectors));
        return;
    }
    if (!hnsw_file.empty()) {
        std::ifstream in(hnsw_file, std::ios::binary);
        if (!in) {
            throw ConfigError("cannot open HNSW index " + hnsw_file.string());
        }
        graph_.emplace(HnswIndex::load(in));
        if (graph_->size() != data.vectors.size() || graph_->space().name() != data.vectors.space().name()) {
            throw ConfigError("HNSW index " + hnsw_file.string() + " does not match the exported vectors");
        }
        return;
    }
    graph_.emplace(data.vectors.space(), hnsw);
    for (DocId d = 0; d < data.vectors.size(); ++d) {
        graph_->insert(data.vectors.vector(d));
    }
    graph_->freeze();
}

AnyVector KnnProvider::query_vector(const QueryEntry &query) const
{
    return query_side_->query_vector(query, manifest_.scenario);
}

std::vector<Candidate> KnnProvider::candidates(const QueryEntry &query, std::size_t k) const
{
    return search(query_vector(query), k);
}

std::vector<Candidate> KnnProvider::search(const AnyVector &q, std::size_t k) const
{
    space().require(q);
    auto hits = exact_ ? exact_->search(q, k) : graph_->search(q, k, std::max(ef_search_, k));
    std::vector<Candidate> out;
    out.reserve(hits.size());
    for (const auto &h : hits) {
        out.push_back({h.id, h.score});
    }
    return out;
}

std::shared_ptr<const CandidateProvider> make_provider(ProviderKind kind, const std::filesystem::path &config,
                                                       std::shared_ptr<const ForwardStore> forward,
                                                       std::string *docno_field)
{
    auto j = read_json(config, "provider configuration");
    auto base = config.parent_path();
    if (kind == ProviderKind::InvertedBm25) {
        auto index_field = param_required(j, "indexFieldName");
        auto query_field = param_string(j, "queryFieldName", index_field);
        BM25Params params{param_double(j, "k1", 1.2), param_double(j, "b", 0.75)};
        auto field = forward->get(index_field);
        std::shared_ptr<const InvertedIndex> index;
        if (auto file = param_string(j, "indexFile", ""); !file.empty()) {
            std::ifstream in(resolve(base, file), std::ios::binary);
            if (!in) {
                throw ConfigError("cannot open inverted index " + resolve(base, file).string());
            }
            index = std::make_shared<const InvertedIndex>(InvertedIndex::load(in));
        } else {
            index = std::make_shared<const InvertedIndex>(build_bm25_index(*field));
        }
        if (docno_field != nullptr) {
            *docno_field = index_field;
        }
        return std::make_shared<Bm25Provider>(field, index, query_field, params);
    }

    auto data = read_export(resolve(base, param_required(j, "exportDir")));
    auto &m = data.manifest;
    if (m.extractors.size() != m.fields.size()) {
        throw ConfigError("export manifest does not record the extractor configuration for every field");
    }
    std::vector<double> weights;
    for (const auto &f : m.fields) {
        weights.push_back(f.weight);
    }
    if (j.contains("weights")) {
        if (m.scenario != ExportScenario::PerField) {
            throw ConfigError("weights are baked into a composite export and cannot be changed");
        }
        weights = j.at("weights").get<std::vector<double>>();
    }
    ExtractorResources res{forward, m.config_base_dir};
    auto exporter = std::make_shared<const VectorExporter>(make_exporter(m.extractors, res, weights));
    for (std::size_t i = 0; i < m.fields.size(); ++i) {
        const auto &f = exporter->fields()[i];
        if (f.name != m.fields[i].name || f.extractor->sparse() != m.fields[i].sparse ||
            f.extractor->vector_space() != m.fields[i].space) {
            throw ConfigError("query vectorizer field '" + f.name + "' does not match the export manifest");
        }
    }
    if (docno_field != nullptr) {
        *docno_field = param_string(j, "docnoField", param_required(m.extractors.front().params, "indexFieldName"));
    }
    auto hp = HnswParams::for_m(static_cast<std::uint32_t>(count_param(j, "M", 16)),
                                static_cast<std::uint64_t>(count_param(j, "seed", 42)));
    hp.ef_construction = static_cast<std::uint32_t>(count_param(j, "efConstruction", hp.ef_construction));
    auto hnsw_file = resolve(base, param_string(j, "hnswFile", ""));
    return std::make_shared<KnnProvider>(kind, std::move(data), exporter, count_param(j, "efSearch", 100), hp,
                                         hnsw_file);
}

Reranker load_reranker(const std::filesystem::path &extractors, const std::filesystem::path &model,
                       std::shared_ptr<const ForwardStore> forward)
{
    auto configs = load_extractor_configs(extractors);
    ExtractorResources res{std::move(forward), extractors.parent_path()};
    Reranker r{std::make_shared<const CompositeExtractor>(configs, res), {}};
    try {
        r.model = LinearModel::load_file(model);
    } catch (const std::runtime_error &e) {
        throw ConfigError(e.what());
    }
    if (r.model.columns.empty()) {
        r.model.columns = r.extractors->columns();
    }
    if (r.model.columns != r.extractors->columns() || r.model.weights.size() != r.model.columns.size()) {
        throw ConfigError("model " + model.string() + " does not match the features of " + extractors.string());
    }
    return r;
}

// Pipeline

Pipeline::Pipeline(std::shared_ptr<const ForwardStore> forward, std::string docno_field,
                   std::shared_ptr<const CandidateProvider> provider, std::optional<Reranker> interm,
                   std::optional<Reranker> final_stage, std::size_t cand_qty, std::size_t top_final,
                   std::string run_id)
    : forward_(std::move(forward)),
      provider_(std::move(provider)),
      interm_(std::move(interm)),
      final_(std::move(final_stage)),
      cand_qty_(cand_qty),
      top_final_(top_final),
      run_id_(std::move(run_id))
{
    docnos_ = forward_->get(docno_field);
    if (cand_qty_ == 0 || top_final_ == 0) {
        throw ConfigError("candQty and topFinal must be at least 1");
    }
}

namespace {

std::shared_ptr<const ForwardStore> open_store(const ExperimentDescriptor &d)
{
    if (!std::filesystem::is_directory(d.forward_dir)) {
        throw ConfigError("forward index directory " + d.forward_dir.string() + " does not exist");
    }
    return std::make_shared<const ForwardStore>(d.forward_dir);
}

}  // namespace

Pipeline::Pipeline(const ExperimentDescriptor &d) : Pipeline(open_store(d), d) {}

Pipeline::Pipeline(std::shared_ptr<const ForwardStore> store, const ExperimentDescriptor &d)
    : forward_(std::move(store)), cand_qty_(d.cand_qty), top_final_(d.top_final), run_id_(d.run_id)
{
    std::string docno_field;
    provider_ = make_provider(d.provider, d.provider_config, forward_, &docno_field);
    docnos_ = forward_->get(docno_field);
    if (!d.interm_extractors.empty()) {
        interm_ = load_reranker(d.interm_extractors, d.interm_model, forward_);
    }
    if (!d.final_extractors.empty()) {
        final_ = load_reranker(d.final_extractors, d.final_model, forward_);
    }
}

namespace {

std::vector<RankedDoc> rerank(const Reranker &r, const QueryEntry &query, std::span<const DocId> docs,
                              const ForwardIndex &docnos, std::vector<DocId> &order)
{
    auto features = r.extractors->extract(query, docs, docnos);
    std::vector<std::pair<RankedDoc, DocId>> scored;
    scored.reserve(docs.size());
    for (std::size_t i = 0; i < docs.size(); ++i) {
        scored.push_back({{features.docnos[i], r.model.score(features.rows[i])}, docs[i]});
    }
    std::sort(scored.begin(), scored.end(), [](const auto &a, const auto &b) {
        if (a.first.score != b.first.score) {
            return a.first.score > b.first.score;
        }
        return a.first.docno < b.first.docno;
    });
    std::vector<RankedDoc> out;
    order.clear();
    for (auto &[rd, id] : scored) {
        out.push_back(std::move(rd));
        order.push_back(id);
    }
    return out;
}

}  // namespace

PipelineResult Pipeline::run(const QueryEntry &query) const
{
    return run(query, cand_qty_);
}

PipelineResult Pipeline::run(const QueryEntry &query, std::size_t cand_qty) const
{
    PipelineResult result;
    result.qid = query.docno;
    auto cands = provider_->candidates(query, cand_qty);
    std::vector<DocId> ids;
    for (const auto &c : cands) {
        ids.push_back(c.doc);
        result.docs.push_back({docnos_->docno(c.doc), c.score});
    }
    result.stages.push_back({provider_->name(), docnos_->doc_count(), ids.size()});

    std::vector<DocId> order;
    if (interm_) {
        result.docs = rerank(*interm_, query, ids, *docnos_, order);
        result.stages.push_back({"interm", ids.size(), order.size()});
        ids = order;
    }
    if (final_) {
        std::size_t n = std::min(top_final_, ids.size());
        std::vector<DocId> top(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n));
        result.docs = rerank(*final_, query, top, *docnos_, order);
        result.stages.push_back({"final", ids.size(), order.size()});
    }
    return result;
}

std::vector<PipelineResult> Pipeline::run_all(std::span<const QueryEntry> queries, unsigned threads) const
{
    std::vector<PipelineResult> out(queries.size());
    threads = std::clamp<unsigned>(threads, 1U, std::max<unsigned>(1U, static_cast<unsigned>(queries.size())));
    if (threads == 1) {
        for (std::size_t i = 0; i < queries.size(); ++i) {
            out[i] = run(queries[i]);
        }
        return out;
    }
    std::vector<std::thread> pool;
    std::exception_ptr failure;
    std::mutex failure_mu;
    for (unsigned t = 0; t < threads; ++t) {
        pool.emplace_back([&, t] {
            try {
                for (std::size_t i = t; i < queries.size(); i += threads) {
                    out[i] = run(queries[i]);
                }
            } catch (...) {
                std::lock_guard lock(failure_mu);
                if (!failure) {
                    failure = std::current_exception();
                }
            }
        });
    }
    for (auto &th : pool) {
        th.join();
    }
    if (failure) {
        std::rethrow_exception(failure);
    }
    return out;
}

RunOutput Pipeline::to_run(std::span<const PipelineResult> results) const
{
    RunOutput run;
    run.run_id = run_id_;
    for (const auto &r : results) {
        run.queries.push_back({r.qid, r.docs});
    }
    std::stable_sort(run.queries.begin(), run.queries.end(),
                     [](const QueryRun &a, const QueryRun &b) { return a.qid < b.qid; });
    return run;
}

}  // namespace hybrid
