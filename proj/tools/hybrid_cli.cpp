// Command line front end: ingest, index, train, export, query, evaluate, serve.

#include <csignal>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "hybrid/knn_export.hpp"
#include "hybrid/server.hpp"
#include "hybrid/workflow.hpp"

using namespace hybrid;

namespace {

volatile std::sig_atomic_t g_stop = 0;

void on_signal(int)
{
    g_stop = 1;
}

std::vector<FieldSpec> parse_fields(const std::string &list)
{
    std::vector<FieldSpec> specs;
    std::stringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) {
            specs.push_back(FieldSpec::parse(item));
        }
    }
    if (specs.empty()) {
        throw ConfigError("no fields given");
    }
    return specs;
}

std::vector<double> parse_weights(const std::string &list)
{
    std::vector<double> out;
    std::stringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ',')) {
        std::size_t used = 0;
        double v = std::stod(item, &used);
        if (used != item.size()) {
            throw ConfigError("bad weight '" + item + "'");
        }
        out.push_back(v);
    }
    return out;
}

/// Writes to `path`, or stdout when empty or "-".
class Output {
   public:
    explicit Output(const std::string &path)
    {
        if (!path.empty() && path != "-") {
            file_.open(path);
            if (!file_) {
                throw std::runtime_error("cannot write " + path);
            }
        }
    }
    std::ostream &stream() { return file_.is_open() ? file_ : std::cout; }

   private:
    std::ofstream file_;
};

struct Common {
    std::string config;
    std::string queries;
    std::string qrels;
    std::string out;
    std::size_t k = 10;
    unsigned threads = 1;
    std::uint64_t seed = 42;
    std::size_t experiment = 0;
};

int cmd_ingest(const std::string &input, const std::string &fields, bool positions, const Common &c)
{
    auto specs = parse_fields(fields);
    auto indices = ingest_corpus(input, specs, positions, c.out);
    for (const auto &[name, idx] : indices) {
        std::cerr << name << ": " << idx.doc_count() << " docs, " << idx.vocabulary_size() << " terms -> "
                  << forward_file(c.out, name).string() << '\n';
    }
    return 0;
}

int cmd_build_index(const std::string &fwd, const std::string &field, const Common &c)
{
    auto f = ForwardIndex::load_file(forward_file(fwd, field));
    auto index = build_bm25_index(f);
    auto path = c.out.empty() ? (std::filesystem::path(fwd) / (field + ".inv")).string() : c.out;
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write " + path);
    }
    index.save(out);
    std::cerr << "inverted index: " << index.doc_count() << " docs, " << index.term_space() << " terms -> " << path
              << '\n';
    return 0;
}

int cmd_train_model1(const std::string &fwd, const std::string &field, const std::string &query_field,
                     std::size_t chunk, int iterations, double prune, double lambda, const Common &c)
{
    auto f = ForwardIndex::load_file(forward_file(fwd, field));
    auto queries = read_jsonl_file(c.queries);
    auto qrels = Qrels::load_file(c.qrels);
    auto bitext = relevance_bitext(f, queries, qrels, query_field.empty() ? field : query_field, chunk);
    if (bitext.empty()) {
        throw std::runtime_error("no training pairs: no query has a judged-relevant document in the index");
    }
    Model1Trace trace;
    auto table = model1_train(bitext, {iterations, prune}, &trace);
    table.set_lambda(lambda);
    table.set_collection_model(collection_model(f));
    std::ofstream out(c.out, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write " + c.out);
    }
    table.save(out);
    std::cerr << "Model 1: " << bitext.size() << " pairs, " << table.entry_count() << " entries, log-likelihood "
              << trace.log_likelihood.front() << " -> " << trace.log_likelihood.back() << '\n';
    return 0;
}

int cmd_train_fusion(const std::string &extractors, const std::string &metric, int restarts,
                     const std::string &ranklib, const Common &c)
{
    auto d = ExperimentDescriptor::load_file(c.config, c.experiment);
    if (d.test_only) {
        throw ConfigError("experiment '" + d.run_id + "' is marked testOnly");
    }
    auto store = std::make_shared<const ForwardStore>(d.forward_dir);
    std::string docno_field;
    auto provider = make_provider(d.provider, d.provider_config, store, &docno_field);
    auto configs = load_extractor_configs(extractors);
    CompositeExtractor extr(configs, {store, std::filesystem::path(extractors).parent_path()});
    auto queries = read_jsonl_file(c.queries);
    auto qrels = Qrels::load_file(c.qrels);
    auto data = collect_training_data(*provider, extr, *store->get(docno_field), queries, qrels, d.cand_qty,
                                      c.threads);
    if (!ranklib.empty()) {
        std::ofstream rl(ranklib);
        if (!rl) {
            throw std::runtime_error("cannot write " + ranklib);
        }
        export_ranklib(rl, data.features, qrels);
    }
    CoordinateAscentOptions opt;
    opt.metric = Metric::parse(metric);
    opt.random_restarts = restarts;
    opt.seed = c.seed;
    opt.threads = c.threads;
    auto result = coordinate_ascent_train(data.groups, data.columns, opt);
    result.model.save_file(c.out);
    std::cerr << std::setprecision(6);
    for (std::size_t i = 0; i < data.columns.size(); ++i) {
        std::cerr << "single feature " << data.columns[i] << ": " << opt.metric.name() << ' '
                  << result.single_feature[i] << '\n';
    }
    std::cerr << "trained " << opt.metric.name() << ' ' << result.metric << " (restart " << result.best_restart
              << ", " << result.trace.size() - 1 << " accepted steps) -> " << c.out << '\n';
    return 0;
}

int cmd_export(const std::string &extractors, const std::string &fwd, const std::string &scenario,
               const std::string &weights, const std::string &hnsw_out, std::uint32_t m, std::uint32_t ef_c,
               const Common &c)
{
    auto store = std::make_shared<const ForwardStore>(fwd);
    auto configs = load_extractor_configs(extractors);
    auto base = std::filesystem::absolute(std::filesystem::path(extractors)).parent_path();
    auto w = weights.empty() ? std::vector<double>{} : parse_weights(weights);
    auto exporter = make_exporter(configs, {store, base}, w);
    auto sc = scenario_from_name(scenario);
    // Every field shares the collection, so any extractor's field gives the count.
    auto doc_count = store->get(param_required(configs.front().params, "indexFieldName"))->doc_count();
    auto data = export_vectors(exporter, sc, doc_count);
    data.manifest.extractors = configs;
    data.manifest.config_base_dir = base.string();
    write_export(c.out, data);
    std::cerr << "exported " << doc_count << " vectors (" << scenario_name(sc) << ", space "
              << data.manifest.space_name() << ") -> " << c.out << '\n';
    if (!hnsw_out.empty()) {
        auto params = HnswParams::for_m(m, c.seed);
        params.ef_construction = ef_c;
        HnswIndex graph(data.vectors.space(), params);
        for (DocId d = 0; d < data.vectors.size(); ++d) {
            graph.insert(data.vectors.vector(d));
        }
        graph.freeze();
        std::ofstream out(hnsw_out, std::ios::binary);
        if (!out) {
            throw std::runtime_error("cannot write " + hnsw_out);
        }
        graph.save(out);
        std::cerr << "HNSW graph (M=" << m << ", efConstruction=" << ef_c << ") -> " << hnsw_out << '\n';
    }
    return 0;
}

int cmd_query(bool stages, const Common &c)
{
    auto d = ExperimentDescriptor::load_file(c.config, c.experiment);
    Pipeline pipeline(d);
    auto queries = read_jsonl_file(c.queries);
    auto results = pipeline.run_all(queries, c.threads);
    if (stages) {
        for (const auto &r : results) {
            std::cerr << r.qid;
            for (const auto &s : r.stages) {
                std::cerr << "  " << s.name << ' ' << s.input << "->" << s.output;
            }
            std::cerr << '\n';
        }
    }
    Output out(c.out);
    write_trec_run(out.stream(), pipeline.to_run(results), c.k);
    return 0;
}

int cmd_evaluate(const std::string &run_path, std::size_t mrr_cutoff, const Common &c)
{
    std::ifstream in(run_path);
    if (!in) {
        throw std::runtime_error("cannot open run file " + run_path);
    }
    auto run = read_trec_run(in);
    auto qrels = Qrels::load_file(c.qrels);
    auto ev = evaluate_run(run, qrels, c.k, mrr_cutoff);
    Output out(c.out);
    auto &os = out.stream();
    os << std::fixed << std::setprecision(4);
    const std::string mrr_name = mrr_cutoff == 0 ? "mrr" : "mrr@" + std::to_string(mrr_cutoff);
    os << "qid\tndcg@" << c.k << '\t' << mrr_name << '\n';
    for (const auto &q : ev.queries) {
        os << q.qid << '\t' << q.ndcg << '\t' << q.mrr << '\n';
    }
    os << "all\t" << ev.mean_ndcg << '\t' << ev.mean_mrr << '\n';
    return 0;
}

int cmd_serve(const std::string &host, std::uint16_t port, const Common &c)
{
    auto d = ExperimentDescriptor::load_file(c.config, c.experiment);
    auto pipeline = std::make_shared<const Pipeline>(d);
    QueryServer server(pipeline);
    server.start(host, port);
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    std::cout << "listening on " << host << ':' << server.port() << std::endl;
    while (g_stop == 0) {
        std::this_thread::sleep_for(std::chrono::milliseconds(100));
    }
    server.stop();
    return 0;
}

}  // namespace

int main(int argc, char **argv)
{
    CLI::App app{"Hybrid sparse-dense retrieval toolkit"};
    app.require_subcommand(1);
    Common c;

    auto add_out = [&](CLI::App *sub, bool required) {
        auto *o = sub->add_option("--out", c.out, "Output path");
        if (required) {
            o->required();
        }
    };

    std::string input, fields = "text", fwd, field = "text", query_field, run_path, extractors, metric = "ndcg@10";
    std::string scenario = "per-field", weights, hnsw_out, ranklib, host = "127.0.0.1";
    bool positions = false, stages = false;
    std::size_t chunk = 0, mrr_cutoff = 0;
    int iterations = 20, restarts = 5;
    double prune = 1e-6, lambda = 0.1;
    std::uint32_t m = 16, ef_c = 200;
    std::uint16_t port = 8765;

    auto *ingest = app.add_subcommand("ingest", "Build forward indices from a JSONL corpus");
    ingest->add_option("--input", input, "JSONL documents")->required()->check(CLI::ExistingFile);
    ingest->add_option("--fields", fields, "Comma-separated field specs, e.g. text,title:raw");
    ingest->add_flag("--positions", positions, "Store term sequences (needed by proximity)");
    add_out(ingest, true);

    auto *build = app.add_subcommand("build-index", "Build a BM25 inverted index from a forward index");
    build->add_option("--fwd", fwd, "Forward index directory")->required()->check(CLI::ExistingDirectory);
    build->add_option("--field", field, "Parsed field");
    add_out(build, false);

    auto *m1 = app.add_subcommand("train-model1", "Train a Model 1 table on query/relevant-document pairs");
    m1->add_option("--fwd", fwd, "Forward index directory")->required()->check(CLI::ExistingDirectory);
    m1->add_option("--field", field, "Document field");
    m1->add_option("--query-field", query_field, "Query field (defaults to --field)");
    m1->add_option("--queries", c.queries, "Training queries (JSONL)")->required()->check(CLI::ExistingFile);
    m1->add_option("--qrels", c.qrels, "Relevance judgments")->required()->check(CLI::ExistingFile);
    m1->add_option("--chunk", chunk, "Split documents into chunks of at most this many tokens (0 = whole)");
    m1->add_option("--iterations", iterations, "EM iterations");
    m1->add_option("--prune", prune, "Drop translation probabilities below this");
    m1->add_option("--lambda", lambda, "Smoothing weight of the collection model");
    add_out(m1, true);

    auto *fusion = app.add_subcommand("train-fusion", "Train a linear fusion model by coordinate ascent");
    fusion->add_option("--config", c.config, "Experiment descriptor (candidate provider)")
        ->required()
        ->check(CLI::ExistingFile);
    fusion->add_option("--experiment", c.experiment, "Index into a descriptor array");
    fusion->add_option("--extractors", extractors, "Feature extractor configuration")
        ->required()
        ->check(CLI::ExistingFile);
    fusion->add_option("--queries", c.queries, "Training queries (JSONL)")->required()->check(CLI::ExistingFile);
    fusion->add_option("--qrels", c.qrels, "Relevance judgments")->required()->check(CLI::ExistingFile);
    fusion->add_option("--metric", metric, "ndcg@k or mrr");
    fusion->add_option("--restarts", restarts, "Random restarts");
    fusion->add_option("--seed", c.seed, "Random seed");
    fusion->add_option("--threads", c.threads, "Worker threads");
    fusion->add_option("--ranklib", ranklib, "Also write the features in RankLib format");
    add_out(fusion, true);

    auto *exp = app.add_subcommand("export-knn", "Export query/document vectors for k-NN search");
    exp->add_option("--extractors", extractors, "Extractor configuration (bm25 / avgWordEmbed cosine)")
        ->required()
        ->check(CLI::ExistingFile);
    exp->add_option("--fwd", fwd, "Forward index directory")->required()->check(CLI::ExistingDirectory);
    exp->add_option("--scenario", scenario, "per-field or composite");
    exp->add_option("--weights", weights, "Comma-separated field weights");
    exp->add_option("--hnsw-out", hnsw_out, "Also build and save an HNSW graph");
    exp->add_option("--M", m, "HNSW M");
    exp->add_option("--ef-construction", ef_c, "HNSW efConstruction");
    exp->add_option("--seed", c.seed, "HNSW level seed");
    add_out(exp, true);

    auto *query = app.add_subcommand("query", "Run queries through an experiment pipeline");
    query->add_option("--config", c.config, "Experiment descriptor")->required()->check(CLI::ExistingFile);
    query->add_option("--experiment", c.experiment, "Index into a descriptor array");
    query->add_option("--queries", c.queries, "Queries (JSONL)")->required()->check(CLI::ExistingFile);
    query->add_option("--k", c.k, "Results per query in the run file");
    query->add_option("--threads", c.threads, "Worker threads");
    query->add_flag("--stages", stages, "Print per-stage candidate counts to stderr");
    add_out(query, false);

    auto *eval = app.add_subcommand("evaluate", "Score a TREC run against relevance judgments");
    eval->add_option("--run", run_path, "TREC run file")->required()->check(CLI::ExistingFile);
    eval->add_option("--qrels", c.qrels, "Relevance judgments")->required()->check(CLI::ExistingFile);
    eval->add_option("--k", c.k, "NDCG depth");
    eval->add_option("--mrr-cutoff", mrr_cutoff, "MRR rank cutoff (0 = none)");
    add_out(eval, false);

    auto *serve = app.add_subcommand("serve", "Serve queries over newline-delimited JSON on TCP");
    serve->add_option("--config", c.config, "Experiment descriptor")->required()->check(CLI::ExistingFile);
    serve->add_option("--experiment", c.experiment, "Index into a descriptor array");
    serve->add_option("--host", host, "Bind address");
    serve->add_option("--port", port, "Port (0 picks a free one)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (c.k == 0) {
            throw ConfigError("--k must be at least 1");
        }
        if (*ingest) {
            return cmd_ingest(input, fields, positions, c);
        }
        if (*build) {
            return cmd_build_index(fwd, field, c);
        }
        if (*m1) {
            return cmd_train_model1(fwd, field, query_field, chunk, iterations, prune, lambda, c);
        }
        if (*fusion) {
            return cmd_train_fusion(extractors, metric, restarts, ranklib, c);
        }
        if (*exp) {
            return cmd_export(extractors, fwd, scenario, weights, hnsw_out, m, ef_c, c);
        }
        if (*query) {
            return cmd_query(stages, c);
        }
        if (*eval) {
            return cmd_evaluate(run_path, mrr_cutoff, c);
        }
        if (*serve) {
            return cmd_serve(host, port, c);
        }
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
