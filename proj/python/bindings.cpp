#include <fstream>
#include <sstream>

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "hybrid/binary_io.hpp"
#include "hybrid/server.hpp"
#include "hybrid/workflow.hpp"

namespace py = pybind11;
using namespace hybrid;

namespace {

AnyVector to_vector(const py::handle &obj)
{
    if (py::isinstance<py::dict>(obj)) {
        std::vector<SparseEntry> entries;
        for (auto [k, v] : obj.cast<py::dict>()) {
            entries.push_back({k.cast<TermId>(), v.cast<float>()});
        }
        return SparseVector::from_unsorted(std::move(entries));
    }
    return DenseVector(obj.cast<std::vector<float>>());
}

py::list hits_to_list(const std::vector<SearchHit> &hits)
{
    py::list out;
    for (const auto &h : hits) {
        out.append(py::make_tuple(h.id, h.score));
    }
    return out;
}

QueryEntry to_query(const py::handle &obj)
{
    if (py::isinstance<py::str>(obj)) {
        return QueryEntry{"query", {{"text", obj.cast<std::string>()}}};
    }
    auto fields = obj.cast<std::map<std::string, std::string>>();
    QueryEntry q;
    if (auto it = fields.find("DOCNO"); it != fields.end()) {
        q.docno = it->second;
        fields.erase(it);
    } else {
        q.docno = "query";
    }
    q.fields = std::move(fields);
    return q;
}

py::dict result_to_dict(const PipelineResult &r)
{
    py::list docs;
    for (const auto &d : r.docs) {
        docs.append(py::make_tuple(d.docno, d.score));
    }
    py::list stages;
    for (const auto &s : r.stages) {
        stages.append(py::make_tuple(s.name, s.input, s.output));
    }
    py::dict out;
    out["qid"] = r.qid;
    out["docs"] = docs;
    out["stages"] = stages;
    return out;
}

template <class Index>
void save_to(const Index &index, const std::filesystem::path &path)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    index.save(out);
}

template <class Index>
Index load_from(const std::filesystem::path &path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open " + path.string());
    }
    return Index::load(in);
}

}  // namespace

PYBIND11_MODULE(_core, m)
{
    m.doc() = "Hybrid sparse-dense retrieval engine";
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
    py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);

    m.def("server_banner", &server_banner);
    m.attr("PROTOCOL_VERSION") = kProtocolVersion;

    m.def(
        "space_score",
        [](const std::string &space, const py::handle &a, const py::handle &b) {
            return Space::from_name(space).score(to_vector(a), to_vector(b));
        },
        py::arg("space"), py::arg("a"), py::arg("b"));

    py::class_<BruteForceIndex>(m, "BruteForceIndex")
        .def(py::init([](const std::string &space) { return BruteForceIndex(Space::from_name(space)); }),
             py::arg("space"))
        .def("add", [](BruteForceIndex &self, const py::handle &v) { return self.add(to_vector(v)); })
        .def(
            "search", [](const BruteForceIndex &self, const py::handle &q, std::size_t k) {
                return hits_to_list(self.search(to_vector(q), k));
            },
            py::arg("query"), py::arg("k"))
        .def("__len__", &BruteForceIndex::size);

    py::class_<HnswIndex>(m, "HnswIndex")
        .def(py::init([](const std::string &space, std::uint32_t m, std::uint32_t ef_construction,
                         std::uint64_t seed) {
                 auto p = HnswParams::for_m(m, seed);
                 p.ef_construction = ef_construction;
                 return HnswIndex(Space::from_name(space), p);
             }),
             py::arg("space"), py::arg("M") = 16, py::arg("ef_construction") = 200, py::arg("seed") = 42)
        .def("add", [](HnswIndex &self, const py::handle &v) { return self.insert(to_vector(v)); })
        .def("freeze", &HnswIndex::freeze)
        .def(
            "search", [](const HnswIndex &self, const py::handle &q, std::size_t k, std::size_t ef) {
                auto v = to_vector(q);
                std::vector<SearchHit> hits;
                {
                    py::gil_scoped_release release;
                    hits = self.search(v, k, ef);
                }
                return hits_to_list(hits);
            },
            py::arg("query"), py::arg("k"), py::arg("ef") = 100)
        .def("save", [](const HnswIndex &self, const std::filesystem::path &p) { save_to(self, p); })
        .def_static("load", [](const std::filesystem::path &p) { return load_from<HnswIndex>(p); })
        .def_property_readonly("max_level", &HnswIndex::max_level)
        .def("__len__", &HnswIndex::size);

    py::class_<InvertedIndex>(m, "InvertedIndex")
        .def_static(
            "from_sparse",
            [](const py::list &docs) {
                std::vector<SparseVector> vecs;
                for (const auto &d : docs) {
                    vecs.push_back(std::get<SparseVector>(to_vector(d)));
                }
                return InvertedIndex::build_from_sparse(vecs);
            },
            py::arg("docs"))
        .def(
            "daat_mips",
            [](const InvertedIndex &self, const py::dict &q, std::size_t k) {
                return hits_to_list(self.daat_mips(std::get<SparseVector>(to_vector(q)), k));
            },
            py::arg("query"), py::arg("k"))
        .def(
            "bm25_retrieve",
            [](const InvertedIndex &self, const std::map<TermId, std::uint32_t> &terms, std::size_t k, double k1,
               double b) {
                std::vector<TermCount> q;
                for (auto [t, c] : terms) {
                    q.push_back({t, c});
                }
                return hits_to_list(self.bm25_retrieve(q, k, {k1, b}));
            },
            py::arg("terms"), py::arg("k"), py::arg("k1") = 1.2, py::arg("b") = 0.75)
        .def("save", [](const InvertedIndex &self, const std::filesystem::path &p) { save_to(self, p); })
        .def_static("load", [](const std::filesystem::path &p) { return load_from<InvertedIndex>(p); })
        .def_property_readonly("doc_count", &InvertedIndex::doc_count);

    py::class_<ForwardIndex>(m, "ForwardIndex")
        .def_static("load", &ForwardIndex::load_file, py::arg("path"))
        .def_property_readonly("field_name", &ForwardIndex::field_name)
        .def_property_readonly("doc_count", &ForwardIndex::doc_count)
        .def_property_readonly("vocabulary_size", &ForwardIndex::vocabulary_size)
        .def("docno", &ForwardIndex::docno)
        .def("term_id", &ForwardIndex::term_id)
        .def("tokens", [](const ForwardIndex &self, DocId doc) { return document_tokens(self, doc); })
        .def("build_bm25_index", [](const ForwardIndex &self) { return build_bm25_index(self); });

    m.def("tokenize", &tokenize_parsed, py::arg("text"));
    m.def(
        "ingest",
        [](const std::filesystem::path &jsonl, const std::vector<std::string> &fields, bool positions,
           const std::filesystem::path &out_dir) {
            std::vector<FieldSpec> specs;
            for (const auto &f : fields) {
                specs.push_back(FieldSpec::parse(f));
            }
            return ingest_corpus(jsonl, specs, positions, out_dir);
        },
        py::arg("jsonl"), py::arg("fields") = std::vector<std::string>{"text"}, py::arg("positions") = false,
        py::arg("out_dir"));

    py::class_<Model1Table>(m, "Model1Table")
        .def("prob", py::overload_cast<std::string_view, std::string_view>(&Model1Table::prob, py::const_),
             py::arg("target"), py::arg("source"))
        .def_property("lambda_", &Model1Table::lambda, &Model1Table::set_lambda)
        .def("score",
             [](const Model1Table &self, const std::vector<std::string> &query, const std::vector<std::string> &doc) {
                 return model1_score(query, doc, self);
             })
        .def("save", [](const Model1Table &self, const std::filesystem::path &p) { save_to(self, p); })
        .def_static("load", [](const std::filesystem::path &p) { return load_from<Model1Table>(p); })
        .def_property_readonly("entry_count", &Model1Table::entry_count);

    m.def(
        "train_model1",
        [](const std::vector<std::pair<std::vector<std::string>, std::vector<std::string>>> &pairs, int iterations,
           double prune) {
            std::vector<BitextPair> bitext;
            for (const auto &[src, tgt] : pairs) {
                bitext.push_back({src, tgt});
            }
            Model1Trace trace;
            auto table = model1_train(bitext, {iterations, prune}, &trace);
            return py::make_tuple(std::move(table), trace.log_likelihood);
        },
        py::arg("pairs"), py::arg("iterations") = 20, py::arg("prune") = 1e-6,
        "Pairs are (source tokens, target tokens). Returns the table and the log-likelihood trace.");

    m.def(
        "ndcg_at_k",
        [](const std::vector<int> &grades, const std::vector<int> &ideal, std::size_t k) {
            return ndcg_at_k(grades, ideal, k);
        },
        py::arg("grades"), py::arg("ideal"), py::arg("k") = 10);
    m.def(
        "mrr",
        [](const std::vector<std::string> &ranked, const std::set<std::string> &relevant, std::size_t cutoff) {
            return mrr(ranked, relevant, cutoff);
        },
        py::arg("ranked"), py::arg("relevant"), py::arg("cutoff") = 0);

    m.def(
        "coordinate_ascent",
        [](const std::vector<std::vector<std::vector<double>>> &rows, const std::vector<std::vector<int>> &grades,
           const std::vector<std::string> &columns, const std::string &metric, int restarts, std::uint64_t seed) {
            if (rows.size() != grades.size()) {
                throw std::invalid_argument("rows and grades differ in query count");
            }
            std::vector<QueryGroup> groups;
            for (std::size_t q = 0; q < rows.size(); ++q) {
                QueryGroup g;
                g.qid = "q" + std::to_string(q);
                g.rows = rows[q];
                g.grades = grades[q];
                for (std::size_t i = 0; i < g.rows.size(); ++i) {
                    g.docnos.push_back("d" + std::to_string(i));
                }
                groups.push_back(std::move(g));
            }
            CoordinateAscentOptions opt;
            opt.metric = Metric::parse(metric);
            opt.random_restarts = restarts;
            opt.seed = seed;
            auto r = coordinate_ascent_train(groups, columns, opt);
            py::dict out;
            out["weights"] = r.model.weights;
            out["metric"] = r.metric;
            out["trace"] = r.trace;
            out["single_feature"] = r.single_feature;
            return out;
        },
        py::arg("rows"), py::arg("grades"), py::arg("columns"), py::arg("metric") = "ndcg@10",
        py::arg("restarts") = 5, py::arg("seed") = 42);

    m.def(
        "evaluate",
        [](const std::filesystem::path &run_path, const std::filesystem::path &qrels_path, std::size_t k,
           std::size_t mrr_cutoff) {
            std::ifstream in(run_path);
            if (!in) {
                throw std::runtime_error("cannot open " + run_path.string());
            }
            auto ev = evaluate_run(read_trec_run(in), Qrels::load_file(qrels_path), k, mrr_cutoff);
            py::dict per_query;
            for (const auto &q : ev.queries) {
                per_query[py::str(q.qid)] = py::make_tuple(q.ndcg, q.mrr);
            }
            py::dict out;
            out["ndcg"] = ev.mean_ndcg;
            out["mrr"] = ev.mean_mrr;
            out["queries"] = per_query;
            return out;
        },
        py::arg("run"), py::arg("qrels"), py::arg("k") = 10, py::arg("mrr_cutoff") = 0);

    py::class_<Pipeline, std::shared_ptr<Pipeline>>(m, "Pipeline")
        .def(py::init([](const std::filesystem::path &descriptor, std::size_t experiment) {
                 return std::make_shared<Pipeline>(ExperimentDescriptor::load_file(descriptor, experiment));
             }),
             py::arg("descriptor"), py::arg("experiment") = 0)
        .def(
            "run",
            [](const Pipeline &self, const py::handle &query) {
                auto q = to_query(query);
                PipelineResult r;
                {
                    py::gil_scoped_release release;
                    r = self.run(q);
                }
                return result_to_dict(r);
            },
            py::arg("query"))
        .def(
            "run_file",
            [](const Pipeline &self, const std::filesystem::path &queries, std::size_t k, unsigned threads) {
                auto entries = read_jsonl_file(queries);
                std::ostringstream out;
                {
                    py::gil_scoped_release release;
                    write_trec_run(out, self.to_run(self.run_all(entries, threads)), k);
                }
                return out.str();
            },
            py::arg("queries"), py::arg("k") = 10, py::arg("threads") = 1,
            "Runs a JSONL query file and returns the TREC run text.")
        .def(
            "handle",
            [](const std::shared_ptr<Pipeline> &self, const std::string &line) {
                py::gil_scoped_release release;
                return RequestHandler(self).handle_line(line);
            },
            py::arg("line"), "Answers one wire-protocol request line in process.")
        .def_property_readonly("run_id", &Pipeline::run_id);

    py::class_<QueryServer>(m, "QueryServer")
        .def(py::init([](const std::shared_ptr<Pipeline> &p) { return std::make_unique<QueryServer>(p); }),
             py::arg("pipeline"))
        .def("start", &QueryServer::start, py::arg("host") = "127.0.0.1", py::arg("port") = 0)
        .def("stop", &QueryServer::stop, py::call_guard<py::gil_scoped_release>())
        .def_property_readonly("port", &QueryServer::port);
}
