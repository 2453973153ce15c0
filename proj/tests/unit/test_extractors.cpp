#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "hybrid/embeddings.hpp"
#include "hybrid/extractors.hpp"
#include "hybrid/forward_index.hpp"
#include "hybrid/inverted_index.hpp"
#include "hybrid/model1.hpp"
#include "test_util.hpp"

using namespace hybrid;
using nlohmann::json;

namespace {

std::shared_ptr<ForwardIndex> make_field(const std::string &name, const std::vector<std::string> &docs,
                                         bool positions = true)
{
    auto f = std::make_shared<ForwardIndex>(name, FieldKind::Parsed, positions);
    for (std::size_t i = 0; i < docs.size(); ++i) {
        f->add_document("d" + std::to_string(i), docs[i]);
    }
    return f;
}

QueryEntry query(const std::string &text, const std::string &field = "text")
{
    QueryEntry q;
    q.docno = "q";
    q.fields["text"] = text;
    q.fields[field] = text;
    return q;
}

std::vector<std::string> random_docs(std::uint64_t seed, std::size_t n, int vocab)
{
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> len(3, 40);
    std::uniform_int_distribution<int> word(0, vocab - 1);
    std::vector<std::string> docs;
    for (std::size_t i = 0; i < n; ++i) {
        std::string d;
        int l = len(rng);
        for (int j = 0; j < l; ++j) {
            d += (j ? " " : "") + std::string("w") + std::to_string(word(rng));
        }
        docs.push_back(d);
    }
    return docs;
}

std::vector<DocId> all_docs(const ForwardIndex &f)
{
    std::vector<DocId> d(f.doc_count());
    for (DocId i = 0; i < d.size(); ++i) {
        d[i] = i;
    }
    return d;
}

// Pair occurrences by scanning every window explicitly.
PairOccurrences occurrences_oracle(std::span<const TermId> seq, TermId a, TermId b, std::uint32_t w)
{
    PairOccurrences out;
    for (std::size_t p = 0; p < seq.size(); ++p) {
        if (seq[p] != a) {
            continue;
        }
        bool ordered = false;
        bool unordered = false;
        for (std::size_t r = 0; r < seq.size(); ++r) {
            if (r == p || seq[r] != b) {
                continue;
            }
            auto gap = r > p ? r - p : p - r;
            if (gap <= w) {
                unordered = true;
                ordered = ordered || r > p;
            }
        }
        out.ordered += ordered;
        out.unordered += unordered;
    }
    return out;
}

double idf(double n, double df) { return std::log(1.0 + (n - df + 0.5) / (df + 0.5)); }

double tfn(double tf, double dl, double avg, double k1, double b)
{
    return tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * dl / avg));
}

EmbeddingTable table2d(const std::map<std::string, std::pair<float, float>> &vecs)
{
    EmbeddingTable t(2);
    for (const auto &[tok, v] : vecs) {
        t.add(tok, DenseVector{v.first, v.second});
    }
    return t;
}

}  // namespace

TEST(Bm25Extractor, ColumnEqualsIndexScore)
{
    auto field = make_field("text", random_docs(1, 120, 40));
    auto inv = build_bm25_index(*field);
    Bm25Extractor ex(field, "text", {1.2, 0.75});
    auto q = query("w1 w7 w7 w33 nothere");
    auto docs = all_docs(*field);
    auto rows = ex.score(q, docs, nullptr);
    auto terms = ex.query_terms(q);
    ASSERT_EQ(rows.size(), docs.size());
    for (DocId d : docs) {
        EXPECT_DOUBLE_EQ(rows[d][0], inv.bm25_score(terms, d, {1.2, 0.75}));
    }
    EXPECT_EQ(ex.feature_names(), (std::vector<std::string>{"bm25:text"}));
}

TEST(Bm25Extractor, VectorsReproduceScore)
{
    auto field = make_field("text", random_docs(2, 80, 30));
    Bm25Extractor ex(field, "text", {});
    auto q = query("w3 w3 w9 w21");
    auto qv = ex.query_vector(q);
    auto rows = ex.score(q, all_docs(*field), nullptr);
    for (DocId d = 0; d < field->doc_count(); ++d) {
        EXPECT_NEAR(dot(qv, ex.doc_vector(d)), rows[d][0], 1e-5 * std::max(1.0, rows[d][0]));
    }
}

TEST(PairOccurrences, HandCounts)
{
    auto f = make_field("text", {"a b", "b x x x x x x x x a", "a x b a"});
    TermId a = *f->term_id("a");
    TermId b = *f->term_id("b");
    auto occ = count_pair_occurrences(f->sequence(0), a, b, 2);
    EXPECT_EQ(occ.ordered, 1U);
    EXPECT_EQ(occ.unordered, 1U);
    occ = count_pair_occurrences(f->sequence(1), a, b, 8);
    EXPECT_EQ(occ.ordered, 0U);
    EXPECT_EQ(occ.unordered, 0U);
    occ = count_pair_occurrences(f->sequence(1), a, b, 9);
    EXPECT_EQ(occ.ordered, 0U);
    EXPECT_EQ(occ.unordered, 1U);
    // a(0) sees b(2) ahead; a(3) sees b(2) behind
    occ = count_pair_occurrences(f->sequence(2), a, b, 2);
    EXPECT_EQ(occ.ordered, 1U);
    EXPECT_EQ(occ.unordered, 2U);
}

TEST(PairOccurrences, MatchesWindowScan)
{
    std::mt19937_64 rng(6);
    std::uniform_int_distribution<TermId> term(0, 4);
    for (int trial = 0; trial < 300; ++trial) {
        std::vector<TermId> seq(std::uniform_int_distribution<int>(0, 30)(rng));
        for (auto &t : seq) {
            t = term(rng);
        }
        for (std::uint32_t w : {1U, 2U, 5U, 8U}) {
            auto got = count_pair_occurrences(seq, 0, 1, w);
            auto want = occurrences_oracle(seq, 0, 1, w);
            EXPECT_EQ(got.ordered, want.ordered);
            EXPECT_EQ(got.unordered, want.unordered);
            auto same = count_pair_occurrences(seq, 2, 2, w);
            auto same_want = occurrences_oracle(seq, 2, 2, w);
            EXPECT_EQ(same.unordered, same_want.unordered);
        }
    }
}

TEST(ProximityExtractor, SingleTermAndOovQueriesScoreZero)
{
    auto f = make_field("text", {"a b c", "c b a"});
    ProximityExtractor ex(f, "text", {});
    auto rows = ex.score(query("a"), all_docs(*f), nullptr);
    EXPECT_EQ(rows[0][0], 0.0);
    rows = ex.score(query("a zz yy"), all_docs(*f), nullptr);
    EXPECT_EQ(rows[1][0], 0.0);
    rows = ex.score(query("a a"), all_docs(*f), nullptr);
    EXPECT_EQ(rows[0][0], 0.0);
}

TEST(ProximityExtractor, MatchesBm25OverPairsOracle)
{
    auto texts = random_docs(3, 150, 12);
    auto f = make_field("text", texts);
    ProximityParams params;
    params.window = 4;
    ProximityExtractor ex(f, "text", params);
    auto q = query("w1 w2 w5");
    auto terms = ex.query_terms(q);
    ASSERT_EQ(terms.size(), 3U);
    const double n = static_cast<double>(f->doc_count());
    const double avg = f->avg_doc_length();
    std::map<std::pair<TermId, TermId>, std::pair<int, int>> df;
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = i + 1; j < 3; ++j) {
            for (DocId d = 0; d < f->doc_count(); ++d) {
                auto o = occurrences_oracle(f->sequence(d), terms[i], terms[j], 4);
                df[{terms[i], terms[j]}].first += o.ordered > 0;
                df[{terms[i], terms[j]}].second += o.unordered > 0;
            }
        }
    }
    auto rows = ex.score(q, all_docs(*f), nullptr);
    for (DocId d = 0; d < f->doc_count(); ++d) {
        double want = 0.0;
        for (std::size_t i = 0; i < 3; ++i) {
            for (std::size_t j = i + 1; j < 3; ++j) {
                auto o = occurrences_oracle(f->sequence(d), terms[i], terms[j], 4);
                auto [dfo, dfu] = df[{terms[i], terms[j]}];
                double dl = f->doc_length(d);
                if (o.ordered > 0) {
                    want += idf(n, dfo) * tfn(o.ordered, dl, avg, 1.2, 0.75);
                }
                if (o.unordered > 0) {
                    want += idf(n, dfu) * tfn(o.unordered, dl, avg, 1.2, 0.75);
                }
            }
        }
        EXPECT_NEAR(rows[d][0], want, 1e-9);
    }
}

TEST(ProximityExtractor, RequiresPositions)
{
    auto f = make_field("text", {"a b"}, false);
    EXPECT_THROW(ProximityExtractor(f, "text", {}), ConfigError);
}

TEST(Model1Extractor, MatchesDirectScore)
{
    auto f = make_field("text", {"x y y", "z", "x q"});
    std::vector<BitextPair> bitext{{{"x"}, {"a"}}, {{"y", "x"}, {"b", "a"}}, {{"z"}, {"c"}}};
    auto trained = model1_train(bitext);
    trained.set_collection_model(collection_model(*f));
    auto table = std::make_shared<const Model1Table>(std::move(trained));
    Model1Extractor ex(f, "text", table);
    auto q = query("a b c oov");
    auto rows = ex.score(q, all_docs(*f), nullptr);
    std::vector<std::string> qt{"a", "b", "c", "oov"};
    std::vector<std::vector<std::string>> docs{{"x", "y", "y"}, {"z"}, {"x", "q"}};
    for (DocId d = 0; d < 3; ++d) {
        EXPECT_NEAR(rows[d][0], model1_score(qt, docs[d], *table), 1e-12);
    }
}

TEST(Embeddings, TextFormat)
{
    std::istringstream in("2 3\nfoo 1 2 3\nbar 0.5 0 -1\n");
    auto t = EmbeddingTable::load_text(in);
    EXPECT_EQ(t.dim(), 3U);
    EXPECT_EQ(t.size(), 2U);
    EXPECT_EQ(*t.find("bar"), (DenseVector{0.5F, 0.0F, -1.0F}));
    EXPECT_EQ(t.find("baz"), nullptr);
    std::ostringstream out;
    t.save_text(out);
    std::istringstream again(out.str());
    auto t2 = EmbeddingTable::load_text(again);
    EXPECT_EQ(*t2.find("foo"), *t.find("foo"));
    std::istringstream short_line("1 3\nfoo 1 2\n");
    EXPECT_THROW(EmbeddingTable::load_text(short_line), std::runtime_error);
    std::istringstream bad_count("3 1\nfoo 1\n");
    EXPECT_THROW(EmbeddingTable::load_text(bad_count), std::runtime_error);
}

TEST(AvgEmbed, IdenticalBagsGiveZeroL2)
{
    auto f = make_field("text", {"a b b", "c"});
    auto t = table2d({{"a", {1, 0}}, {"b", {0.3F, 0.9F}}, {"c", {-1, 2}}});
    std::vector<std::string> qs{"b", "a", "b"};
    std::vector<std::string> ds{"a", "b", "b"};
    auto v = avg_embed_feature(qs, ds, t, t, IdfLookup(*f), {});
    EXPECT_NEAR(v.value, 0.0, 1e-7);
    EXPECT_FALSE(v.flagged);
}

TEST(AvgEmbed, OrthogonalCosineIsZero)
{
    auto f = make_field("text", {"a", "b"});
    auto t = table2d({{"a", {1, 0}}, {"b", {0, 1}}});
    std::vector<std::string> qs{"a"};
    std::vector<std::string> ds{"b"};
    AvgEmbedParams p{true, true, EmbedDistance::Cosine};
    EXPECT_NEAR(avg_embed_feature(qs, ds, t, t, IdfLookup(*f), p).value, 0.0, 1e-12);
}

TEST(AvgEmbed, HandComputedCentroidDistance)
{
    // N=3; df(a)=2, df(b)=1, df(c)=1
    auto f = make_field("text", {"a b", "a", "c"});
    auto qt = table2d({{"a", {1, 0}}, {"b", {0, 1}}});
    auto dt = table2d({{"a", {1, 1}}, {"c", {2, 0}}});
    const double idf_a = std::log(1.0 + (3 - 2 + 0.5) / (2 + 0.5));
    const double idf_b = std::log(1.0 + (3 - 1 + 0.5) / (1 + 0.5));
    const double idf_c = std::log(1.0 + (3 - 1 + 0.5) / (1 + 0.5));
    // query "a b b": [idf_a, 2 idf_b]; doc "a c": [idf_a + 2 idf_c, idf_a]
    double q0 = idf_a;
    double q1 = 2 * idf_b;
    double d0 = idf_a + 2 * idf_c;
    double d1 = idf_a;
    double qn = std::hypot(q0, q1);
    double dn = std::hypot(d0, d1);
    double want = std::hypot(q0 / qn - d0 / dn, q1 / qn - d1 / dn);
    std::vector<std::string> qs{"a", "b", "b"};
    std::vector<std::string> ds{"a", "c"};
    auto got = avg_embed_feature(qs, ds, qt, dt, IdfLookup(*f), {true, true, EmbedDistance::L2});
    EXPECT_NEAR(got.value, want, 1e-6);

    // IDF and normalization off: plain summed vectors
    double raw = std::hypot(1.0 - 3.0, 2.0 - 1.0);
    got = avg_embed_feature(qs, ds, qt, dt, IdfLookup(*f), {false, false, EmbedDistance::L2});
    EXPECT_NEAR(got.value, raw, 1e-6);
}

TEST(AvgEmbed, MissingVocabularyFlagged)
{
    auto f = make_field("text", {"a"});
    auto t = table2d({{"a", {1, 0}}});
    std::vector<std::string> qs{"zzz"};
    std::vector<std::string> ds{"a"};
    auto v = avg_embed_feature(qs, ds, t, t, IdfLookup(*f), {});
    EXPECT_TRUE(v.flagged);
    EXPECT_EQ(v.value, kMissingEmbedL2);
    v = avg_embed_feature(qs, ds, t, t, IdfLookup(*f), {true, true, EmbedDistance::Cosine});
    EXPECT_TRUE(v.flagged);
    EXPECT_EQ(v.value, 0.0);
}

TEST(AvgEmbed, OutputRanges)
{
    auto texts = random_docs(4, 50, 20);
    auto f = make_field("text", texts);
    std::mt19937_64 rng(4);
    EmbeddingTable t(5);
    for (int i = 0; i < 20; ++i) {
        t.add("w" + std::to_string(i), testutil::random_dense(rng, 5));
    }
    auto tq = std::make_shared<EmbeddingTable>(t);
    for (auto dist : {EmbedDistance::L2, EmbedDistance::Cosine}) {
        AvgEmbedExtractor ex(f, "text", tq, tq, {true, true, dist});
        std::vector<bool> flagged(f->doc_count(), false);
        auto rows = ex.score(query("w1 w2 w3"), all_docs(*f), &flagged);
        for (const auto &r : rows) {
            if (dist == EmbedDistance::Cosine) {
                EXPECT_GE(r[0], -1.0);
                EXPECT_LE(r[0], 1.0);
            } else {
                EXPECT_GE(r[0], 0.0);
            }
        }
    }
}

TEST(AvgEmbed, DimensionMismatchRejected)
{
    auto f = make_field("text", {"a"});
    auto t2 = table2d({{"a", {1, 0}}});
    EmbeddingTable t3(3);
    t3.add("a", DenseVector{1, 0, 0});
    std::vector<std::string> qs{"a"};
    EXPECT_THROW((void)avg_embed_feature(qs, qs, t2, t3, IdfLookup(*f), {}), std::invalid_argument);
    EXPECT_THROW(t2.add("b", DenseVector{1}), std::invalid_argument);
}

class ConfigTest : public ::testing::Test {
   protected:
    void SetUp() override
    {
        auto store = std::make_shared<ForwardStore>(dir_.path());
        ForwardIndex text("text", FieldKind::Parsed, true);
        ForwardIndex unlemm("text_unlemm", FieldKind::Parsed, true);
        for (const auto &[a, b] : std::vector<std::pair<std::string, std::string>>{
                 {"nfl team represent super bowl 50", "nfl teams represented super bowl 50"},
                 {"team win game", "teams won games"},
                 {"super market", "super markets"}}) {
            text.add_document("d" + std::to_string(text.doc_count()), a);
            unlemm.add_document("d" + std::to_string(unlemm.doc_count()), b);
        }
        store->add(std::move(text));
        unlemm.save_file(forward_file(dir_.path(), "text_unlemm"));
        res_ = {store, dir_.path()};
        std::filesystem::create_directories(dir_ / "embeds");
        testutil::write_file(dir_ / "embeds/q.txt", "3 2\nnfl 1 0\nteams 0 1\nsuper 1 1\n");
        testutil::write_file(dir_ / "embeds/d.txt", "3 2\nnfl 1 0\nteams 0.5 0.5\nsuper -1 1\n");
    }

    testutil::TempDir dir_{"cfg"};
    ExtractorResources res_;
};

TEST_F(ConfigTest, PaperSampleGivesTwoColumns)
{
    auto cfg = json::parse(R"({"extractors": [
      {"type": "TFIDFSimilarity",
       "params": {"indexFieldName": "text", "queryFieldName": "text", "similType": "bm25", "k1": "1.2", "b": "0.75"}},
      {"type": "avgWordEmbed",
       "params": {"indexFieldName": "text_unlemm", "queryFieldName": "text_unlemm",
                  "queryEmbedFile": "embeds/q.txt", "docEmbedFile": "embeds/d.txt",
                  "useIDFWeight": "True", "useL2Norm": "True", "distType": "l2"}}
    ]})");
    auto configs = parse_extractor_configs(cfg);
    ASSERT_EQ(configs.size(), 2U);
    CompositeExtractor comp(configs, res_);
    EXPECT_EQ(comp.columns(), (std::vector<std::string>{"bm25:text", "avgWordEmbed:text_unlemm"}));

    QueryEntry q;
    q.docno = "q1";
    q.fields["text"] = "nfl super";
    q.fields["text_unlemm"] = "nfl teams";
    auto text = res_.forward->get("text");
    std::vector<DocId> docs{2, 0, 1};
    auto m = comp.extract(q, docs, *text);
    EXPECT_EQ(m.query_id, "q1");
    ASSERT_EQ(m.rows.size(), 3U);
    EXPECT_EQ(m.docnos, (std::vector<std::string>{"d2", "d0", "d1"}));
    // composition adds nothing: each column equals the standalone extractor
    for (std::size_t c = 0; c < comp.size(); ++c) {
        auto solo = comp.at(c).score(q, docs, nullptr);
        for (std::size_t r = 0; r < docs.size(); ++r) {
            EXPECT_EQ(m.rows[r][c], solo[r][0]);
        }
    }
    auto empty = comp.extract(q, {}, *text);
    EXPECT_EQ(empty.columns, comp.columns());
    EXPECT_TRUE(empty.rows.empty());
}

TEST_F(ConfigTest, ErrorsAreConfigErrors)
{
    auto bad_type = json::parse(R"([{"type": "sdm", "params": {"indexFieldName": "text"}}])");
    try {
        CompositeExtractor comp(parse_extractor_configs(bad_type), res_);
        FAIL() << "expected ConfigError";
    } catch (const ConfigError &e) {
        EXPECT_NE(std::string(e.what()).find("sdm"), std::string::npos);
    }
    auto bad_field = json::parse(R"([{"type": "bm25", "params": {"indexFieldName": "nosuch"}}])");
    EXPECT_THROW(CompositeExtractor(parse_extractor_configs(bad_field), res_), ConfigError);
    auto bad_simil = json::parse(R"([{"type": "TFIDFSimilarity", "params": {"indexFieldName": "text", "similType": "tfidf"}}])");
    EXPECT_THROW(CompositeExtractor(parse_extractor_configs(bad_simil), res_), ConfigError);
    auto missing_file = json::parse(R"([{"type": "model1", "params": {"indexFieldName": "text", "model1File": "none.bin"}}])");
    EXPECT_THROW(CompositeExtractor(parse_extractor_configs(missing_file), res_), ConfigError);
    EXPECT_THROW(parse_extractor_configs(json::parse(R"([{"params": {}}])")), ConfigError);
    EXPECT_THROW(parse_extractor_configs(json::parse(R"({"nope": 1})")), ConfigError);
}

TEST_F(ConfigTest, DuplicateColumnsGetSuffix)
{
    auto cfg = json::parse(R"([
      {"type": "bm25", "params": {"indexFieldName": "text"}},
      {"type": "bm25", "params": {"indexFieldName": "text", "b": 0.3}},
      {"type": "proximity", "params": {"indexFieldName": "text", "window": 3}}
    ])");
    CompositeExtractor comp(parse_extractor_configs(cfg), res_);
    EXPECT_EQ(comp.columns(), (std::vector<std::string>{"bm25:text", "bm25:text#2", "proximity:text"}));
}

TEST_F(ConfigTest, Model1FromFile)
{
    std::vector<BitextPair> bitext{{{"team"}, {"teams"}}, {{"super", "bowl"}, {"super", "bowl"}}};
    auto table = model1_train(bitext);
    {
        std::ofstream out(dir_ / "m1.bin", std::ios::binary);
        table.save(out);
    }
    auto cfg = json::parse(R"([{"type": "model1", "params": {"indexFieldName": "text", "model1File": "m1.bin", "lambda": 0.2}}])");
    CompositeExtractor comp(parse_extractor_configs(cfg), res_);
    QueryEntry q;
    q.docno = "q";
    q.fields["text"] = "teams bowl";
    std::vector<DocId> docs{0, 1, 2};
    auto m = comp.extract(q, docs, *res_.forward->get("text"));
    table.set_lambda(0.2);
    table.set_collection_model(collection_model(*res_.forward->get("text")));
    std::vector<std::string> qt{"teams", "bowl"};
    std::vector<std::string> d0{"nfl", "team", "represent", "super", "bowl", "50"};
    EXPECT_NEAR(m.rows[0][0], model1_score(qt, d0, table), 1e-12);
    EXPECT_GT(m.rows[0][0], m.rows[2][0]);
}

TEST(ParamReaders, StringEncodedValues)
{
    auto p = json::parse(R"({"k1": "1.5", "b": 0.3, "flag": "True", "off": "0", "name": "x", "bad": "abc"})");
    EXPECT_DOUBLE_EQ(param_double(p, "k1", 0.0), 1.5);
    EXPECT_DOUBLE_EQ(param_double(p, "b", 0.0), 0.3);
    EXPECT_DOUBLE_EQ(param_double(p, "missing", 7.0), 7.0);
    EXPECT_TRUE(param_bool(p, "flag", false));
    EXPECT_FALSE(param_bool(p, "off", true));
    EXPECT_EQ(param_string(p, "name", ""), "x");
    EXPECT_THROW((void)param_double(p, "bad", 0.0), ConfigError);
    EXPECT_THROW((void)param_required(p, "indexFieldName"), ConfigError);
}

TEST(ForwardStoreTest, LazyLoadAndMissing)
{
    testutil::TempDir dir("store");
    ForwardIndex f("body", FieldKind::Parsed, false);
    f.add_document("x", "hello world");
    f.save_file(forward_file(dir.path(), "body"));
    ForwardStore store(dir.path());
    auto a = store.get("body");
    auto b = store.get("body");
    EXPECT_EQ(a.get(), b.get());
    EXPECT_EQ(a->doc_count(), 1U);
    EXPECT_THROW((void)store.get("title"), ConfigError);
}
