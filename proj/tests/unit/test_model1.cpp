#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "hybrid/binary_io.hpp"
#include "hybrid/forward_index.hpp"
#include "hybrid/model1.hpp"
#include "test_util.hpp"

using namespace hybrid;

namespace {

using Table = std::map<std::string, std::map<std::string, double>>;  // source -> target -> prob
const std::string kNull(Model1Table::kNullWord);

// Textbook Model 1 EM over string maps, NULL source included, started
// uniform over co-occurring targets.
Table em_oracle(const std::vector<BitextPair> &bitext, int iterations)
{
    Table t;
    for (const auto &p : bitext) {
        std::vector<std::string> src{kNull};
        src.insert(src.end(), p.source.begin(), p.source.end());
        for (const auto &w : src) {
            for (const auto &f : p.target) {
                t[w][f] = 0.0;
            }
        }
    }
    for (auto &[w, row] : t) {
        for (auto &[f, v] : row) {
            v = 1.0 / static_cast<double>(row.size());
        }
    }
    for (int it = 0; it < iterations; ++it) {
        Table count;
        for (const auto &p : bitext) {
            std::vector<std::string> src{kNull};
            src.insert(src.end(), p.source.begin(), p.source.end());
            for (const auto &f : p.target) {
                double z = 0.0;
                for (const auto &w : src) {
                    z += t[w][f];
                }
                for (const auto &w : src) {
                    count[w][f] += t[w][f] / z;
                }
            }
        }
        for (auto &[w, row] : count) {
            double total = 0.0;
            for (const auto &[f, c] : row) {
                total += c;
            }
            for (const auto &[f, c] : row) {
                t[w][f] = c / total;
            }
        }
    }
    return t;
}

std::vector<BitextPair> random_bitext(std::uint64_t seed, std::size_t pairs)
{
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> len(1, 6);
    std::uniform_int_distribution<int> src_word(0, 14);
    std::uniform_int_distribution<int> tgt_word(0, 11);
    std::vector<BitextPair> out;
    for (std::size_t i = 0; i < pairs; ++i) {
        BitextPair p;
        int ls = len(rng);
        int lt = len(rng);
        for (int j = 0; j < ls; ++j) {
            p.source.push_back("s" + std::to_string(src_word(rng)));
        }
        for (int j = 0; j < lt; ++j) {
            p.target.push_back("t" + std::to_string(tgt_word(rng)));
        }
        out.push_back(std::move(p));
    }
    return out;
}

std::vector<BitextPair> house_bitext()
{
    return {{{"maison"}, {"house"}}, {{"la", "maison"}, {"the", "house"}}};
}

}  // namespace

TEST(Model1Train, HouseMaison)
{
    auto table = model1_train(house_bitext());
    EXPECT_GT(table.prob("house", "maison"), 0.9);
    auto oracle = em_oracle(house_bitext(), 20);
    EXPECT_NEAR(table.prob("house", "maison"), oracle["maison"]["house"], 1e-9);
}

TEST(Model1Train, ForcedAlignmentAfterOneIteration)
{
    std::vector<BitextPair> b{{{"x"}, {"a"}}};
    auto table = model1_train(b, {1, 1e-6});
    EXPECT_DOUBLE_EQ(table.prob("a", "x"), 1.0);
}

TEST(Model1Train, EmptyBitextRejected)
{
    std::vector<BitextPair> none;
    EXPECT_THROW(model1_train(none), std::invalid_argument);
}

TEST(Model1Train, MatchesIndependentEm)
{
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        auto bitext = random_bitext(seed, 40);
        auto table = model1_train(bitext, {7, 0.0});
        auto oracle = em_oracle(bitext, 7);
        for (const auto &[w, row] : oracle) {
            for (const auto &[f, p] : row) {
                EXPECT_NEAR(table.prob(f, w), p, 1e-9) << w << " -> " << f;
            }
        }
    }
}

TEST(Model1Train, LogLikelihoodNondecreasing)
{
    for (std::uint64_t seed = 10; seed < 15; ++seed) {
        auto bitext = random_bitext(seed, 60);
        Model1Trace trace;
        (void)model1_train(bitext, {15, 1e-6}, &trace);
        ASSERT_EQ(trace.log_likelihood.size(), 16U);
        for (std::size_t i = 1; i < trace.log_likelihood.size(); ++i) {
            EXPECT_GE(trace.log_likelihood[i], trace.log_likelihood[i - 1] - 1e-9) << "iteration " << i;
        }
    }
}

TEST(Model1Train, RowsStochastic)
{
    for (std::uint64_t seed = 20; seed < 25; ++seed) {
        auto bitext = random_bitext(seed, 60);
        Model1Trace trace;
        auto table = model1_train(bitext, {10, 1e-3}, &trace);
        for (double dev : trace.max_row_deviation) {
            EXPECT_LE(dev, 1e-6);
        }
        for (std::uint32_t w = 0; w < table.source_vocab_size(); ++w) {
            EXPECT_NEAR(table.row_sum(w), 1.0, 1e-6);
        }
    }
}

TEST(Model1Train, PruningDropsSmallEntries)
{
    auto bitext = random_bitext(31, 80);
    auto full = model1_train(bitext, {10, 0.0});
    auto pruned = model1_train(bitext, {10, 0.05});
    EXPECT_LT(pruned.entry_count(), full.entry_count());
    for (std::uint32_t w = 0; w < pruned.source_vocab_size(); ++w) {
        for (std::uint32_t t = 0; t < pruned.target_vocab_size(); ++t) {
            double p = pruned.prob(t, w);
            EXPECT_TRUE(p == 0.0 || p >= 0.05);
            EXPECT_LE(p, 1.0);
        }
    }
}

TEST(Model1Score, FullSmoothingIsUnigram)
{
    auto table = model1_train(house_bitext());
    table.set_collection_model({{"house", 0.25}, {"the", 0.5}});
    table.set_lambda(1.0);
    std::vector<std::string> q{"house", "the", "unknown"};
    std::vector<std::string> d1{"maison"};
    std::vector<std::string> d2{"la", "la", "zzz"};
    double expected = std::log(0.25) + std::log(0.5) + std::log(Model1Table::kMinCollectionProb);
    EXPECT_NEAR(model1_score(q, d1, table), expected, 1e-12);
    EXPECT_NEAR(model1_score(q, d2, table), expected, 1e-12);
}

TEST(Model1Score, ClosedFormForCertainTranslations)
{
    // T(a|x) = T(b|y) = 1 and the NULL row stays at 1/2 each
    std::vector<BitextPair> b{{{"x"}, {"a"}}, {{"y"}, {"b"}}};
    auto table = model1_train(b, {5, 0.0});
    ASSERT_DOUBLE_EQ(table.prob("a", "x"), 1.0);
    ASSERT_DOUBLE_EQ(table.prob("b", "y"), 1.0);
    double t_null = table.prob("a", kNull);
    ASSERT_NEAR(t_null, 0.5, 1e-12);
    table.set_lambda(1e-12);
    std::vector<std::string> q{"a", "b"};
    std::vector<std::string> d{"x", "y"};
    // each query word has exactly one document word with T = 1
    double expected = -2.0 * std::log(3.0) + 2.0 * std::log(1.0 + t_null);
    EXPECT_NEAR(model1_score(q, d, table), expected, 1e-9);
}

TEST(Model1Score, FiniteForOovAndMonotoneInLambda)
{
    auto table = model1_train(random_bitext(40, 50));
    std::vector<std::string> oov{"never", "seen"};
    std::vector<std::string> d{"s1", "s2"};
    EXPECT_TRUE(std::isfinite(model1_score(oov, d, table)));
    std::vector<std::string> empty_doc;
    EXPECT_TRUE(std::isfinite(model1_score(oov, empty_doc, table)));

    table.set_collection_model({{"t1", 0.01}});
    std::vector<std::string> q{"t1"};
    table.set_lambda(1.0);
    double unigram = model1_score(q, d, table);
    double prev_gap = INFINITY;
    for (double lambda : {0.01, 0.1, 0.3, 0.6, 0.9, 1.0}) {
        table.set_lambda(lambda);
        double gap = std::abs(model1_score(q, d, table) - unigram);
        EXPECT_LE(gap, prev_gap + 1e-12);
        prev_gap = gap;
    }
    EXPECT_THROW(table.set_lambda(0.0), std::invalid_argument);
    EXPECT_THROW(table.set_lambda(1.5), std::invalid_argument);
}

TEST(Model1Score, SourcesFormMatchesTokenForm)
{
    auto table = model1_train(random_bitext(41, 50));
    std::vector<std::string> q{"t1", "t3", "t3", "oov"};
    std::vector<std::string> d{"s2", "s5", "s2", "unknown", "s9"};
    std::map<std::uint32_t, double> counts;
    for (const auto &w : d) {
        if (auto id = table.source_id(w)) {
            counts[*id] += 1.0;
        }
    }
    std::vector<std::pair<std::uint32_t, double>> src(counts.begin(), counts.end());
    EXPECT_DOUBLE_EQ(model1_score_sources(q, src, d.size(), table), model1_score(q, d, table));
}

TEST(Model1Persistence, RoundTrip)
{
    auto table = model1_train(random_bitext(50, 30));
    table.set_lambda(0.3);
    table.set_collection_model({{"t1", 0.2}, {"t2", 0.8}});
    std::stringstream ss;
    table.save(ss);
    auto back = Model1Table::load(ss);
    EXPECT_EQ(back, table);
    std::stringstream bad("garbage bytes here");
    EXPECT_THROW((void)Model1Table::load(bad), FormatError);
}

TEST(Chunking, Examples)
{
    std::vector<std::string> ten;
    for (int i = 0; i < 10; ++i) {
        ten.push_back("w" + std::to_string(i));
    }
    auto chunks = chunk_document(ten, 4);
    ASSERT_EQ(chunks.size(), 3U);
    EXPECT_EQ(chunks[0].size(), 4U);
    EXPECT_EQ(chunks[1].size(), 4U);
    EXPECT_EQ(chunks[2].size(), 2U);
    std::vector<std::string> joined;
    for (const auto &c : chunks) {
        joined.insert(joined.end(), c.begin(), c.end());
    }
    EXPECT_EQ(joined, ten);
    EXPECT_EQ(chunk_document(std::span(ten).first(3), 4).size(), 1U);
    EXPECT_TRUE(chunk_document(std::span<const std::string>{}, 4).empty());
    EXPECT_THROW(chunk_document(ten, 0), std::invalid_argument);
}

TEST(CollectionModel, Frequencies)
{
    ForwardIndex f("text", FieldKind::Parsed, false);
    f.add_document("d0", "a a b");
    f.add_document("d1", "a c");
    auto cm = collection_model(f);
    EXPECT_DOUBLE_EQ(cm.at("a"), 0.6);
    EXPECT_DOUBLE_EQ(cm.at("b"), 0.2);
    EXPECT_DOUBLE_EQ(cm.at("c"), 0.2);
}
