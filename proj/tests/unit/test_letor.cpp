#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "hybrid/letor.hpp"
#include "test_util.hpp"

using namespace hybrid;

namespace {

double dcg(const std::vector<int> &g, std::size_t k)
{
    double s = 0.0;
    for (std::size_t i = 0; i < std::min(k, g.size()); ++i) {
        s += (std::pow(2.0, g[i]) - 1.0) / std::log2(static_cast<double>(i) + 2.0);
    }
    return s;
}

// Independent metric over one group: rank by w·row (ties by docno), then
// NDCG against the group's own grades or reciprocal rank.
double group_metric(const QueryGroup &g, const std::vector<double> &w, const Metric &m)
{
    std::vector<std::size_t> order(g.rows.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> s(g.rows.size(), 0.0);
    for (std::size_t i = 0; i < g.rows.size(); ++i) {
        for (std::size_t j = 0; j < w.size(); ++j) {
            s[i] += w[j] * g.rows[i][j];
        }
    }
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return s[a] != s[b] ? s[a] > s[b] : g.docnos[a] < g.docnos[b]; });
    std::vector<int> ranked;
    for (auto i : order) {
        ranked.push_back(g.grades[i]);
    }
    if (m.kind == MetricKind::MRR) {
        for (std::size_t i = 0; i < ranked.size(); ++i) {
            if (m.k != 0 && i >= m.k) {
                break;
            }
            if (ranked[i] > 0) {
                return 1.0 / static_cast<double>(i + 1);
            }
        }
        return 0.0;
    }
    auto ideal = g.grades;
    std::sort(ideal.rbegin(), ideal.rend());
    double idcg = dcg(ideal, m.k);
    return idcg == 0.0 ? 0.0 : dcg(ranked, m.k) / idcg;
}

double mean_metric(const std::vector<QueryGroup> &groups, const std::vector<double> &w, const Metric &m)
{
    double s = 0.0;
    for (const auto &g : groups) {
        s += group_metric(g, w, m);
    }
    return s / static_cast<double>(groups.size());
}

// Grades come from a hidden linear combination of the features plus noise.
std::vector<QueryGroup> random_groups(std::uint64_t seed, std::size_t queries, std::size_t cands, std::size_t feats)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> hidden(feats);
    for (auto &h : hidden) {
        h = g(rng);
    }
    std::vector<QueryGroup> out;
    for (std::size_t q = 0; q < queries; ++q) {
        QueryGroup grp;
        grp.qid = "q" + std::to_string(q);
        for (std::size_t c = 0; c < cands; ++c) {
            std::vector<double> row(feats);
            double latent = 0.0;
            for (std::size_t f = 0; f < feats; ++f) {
                row[f] = g(rng);
                latent += hidden[f] * row[f];
            }
            latent += 0.7 * g(rng);
            grp.docnos.push_back("d" + std::to_string(c));
            grp.rows.push_back(row);
            grp.grades.push_back(latent > 1.5 ? 2 : (latent > 0.7 ? 1 : 0));
        }
        out.push_back(std::move(grp));
    }
    return out;
}

std::vector<std::string> names(std::size_t n)
{
    std::vector<std::string> c;
    for (std::size_t i = 0; i < n; ++i) {
        c.push_back("f" + std::to_string(i));
    }
    return c;
}

FeatureMatrix matrix(const std::string &qid, std::vector<std::string> docnos, std::vector<std::vector<double>> rows,
                     std::vector<std::string> columns)
{
    FeatureMatrix m;
    m.query_id = qid;
    m.columns = std::move(columns);
    m.docnos = std::move(docnos);
    m.rows = std::move(rows);
    m.docs.resize(m.rows.size());
    m.flagged.assign(m.rows.size(), false);
    return m;
}

}  // namespace

TEST(Ndcg, Examples)
{
    std::vector<int> a{3, 2, 0};
    EXPECT_DOUBLE_EQ(ndcg_at_k(a, a, 3), 1.0);
    std::vector<int> g{0, 3};
    std::vector<int> ideal{3, 0};
    EXPECT_NEAR(ndcg_at_k(g, ideal, 2), 0.6309, 1e-3);
    EXPECT_NEAR(ndcg_at_k(g, ideal, 2), 1.0 / std::log2(3.0), 1e-12);
    std::vector<int> zeros{0, 0, 0};
    EXPECT_EQ(ndcg_at_k(zeros, zeros, 3), 0.0);
    EXPECT_THROW((void)ndcg_at_k(a, a, 0), std::invalid_argument);
}

TEST(Ndcg, UnsortedIdealAndDeeperJudgments)
{
    std::vector<int> g{1, 0};
    std::vector<int> ideal{0, 2, 1};
    double want = 1.0 / (3.0 + 1.0 / std::log2(3.0));
    EXPECT_NEAR(ndcg_at_k(g, ideal, 10), want, 1e-12);
}

TEST(Ndcg, RangeAndIdealProperty)
{
    std::mt19937_64 rng(1);
    std::uniform_int_distribution<int> grade(0, 3);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<int> g(std::uniform_int_distribution<int>(1, 15)(rng));
        for (auto &x : g) {
            x = grade(rng);
        }
        double v = ndcg_at_k(g, g, 10);
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0 + 1e-12);
        auto sorted = g;
        std::sort(sorted.rbegin(), sorted.rend());
        if (dcg(sorted, 10) > 0) {
            EXPECT_NEAR(ndcg_at_k(sorted, g, 10), 1.0, 1e-12);
        }
    }
}

TEST(Mrr, Examples)
{
    std::vector<std::string> r{"a", "b", "c"};
    EXPECT_EQ(mrr(r, {"a"}), 1.0);
    EXPECT_EQ(mrr(r, {"b", "c"}), 0.5);
    EXPECT_EQ(mrr(r, {"z"}), 0.0);
    EXPECT_EQ(mrr(r, {"c"}, 2), 0.0);
    EXPECT_NEAR(mrr(r, {"c"}, 3), 1.0 / 3.0, 1e-15);
}

TEST(Mrr, DroppingIrrelevantBelowFirstHitKeepsValue)
{
    std::vector<std::string> r{"x", "rel", "y", "z"};
    std::vector<std::string> shorter{"x", "rel"};
    EXPECT_EQ(mrr(r, {"rel"}), mrr(shorter, {"rel"}));
}

TEST(Metric, Parse)
{
    EXPECT_EQ(Metric::parse("ndcg@10").k, 10U);
    EXPECT_EQ(Metric::parse("NDCG@5").kind, MetricKind::NDCG);
    EXPECT_EQ(Metric::parse("mrr").kind, MetricKind::MRR);
    EXPECT_EQ(Metric::parse("mrr").k, 0U);
    EXPECT_EQ(Metric::parse("mrr@10").k, 10U);
    EXPECT_EQ(Metric::parse("ndcg@20").name(), "ndcg@20");
    EXPECT_THROW(Metric::parse("map"), std::invalid_argument);
    EXPECT_THROW(Metric::parse("ndcg@0"), std::invalid_argument);
}

TEST(Qrels, ParseAndQueries)
{
    std::istringstream in("q1 0 d1 2\nq1 0 d2 0\n\nq2 0 d9 1\n");
    auto q = Qrels::parse(in);
    EXPECT_EQ(q.query_count(), 2U);
    EXPECT_EQ(q.grade("q1", "d1"), 2);
    EXPECT_EQ(q.grade("q1", "d7"), 0);
    EXPECT_EQ(q.grade("q7", "d1"), 0);
    EXPECT_EQ(q.ideal_grades("q1"), (std::vector<int>{2, 0}));
    EXPECT_EQ(q.relevant("q1"), (std::set<std::string>{"d1"}));
    std::istringstream bad("q1 0 d1\n");
    EXPECT_THROW(Qrels::parse(bad), ParseError);
    std::istringstream neg("q1 0 d1 -1\n");
    EXPECT_THROW(Qrels::parse(neg), ParseError);
}

TEST(TrainingMetric, MatchesIndependentOracle)
{
    auto groups = random_groups(3, 12, 25, 4);
    std::mt19937_64 rng(3);
    std::normal_distribution<double> g(0.0, 1.0);
    for (const char *name : {"ndcg@10", "ndcg@3", "mrr", "mrr@5"}) {
        auto m = Metric::parse(name);
        for (int trial = 0; trial < 10; ++trial) {
            std::vector<double> w{g(rng), g(rng), g(rng), g(rng)};
            EXPECT_NEAR(training_metric(groups, w, m), mean_metric(groups, w, m), 1e-12) << name;
        }
    }
}

TEST(CoordinateAscent, SingleFeature)
{
    // feature = grade + noise, so larger is better
    auto groups = random_groups(5, 10, 20, 1);
    std::mt19937_64 rng(5);
    std::normal_distribution<double> noise(0.0, 0.8);
    for (auto &g : groups) {
        for (std::size_t i = 0; i < g.rows.size(); ++i) {
            g.rows[i] = {g.grades[i] + noise(rng)};
        }
    }
    auto res = coordinate_ascent_train(groups, names(1));
    ASSERT_EQ(res.model.weights.size(), 1U);
    EXPECT_DOUBLE_EQ(res.model.weights[0], 1.0);
    EXPECT_NEAR(res.metric, mean_metric(groups, {1.0}, Metric{}), 1e-12);
    EXPECT_NEAR(res.metric, res.single_feature[0], 1e-12);

    // a reversed feature is better used with a negative weight
    for (auto &g : groups) {
        for (auto &r : g.rows) {
            r[0] = -r[0];
        }
    }
    auto flipped = coordinate_ascent_train(groups, names(1));
    EXPECT_DOUBLE_EQ(flipped.model.weights[0], -1.0);
    EXPECT_NEAR(flipped.metric, res.metric, 1e-12);
}

TEST(CoordinateAscent, OracleFeatureReachesPerfectMrr)
{
    auto groups = random_groups(6, 15, 20, 1);
    std::mt19937_64 rng(6);
    std::normal_distribution<double> noise(0.0, 1.0);
    for (auto &g : groups) {
        for (std::size_t i = 0; i < g.rows.size(); ++i) {
            g.rows[i] = {noise(rng), static_cast<double>(g.grades[i])};
        }
        g.grades[0] = std::max(g.grades[0], 1);
        g.rows[0][1] = std::max(g.rows[0][1], 1.0);
    }
    CoordinateAscentOptions opt;
    opt.metric = Metric::parse("mrr");
    auto res = coordinate_ascent_train(groups, {"noise", "oracle"}, opt);
    EXPECT_DOUBLE_EQ(res.metric, 1.0);
    EXPECT_DOUBLE_EQ(mean_metric(groups, res.model.weights, opt.metric), 1.0);
}

TEST(CoordinateAscent, FusionProperties)
{
    for (std::uint64_t seed = 100; seed < 110; ++seed) {
        auto groups = random_groups(seed, 10, 30, 4);
        for (const char *name : {"ndcg@10", "mrr"}) {
            CoordinateAscentOptions opt;
            opt.metric = Metric::parse(name);
            opt.random_restarts = 3;
            opt.seed = seed;
            auto res = coordinate_ascent_train(groups, names(4), opt);

            // baselines from the independent oracle
            ASSERT_EQ(res.single_feature.size(), 4U);
            for (std::size_t f = 0; f < 4; ++f) {
                std::vector<double> unit(4, 0.0);
                unit[f] = 1.0;
                double base = mean_metric(groups, unit, opt.metric);
                EXPECT_NEAR(res.single_feature[f], base, 1e-12);
                EXPECT_GE(res.metric, base - 1e-12);
            }
            EXPECT_NEAR(res.metric, mean_metric(groups, res.model.weights, opt.metric), 1e-12);

            ASSERT_FALSE(res.trace.empty());
            EXPECT_DOUBLE_EQ(res.trace.back(), res.metric);
            for (std::size_t i = 1; i < res.trace.size(); ++i) {
                EXPECT_GT(res.trace[i], res.trace[i - 1] + opt.tolerance);
            }

            double l1 = 0.0;
            for (double w : res.model.weights) {
                l1 += std::abs(w);
                EXPECT_TRUE(std::isfinite(w));
            }
            EXPECT_NEAR(l1, 1.0, 1e-12);
        }
    }
}

TEST(CoordinateAscent, DeterministicAcrossThreadCounts)
{
    auto groups = random_groups(7, 10, 30, 5);
    CoordinateAscentOptions opt;
    opt.random_restarts = 6;
    auto a = coordinate_ascent_train(groups, names(5), opt);
    auto b = coordinate_ascent_train(groups, names(5), opt);
    opt.threads = 4;
    auto c = coordinate_ascent_train(groups, names(5), opt);
    EXPECT_EQ(a.model.weights, b.model.weights);
    EXPECT_EQ(a.model.weights, c.model.weights);
    EXPECT_EQ(a.trace, c.trace);
    EXPECT_EQ(a.best_restart, c.best_restart);
}

TEST(CoordinateAscent, Errors)
{
    auto groups = random_groups(8, 3, 5, 2);
    for (auto &g : groups) {
        std::fill(g.grades.begin(), g.grades.end(), 0);
    }
    EXPECT_THROW(coordinate_ascent_train(groups, names(2)), std::runtime_error);
    auto ok = random_groups(8, 3, 5, 2);
    EXPECT_THROW(coordinate_ascent_train(ok, names(3)), std::invalid_argument);
}

TEST(RankWithModel, OrderingAndTies)
{
    auto m = matrix("q", {"c", "a", "b"}, {{1.0, 5.0}, {3.0, 0.0}, {2.0, 9.0}}, {"x", "y"});
    LinearModel model{{"x", "y"}, {1.0, 0.0}};
    auto run = rank_with_model(model, m);
    ASSERT_EQ(run.docs.size(), 3U);
    EXPECT_EQ(run.docs[0].docno, "a");
    EXPECT_EQ(run.docs[1].docno, "b");
    EXPECT_EQ(run.docs[2].docno, "c");

    LinearModel zero{{"x", "y"}, {0.0, 0.0}};
    auto tied = rank_with_model(zero, m);
    EXPECT_EQ(tied.docs[0].docno, "a");
    EXPECT_EQ(tied.docs[2].docno, "c");

    LinearModel wrong{{"y", "x"}, {1.0, 0.0}};
    EXPECT_THROW(rank_with_model(wrong, m), std::invalid_argument);
}

TEST(RankWithModel, InvariantUnderPositiveScaling)
{
    std::mt19937_64 rng(12);
    std::normal_distribution<double> g(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<std::string> docnos;
        std::vector<std::vector<double>> rows;
        for (int i = 0; i < 40; ++i) {
            docnos.push_back("d" + std::to_string(i));
            rows.push_back({g(rng), g(rng), g(rng)});
        }
        auto m = matrix("q", docnos, rows, names(3));
        LinearModel base{names(3), {g(rng), g(rng), g(rng)}};
        auto want = rank_with_model(base, m);
        for (double alpha : {0.5, 2.0, 8.0, 1024.0}) {
            LinearModel scaled = base;
            for (auto &w : scaled.weights) {
                w *= alpha;
            }
            auto got = rank_with_model(scaled, m);
            for (std::size_t i = 0; i < got.docs.size(); ++i) {
                EXPECT_EQ(got.docs[i].docno, want.docs[i].docno);
            }
        }
    }
}

TEST(LinearModelIo, RoundTrip)
{
    LinearModel m{{"bm25:text", "model1:text"}, {0.25, -0.75}};
    std::stringstream ss;
    m.save(ss);
    auto back = LinearModel::load(ss);
    EXPECT_EQ(back.columns, m.columns);
    EXPECT_EQ(back.weights, m.weights);
    std::vector<double> row{2.0, 1.0};
    EXPECT_DOUBLE_EQ(m.score(row), -0.25);
    std::vector<double> short_row{1.0};
    EXPECT_THROW((void)m.score(short_row), std::invalid_argument);
    std::stringstream bad("## Linear model\n1:abc\n");
    EXPECT_THROW(LinearModel::load(bad), std::runtime_error);
}

TEST(RankLib, LineFormat)
{
    auto m = matrix("q1", {"d1"}, {{0.5}}, {"f"});
    Qrels q;
    q.set("q1", "d1", 2);
    std::ostringstream out;
    export_ranklib(out, std::span(&m, 1), q);
    EXPECT_EQ(out.str(), "2 qid:q1 1:0.5 # d1\n");
}

TEST(RankLib, UnjudgedGradeZeroAndRoundTrip)
{
    std::vector<FeatureMatrix> ms{
        matrix("q1", {"d1", "d2"}, {{0.5, -1.25}, {3.0, 1e-7}}, {"a", "b"}),
        matrix("q2", {"d3"}, {{0.1, 0.2}}, {"a", "b"}),
    };
    Qrels q;
    q.set("q1", "d2", 1);
    std::stringstream out;
    export_ranklib(out, ms, q);
    auto text = out.str();
    EXPECT_EQ(text.substr(0, text.find('\n')), "0 qid:q1 1:0.5 2:-1.25 # d1");
    auto groups = parse_ranklib(out);
    ASSERT_EQ(groups.size(), 2U);
    EXPECT_EQ(groups[0].qid, "q1");
    EXPECT_EQ(groups[0].docnos, ms[0].docnos);
    EXPECT_EQ(groups[0].rows, ms[0].rows);
    EXPECT_EQ(groups[0].grades, (std::vector<int>{0, 1}));
    EXPECT_EQ(groups[1].rows, ms[1].rows);
}

TEST(TrecRun, WriteReadAndDepth)
{
    RunOutput run{"myrun", {{"q2", {{"a", 2.5}, {"b", 1.0}}}, {"q1", {{"c", 0.5}}}}};
    std::stringstream ss;
    write_trec_run(ss, run);
    EXPECT_EQ(ss.str(), "q2 Q0 a 1 2.5 myrun\nq2 Q0 b 2 1 myrun\nq1 Q0 c 1 0.5 myrun\n");
    auto back = read_trec_run(ss);
    EXPECT_EQ(back.run_id, "myrun");
    ASSERT_EQ(back.queries.size(), 2U);
    std::stringstream shallow;
    write_trec_run(shallow, run, 1);
    EXPECT_EQ(shallow.str(), "q2 Q0 a 1 2.5 myrun\nq1 Q0 c 1 0.5 myrun\n");
}

TEST(EvaluateRun, HandComputed)
{
    Qrels q;
    q.set("q1", "a", 2);
    q.set("q1", "x", 1);
    q.set("q2", "z", 1);
    RunOutput run{"r", {{"q1", {{"b", 3}, {"a", 2}, {"c", 1}}}, {"q2", {{"z", 1}}}, {"q3", {{"n", 1}}}}};
    auto ev = evaluate_run(run, q, 10);
    ASSERT_EQ(ev.queries.size(), 2U);
    double idcg = 3.0 + 1.0 / std::log2(3.0);
    double ndcg_q1 = (3.0 / std::log2(3.0)) / idcg;
    EXPECT_NEAR(ev.queries[0].ndcg, ndcg_q1, 1e-12);
    EXPECT_DOUBLE_EQ(ev.queries[0].mrr, 0.5);
    EXPECT_DOUBLE_EQ(ev.queries[1].ndcg, 1.0);
    EXPECT_NEAR(ev.mean_ndcg, (ndcg_q1 + 1.0) / 2.0, 1e-12);
    EXPECT_DOUBLE_EQ(ev.mean_mrr, 0.75);
}

TEST(FormatNumber, ShortestRoundTrip)
{
    EXPECT_EQ(format_number(0.5), "0.5");
    EXPECT_EQ(format_number(1.0), "1");
    EXPECT_EQ(format_number(-1.25), "-1.25");
    EXPECT_EQ(std::stod(format_number(0.1 + 0.2)), 0.1 + 0.2);
}
