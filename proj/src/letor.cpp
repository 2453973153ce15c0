#include "hybrid/letor.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace hybrid {

// Qrels

void Qrels::set(const std::string &qid, const std::string &docno, int grade)
{
    if (grade < 0) {
        throw std::invalid_argument("relevance grade must be >= 0");
    }
    judgments_[qid][docno] = grade;
}

int Qrels::grade(const std::string &qid, const std::string &docno) const
{
    auto q = judgments_.find(qid);
    if (q == judgments_.end()) {
        return 0;
    }
    auto d = q->second.find(docno);
    return d == q->second.end() ? 0 : d->second;
}

std::vector<int> Qrels::ideal_grades(const std::string &qid) const
{
    std::vector<int> out;
    if (auto q = judgments_.find(qid); q != judgments_.end()) {
        for (const auto &[docno, g] : q->second) {
            out.push_back(g);
        }
    }
    std::sort(out.begin(), out.end(), std::greater<>());
    return out;
}

std::set<std::string> Qrels::relevant(const std::string &qid) const
{
    std::set<std::string> out;
    if (auto q = judgments_.find(qid); q != judgments_.end()) {
        for (const auto &[docno, g] : q->second) {
            if (g > 0) {
                out.insert(docno);
            }
        }
    }
    return out;
}

Qrels Qrels::parse(std::istream &in)
{
    Qrels qrels;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream ls(line);
        std::string qid, iter, docno, grade_text;
        if (!(ls >> qid)) {
            continue;
        }
        std::string extra;
        if (!(ls >> iter >> docno >> grade_text) || (ls >> extra)) {
            throw ParseError(line_no, "expected 'qid 0 docno grade'");
        }
        int grade = 0;
        auto [ptr, ec] = std::from_chars(grade_text.data(), grade_text.data() + grade_text.size(), grade);
        if (ec != std::errc() || ptr != grade_text.data() + grade_text.size() || grade < 0) {
            throw ParseError(line_no, "grade must be a non-negative integer, got '" + grade_text + "'");
        }
        qrels.set(qid, docno, grade);
    }
    return qrels;
}

Qrels Qrels::load_file(const std::filesystem::path &path)
{
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open qrels file " + path.string());
    }
    return parse(in);
}

// Metrics

namespace {

double gain(int g)
{
    return std::exp2(static_cast<double>(g)) - 1.0;
}

double discount(std::size_t rank)
{
    return std::log2(static_cast<double>(rank) + 1.0);
}

double dcg(std::span<const int> grades, std::size_t k)
{
    double s = 0.0;
    for (std::size_t i = 0; i < std::min(k, grades.size()); ++i) {
        s += gain(grades[i]) / discount(i + 1);
    }
    return s;
}

double ideal_dcg(std::vector<int> grades, std::size_t k)
{
    std::sort(grades.begin(), grades.end(), std::greater<>());
    return dcg(grades, k);
}

}  // namespace

double ndcg_at_k(std::span<const int> grades, std::span<const int> ideal, std::size_t k)
{
    if (k == 0) {
        throw std::invalid_argument("ndcg cutoff must be >= 1");
    }
    double idcg = ideal_dcg(std::vector<int>(ideal.begin(), ideal.end()), k);
    if (idcg <= 0.0) {
        return 0.0;
    }
    return dcg(grades, k) / idcg;
}

double mrr(std::span<const std::string> ranked, const std::set<std::string> &relevant, std::size_t cutoff)
{
    std::size_t limit = cutoff == 0 ? ranked.size() : std::min(cutoff, ranked.size());
    for (std::size_t i = 0; i < limit; ++i) {
        if (relevant.count(ranked[i]) != 0) {
            return 1.0 / static_cast<double>(i + 1);
        }
    }
    return 0.0;
}

Metric Metric::parse(const std::string &name)
{
    std::string lower = name;
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
    Metric m;
    std::string base = lower;
    std::size_t k = 0;
    if (auto at = lower.find('@'); at != std::string::npos) {
        base = lower.substr(0, at);
        auto digits = lower.substr(at + 1);
        auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), k);
        if (ec != std::errc() || ptr != digits.data() + digits.size() || k == 0) {
            throw std::invalid_argument("bad metric cutoff in '" + name + "'");
        }
    }
    if (base == "ndcg") {
        m.kind = MetricKind::NDCG;
        m.k = k == 0 ? 10 : k;
    } else if (base == "mrr" || base == "rr") {
        m.kind = MetricKind::MRR;
        m.k = k;
    } else {
        throw std::invalid_argument("unknown metric '" + name + "' (expected ndcg@k or mrr)");
    }
    return m;
}

std::string Metric::name() const
{
    if (kind == MetricKind::NDCG) {
        return "ndcg@" + std::to_string(k);
    }
    return k == 0 ? "mrr" : "mrr@" + std::to_string(k);
}

// Linear model

double LinearModel::score(std::span<const double> row) const
{
    if (row.size() != weights.size()) {
        throw std::invalid_argument("feature row has " + std::to_string(row.size()) + " values, model has " +
                                    std::to_string(weights.size()) + " weights");
    }
    double s = 0.0;
    for (std::size_t i = 0; i < row.size(); ++i) {
        s += weights[i] * row[i];
    }
    return s;
}

void LinearModel::save(std::ostream &out) const
{
    out << "## Linear model\n## columns:";
    for (const auto &c : columns) {
        out << ' ' << c;
    }
    out << '\n';
    for (std::size_t i = 0; i < weights.size(); ++i) {
        out << (i == 0 ? "" : " ") << (i + 1) << ':' << format_number(weights[i]);
    }
    out << '\n';
}

LinearModel LinearModel::load(std::istream &in)
{
    LinearModel m;
    std::string line;
    bool have_weights = false;
    while (std::getline(in, line)) {
        if (line.rfind("## columns:", 0) == 0) {
            std::istringstream ls(line.substr(11));
            std::string c;
            while (ls >> c) {
                m.columns.push_back(c);
            }
            continue;
        }
        if (line.rfind("#", 0) == 0 || line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        if (have_weights) {
            throw std::runtime_error("model file has more than one weight line");
        }
        std::istringstream ls(line);
        std::string tok;
        std::map<std::size_t, double> w;
        while (ls >> tok) {
            auto colon = tok.find(':');
            std::size_t idx = 0;
            double v = 0.0;
            if (colon == std::string::npos ||
                std::from_chars(tok.data(), tok.data() + colon, idx).ec != std::errc() || idx == 0 ||
                std::from_chars(tok.data() + colon + 1, tok.data() + tok.size(), v).ec != std::errc() ||
                !std::isfinite(v)) {
                throw std::runtime_error("bad weight entry '" + tok + "'");
            }
            w[idx] = v;
        }
        std::size_t n = w.empty() ? 0 : w.rbegin()->first;
        m.weights.assign(n, 0.0);
        for (const auto &[i, v] : w) {
            m.weights[i - 1] = v;
        }
        have_weights = true;
    }
    if (!have_weights) {
        throw std::runtime_error("model file has no weight line");
    }
    if (!m.columns.empty()) {
        if (m.weights.size() > m.columns.size()) {
            throw std::runtime_error("model has more weights than columns");
        }
        m.weights.resize(m.columns.size(), 0.0);
    }
    return m;
}

void LinearModel::save_file(const std::filesystem::path &path) const
{
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write model file " + path.string());
    }
    save(out);
}

LinearModel LinearModel::load_file(const std::filesystem::path &path)
{
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open model file " + path.string());
    }
    return load(in);
}

// Training

QueryGroup make_group(const FeatureMatrix &features, const Qrels &qrels)
{
    QueryGroup g;
    g.qid = features.query_id;
    g.docnos = features.docnos;
    g.rows = features.rows;
    for (const auto &d : features.docnos) {
        g.grades.push_back(qrels.grade(features.query_id, d));
    }
    return g;
}

namespace {

struct PreparedGroup {
    std::size_t n = 0;
    std::vector<double> values;           // row-major n x F
    std::vector<std::uint32_t> tie_rank;  // docno order, lower ranks first on equal score
    std::vector<int> grades;
    double idcg = 0.0;
    bool has_relevant = false;
};

class TrainingSet {
   public:
    TrainingSet(std::span<const QueryGroup> groups, std::size_t features, const Metric &metric)
        : features_(features), metric_(metric)
    {
        for (const auto &g : groups) {
            if (g.rows.size() != g.docnos.size() || g.grades.size() != g.docnos.size()) {
                throw std::invalid_argument("query group '" + g.qid + "' has inconsistent sizes");
            }
            PreparedGroup p;
            p.n = g.rows.size();
            p.grades = g.grades;
            for (const auto &r : g.rows) {
                if (r.size() != features) {
                    throw std::invalid_argument("query group '" + g.qid + "' row width differs from column count");
                }
                p.values.insert(p.values.end(), r.begin(), r.end());
            }
            std::vector<std::uint32_t> order(p.n);
            std::iota(order.begin(), order.end(), 0U);
            std::stable_sort(order.begin(), order.end(),
                             [&](std::uint32_t a, std::uint32_t b) { return g.docnos[a] < g.docnos[b]; });
            p.tie_rank.resize(p.n);
            for (std::uint32_t r = 0; r < p.n; ++r) {
                p.tie_rank[order[r]] = r;
            }
            p.idcg = ideal_dcg(p.grades, metric.kind == MetricKind::NDCG ? metric.k : 1);
            p.has_relevant = std::any_of(p.grades.begin(), p.grades.end(), [](int x) { return x > 0; });
            groups_.push_back(std::move(p));
        }
    }

    [[nodiscard]] bool any_relevant() const
    {
        return std::any_of(groups_.begin(), groups_.end(), [](const PreparedGroup &g) { return g.has_relevant; });
    }

    [[nodiscard]] double evaluate(std::span<const double> w) const
    {
        if (groups_.empty()) {
            return 0.0;
        }
        std::vector<double> scores;
        std::vector<std::uint32_t> idx;
        double total = 0.0;
        for (const auto &g : groups_) {
            if (!g.has_relevant) {
                continue;
            }
            scores.resize(g.n);
            for (std::size_t i = 0; i < g.n; ++i) {
                double s = 0.0;
                for (std::size_t f = 0; f < features_; ++f) {
                    s += w[f] * g.values[i * features_ + f];
                }
                scores[i] = s;
            }
            auto better = [&](std::uint32_t a, std::uint32_t b) {
                if (scores[a] != scores[b]) {
                    return scores[a] > scores[b];
                }
                return g.tie_rank[a] < g.tie_rank[b];
            };
            if (metric_.kind == MetricKind::MRR) {
                std::int64_t top = -1;
                for (std::uint32_t i = 0; i < g.n; ++i) {
                    if (g.grades[i] > 0 && (top < 0 || better(i, static_cast<std::uint32_t>(top)))) {
                        top = i;
                    }
                }
                std::size_t rank = 1;
                for (std::uint32_t i = 0; i < g.n; ++i) {
                    rank += better(i, static_cast<std::uint32_t>(top)) ? 1 : 0;
                }
                if (metric_.k == 0 || rank <= metric_.k) {
                    total += 1.0 / static_cast<double>(rank);
                }
            } else {
                idx.resize(g.n);
                std::iota(idx.begin(), idx.end(), 0U);
                auto depth = std::min<std::size_t>(metric_.k, g.n);
                std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(depth), idx.end(), better);
                double s = 0.0;
                for (std::size_t r = 0; r < depth; ++r) {
                    s += gain(g.grades[idx[r]]) / discount(r + 1);
                }
                total += s / g.idcg;
            }
        }
        return total / static_cast<double>(groups_.size());
    }

   private:
    std::size_t features_;
    Metric metric_;
    std::vector<PreparedGroup> groups_;
};

bool l1_normalize(std::vector<double> &w)
{
    double s = 0.0;
    for (double x : w) {
        s += std::abs(x);
    }
    if (s == 0.0 || !std::isfinite(s)) {
        return false;
    }
    for (double &x : w) {
        x /= s;
    }
    return true;
}

struct RestartOutcome {
    std::vector<double> weights;
    double metric = 0.0;
    std::vector<double> trace;
};

RestartOutcome ascend(const TrainingSet &data, std::vector<double> w, const CoordinateAscentOptions &opt)
{
    const std::size_t f = w.size();
    RestartOutcome out;
    double best = data.evaluate(w);
    out.trace.push_back(best);
    std::vector<double> cand;
    for (int sweep = 0; sweep < opt.max_sweeps; ++sweep) {
        bool improved = false;
        for (std::size_t i = 0; i < f; ++i) {
            const double base = w[i] != 0.0 ? std::abs(w[i]) : 1.0 / static_cast<double>(f);
            double step_best = best;
            std::vector<double> step_w;
            for (double delta : opt.deltas) {
                for (double sign : {1.0, -1.0}) {
                    cand = w;
                    cand[i] += sign * delta * base;
                    if (!l1_normalize(cand)) {
                        continue;
                    }
                    double m = data.evaluate(cand);
                    if (m > step_best + opt.tolerance && m > best + opt.tolerance) {
                        step_best = m;
                        step_w = cand;
                    }
                }
            }
            if (!step_w.empty()) {
                w = std::move(step_w);
                best = step_best;
                out.trace.push_back(best);
                improved = true;
            }
        }
        if (!improved) {
            break;
        }
    }
    out.weights = std::move(w);
    out.metric = best;
    return out;
}

}  // namespace

double training_metric(std::span<const QueryGroup> groups, std::span<const double> weights, const Metric &metric)
{
    TrainingSet data(groups, weights.size(), metric);
    return data.evaluate(weights);
}

CoordinateAscentResult coordinate_ascent_train(std::span<const QueryGroup> groups,
                                               const std::vector<std::string> &columns,
                                               const CoordinateAscentOptions &options)
{
    const std::size_t f = columns.size();
    if (f == 0) {
        throw std::invalid_argument("coordinate ascent needs at least one feature column");
    }
    if (options.random_restarts < 0 || options.max_sweeps < 0 || options.deltas.empty()) {
        throw std::invalid_argument("invalid coordinate ascent options");
    }
    TrainingSet data(groups, f, options.metric);
    if (!data.any_relevant()) {
        throw std::runtime_error("no relevant document among the training candidates");
    }

    std::vector<std::vector<double>> starts;
    starts.emplace_back(f, 1.0 / static_cast<double>(f));
    std::mt19937_64 rng(options.seed);
    for (int r = 0; r < options.random_restarts; ++r) {
        std::vector<double> w(f);
        do {
            for (auto &x : w) {
                x = static_cast<double>(rng() >> 11) * 0x1.0p-53;
            }
        } while (!l1_normalize(w));
        starts.push_back(std::move(w));
    }
    for (std::size_t i = 0; i < f; ++i) {
        std::vector<double> w(f, 0.0);
        w[i] = 1.0;
        starts.push_back(std::move(w));
    }

    std::vector<RestartOutcome> outcomes(starts.size());
    const unsigned threads = std::clamp<unsigned>(options.threads, 1U, static_cast<unsigned>(starts.size()));
    if (threads == 1) {
        for (std::size_t s = 0; s < starts.size(); ++s) {
            outcomes[s] = ascend(data, starts[s], options);
        }
    } else {
        std::vector<std::thread> pool;
        for (unsigned t = 0; t < threads; ++t) {
            pool.emplace_back([&, t] {
                for (std::size_t s = t; s < starts.size(); s += threads) {
                    outcomes[s] = ascend(data, starts[s], options);
                }
            });
        }
        for (auto &th : pool) {
            th.join();
        }
    }

    CoordinateAscentResult result;
    for (std::size_t s = 0; s < outcomes.size(); ++s) {
        if (s == 0 || outcomes[s].metric > outcomes[result.best_restart].metric) {
            result.best_restart = s;
        }
    }
    const auto &best = outcomes[result.best_restart];
    result.model.columns = columns;
    result.model.weights = best.weights;
    result.metric = best.metric;
    result.trace = best.trace;
    const std::size_t first_single = 1 + static_cast<std::size_t>(options.random_restarts);
    for (std::size_t i = 0; i < f; ++i) {
        result.single_feature.push_back(outcomes[first_single + i].trace.front());
    }
    return result;
}

// Ranking and runs

void sort_ranked(std::vector<RankedDoc> &docs)
{
    std::sort(docs.begin(), docs.end(), [](const RankedDoc &a, const RankedDoc &b) {
        if (a.score != b.score) {
            return a.score > b.score;
        }
        return a.docno < b.docno;
    });
}

QueryRun rank_with_model(const LinearModel &model, const FeatureMatrix &features)
{
    if (!model.columns.empty() && model.columns != features.columns) {
        throw std::invalid_argument("model columns do not match the extracted features");
    }
    if (model.weights.size() != features.columns.size()) {
        throw std::invalid_argument("model has " + std::to_string(model.weights.size()) + " weights for " +
                                    std::to_string(features.columns.size()) + " features");
    }
    QueryRun run;
    run.qid = features.query_id;
    for (std::size_t i = 0; i < features.rows.size(); ++i) {
        run.docs.push_back({features.docnos[i], model.score(features.rows[i])});
    }
    sort_ranked(run.docs);
    return run;
}

void write_trec_run(std::ostream &out, const RunOutput &run, std::size_t depth)
{
    for (const auto &q : run.queries) {
        std::size_t n = depth == 0 ? q.docs.size() : std::min(depth, q.docs.size());
        for (std::size_t i = 0; i < n; ++i) {
            out << q.qid << " Q0 " << q.docs[i].docno << ' ' << (i + 1) << ' ' << format_number(q.docs[i].score)
                << ' ' << run.run_id << '\n';
        }
    }
}

RunOutput read_trec_run(std::istream &in)
{
    RunOutput run;
    std::map<std::string, std::size_t> index;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream ls(line);
        std::string qid, q0, docno, rank, score_text, run_id;
        if (!(ls >> qid)) {
            continue;
        }
        if (!(ls >> q0 >> docno >> rank >> score_text >> run_id)) {
            throw ParseError(line_no, "expected 'qid Q0 docno rank score runId'");
        }
        double score = 0.0;
        auto [ptr, ec] = std::from_chars(score_text.data(), score_text.data() + score_text.size(), score);
        if (ec != std::errc() || ptr != score_text.data() + score_text.size()) {
            throw ParseError(line_no, "bad score '" + score_text + "'");
        }
        if (run.run_id.empty()) {
            run.run_id = run_id;
        }
        auto [it, inserted] = index.emplace(qid, run.queries.size());
        if (inserted) {
            run.queries.push_back({qid, {}});
        }
        run.queries[it->second].docs.push_back({docno, score});
    }
    for (auto &q : run.queries) {
        sort_ranked(q.docs);
    }
    return run;
}

Evaluation evaluate_run(const RunOutput &run, const Qrels &qrels, std::size_t k, std::size_t mrr_cutoff)
{
    Evaluation ev;
    for (const auto &q : run.queries) {
        if (!qrels.has_query(q.qid)) {
            continue;
        }
        std::vector<int> grades;
        std::vector<std::string> docnos;
        for (const auto &d : q.docs) {
            grades.push_back(qrels.grade(q.qid, d.docno));
            docnos.push_back(d.docno);
        }
        auto ideal = qrels.ideal_grades(q.qid);
        ev.queries.push_back({q.qid, ndcg_at_k(grades, ideal, k), mrr(docnos, qrels.relevant(q.qid), mrr_cutoff)});
    }
    for (const auto &e : ev.queries) {
        ev.mean_ndcg += e.ndcg;
        ev.mean_mrr += e.mrr;
    }
    if (!ev.queries.empty()) {
        ev.mean_ndcg /= static_cast<double>(ev.queries.size());
        ev.mean_mrr /= static_cast<double>(ev.queries.size());
    }
    return ev;
}

// RankLib format

std::string format_number(double v)
{
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc()) {
        throw std::runtime_error("number formatting failed");
    }
    return std::string(buf, ptr);
}

void export_ranklib(std::ostream &out, std::span<const FeatureMatrix> features, const Qrels &qrels)
{
    for (const auto &m : features) {
        for (std::size_t i = 0; i < m.rows.size(); ++i) {
            out << qrels.grade(m.query_id, m.docnos[i]) << " qid:" << m.query_id;
            for (std::size_t f = 0; f < m.rows[i].size(); ++f) {
                out << ' ' << (f + 1) << ':' << format_number(m.rows[i][f]);
            }
            out << " # " << m.docnos[i] << '\n';
        }
    }
}

std::vector<QueryGroup> parse_ranklib(std::istream &in)
{
    std::vector<QueryGroup> groups;
    std::string line;
    std::size_t line_no = 0;
    std::size_t width = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::string docno;
        if (auto hash = line.find('#'); hash != std::string::npos) {
            docno = line.substr(hash + 1);
            line.resize(hash);
            auto b = docno.find_first_not_of(" \t");
            auto e = docno.find_last_not_of(" \t\r");
            docno = b == std::string::npos ? "" : docno.substr(b, e - b + 1);
        }
        std::istringstream ls(line);
        std::string grade_text;
        if (!(ls >> grade_text)) {
            continue;
        }
        int grade = 0;
        if (std::from_chars(grade_text.data(), grade_text.data() + grade_text.size(), grade).ec != std::errc() ||
            grade < 0) {
            throw ParseError(line_no, "bad grade '" + grade_text + "'");
        }
        std::string qtok;
        if (!(ls >> qtok) || qtok.rfind("qid:", 0) != 0) {
            throw ParseError(line_no, "expected qid:<id> after the grade");
        }
        std::string qid = qtok.substr(4);
        std::vector<double> row;
        std::string tok;
        while (ls >> tok) {
            auto colon = tok.find(':');
            std::size_t idx = 0;
            double v = 0.0;
            if (colon == std::string::npos ||
                std::from_chars(tok.data(), tok.data() + colon, idx).ec != std::errc() || idx == 0 ||
                std::from_chars(tok.data() + colon + 1, tok.data() + tok.size(), v).ec != std::errc()) {
                throw ParseError(line_no, "bad feature '" + tok + "'");
            }
            if (row.size() < idx) {
                row.resize(idx, 0.0);
            }
            row[idx - 1] = v;
        }
        width = std::max(width, row.size());
        if (groups.empty() || groups.back().qid != qid) {
            groups.push_back({qid, {}, {}, {}});
        }
        auto &g = groups.back();
        g.docnos.push_back(docno);
        g.rows.push_back(std::move(row));
        g.grades.push_back(grade);
    }
    for (auto &g : groups) {
        for (auto &r : g.rows) {
            r.resize(width, 0.0);
        }
    }
    return groups;
}

}  // namespace hybrid
