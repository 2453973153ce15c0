#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "hybrid/extractors.hpp"

namespace hybrid {

/// Graded relevance judgments keyed by (query id, docno). Absent pairs have
/// grade 0.
class Qrels {
   public:
    void set(const std::string &qid, const std::string &docno, int grade);
    [[nodiscard]] int grade(const std::string &qid, const std::string &docno) const;
    [[nodiscard]] bool has_query(const std::string &qid) const { return judgments_.count(qid) != 0; }
    /// All judged grades of a query, highest first.
    [[nodiscard]] std::vector<int> ideal_grades(const std::string &qid) const;
    [[nodiscard]] std::set<std::string> relevant(const std::string &qid) const;
    [[nodiscard]] std::size_t query_count() const { return judgments_.size(); }
    [[nodiscard]] const std::map<std::string, std::map<std::string, int>> &judgments() const { return judgments_; }

    /// Whitespace-separated `qid 0 docno grade` lines; blank lines skipped.
    static Qrels parse(std::istream &in);
    static Qrels load_file(const std::filesystem::path &path);

   private:
    std::map<std::string, std::map<std::string, int>> judgments_;
};

/// DCG@k / IDCG@k with gain 2^g - 1 and discount log2(i + 1); 0 when the
/// ideal DCG is 0. `ideal` need not be sorted.
double ndcg_at_k(std::span<const int> grades, std::span<const int> ideal, std::size_t k);

/// Reciprocal rank of the first relevant docno; 0 when none is found in
/// the first `cutoff` entries (0 = no cutoff).
double mrr(std::span<const std::string> ranked, const std::set<std::string> &relevant, std::size_t cutoff = 0);

enum class MetricKind { NDCG, MRR };

struct Metric {
    MetricKind kind = MetricKind::NDCG;
    std::size_t k = 10;  // NDCG depth or MRR cutoff (0 = none)

    /// "ndcg@10", "ndcg", "mrr", "mrr@10".
    static Metric parse(const std::string &name);
    [[nodiscard]] std::string name() const;
};

struct LinearModel {
    std::vector<std::string> columns;
    std::vector<double> weights;

    [[nodiscard]] double score(std::span<const double> row) const;
    void save(std::ostream &out) const;
    static LinearModel load(std::istream &in);
    void save_file(const std::filesystem::path &path) const;
    static LinearModel load_file(const std::filesystem::path &path);
};

/// Training data for one query: candidate rows and their grades.
struct QueryGroup {
    std::string qid;
    std::vector<std::string> docnos;
    std::vector<std::vector<double>> rows;
    std::vector<int> grades;
};

QueryGroup make_group(const FeatureMatrix &features, const Qrels &qrels);

struct CoordinateAscentOptions {
    Metric metric;
    int random_restarts = 5;
    std::vector<double> deltas{0.05, 0.1, 0.2, 0.5, 1.0, 2.0, 5.0};
    double tolerance = 1e-6;
    int max_sweeps = 20;
    std::uint64_t seed = 42;
    unsigned threads = 1;
};

struct CoordinateAscentResult {
    LinearModel model;
    double metric = 0.0;
    /// Training metric of the returned restart: its start value followed by
    /// the value after each accepted step.
    std::vector<double> trace;
    /// Training metric of ranking by each single feature.
    std::vector<double> single_feature;
    std::size_t best_restart = 0;
};

/// Mean training metric of a weight vector. NDCG uses the candidates' own
/// grades as the ideal ranking.
double training_metric(std::span<const QueryGroup> groups, std::span<const double> weights, const Metric &metric);

/// Throws std::invalid_argument for mismatched columns and
/// std::runtime_error when no candidate anywhere is relevant.
CoordinateAscentResult coordinate_ascent_train(std::span<const QueryGroup> groups,
                                               const std::vector<std::string> &columns,
                                               const CoordinateAscentOptions &options = {});

struct RankedDoc {
    std::string docno;
    double score;
};

struct QueryRun {
    std::string qid;
    std::vector<RankedDoc> docs;
};

struct RunOutput {
    std::string run_id;
    std::vector<QueryRun> queries;
};

/// Scores rows with the model and sorts descending, ties by docno.
QueryRun rank_with_model(const LinearModel &model, const FeatureMatrix &features);
void sort_ranked(std::vector<RankedDoc> &docs);

void write_trec_run(std::ostream &out, const RunOutput &run, std::size_t depth = 0);
RunOutput read_trec_run(std::istream &in);

struct QueryEvaluation {
    std::string qid;
    double ndcg;
    double mrr;
};

struct Evaluation {
    std::vector<QueryEvaluation> queries;
    double mean_ndcg = 0.0;
    double mean_mrr = 0.0;
};

/// NDCG@k against the judged ideal and MRR over grade > 0, for run queries
/// that have judgments.
Evaluation evaluate_run(const RunOutput &run, const Qrels &qrels, std::size_t k = 10, std::size_t mrr_cutoff = 0);

/// "grade qid:<q> 1:<v1> 2:<v2> ... # <docno>" per candidate.
void export_ranklib(std::ostream &out, std::span<const FeatureMatrix> features, const Qrels &qrels);
std::vector<QueryGroup> parse_ranklib(std::istream &in);

std::string format_number(double v);

}  // namespace hybrid
