#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "hybrid/vectors.hpp"

namespace hybrid {

using DocId = std::uint32_t;

/// One result entry. `score` follows the orientation of the space that
/// produced it (distance: lower is better, similarity: higher is better).
struct SearchHit {
    DocId id;
    double score;

    friend bool operator==(const SearchHit &, const SearchHit &) = default;
};

/// Sorts best-first under `space`, ties by lower id.
void sort_hits(std::vector<SearchHit> &hits, const Space &space);

/// Exhaustive scan.
class BruteForceIndex {
   public:
    explicit BruteForceIndex(Space space) : space_(space) {}

    DocId add(AnyVector v);
    [[nodiscard]] std::vector<SearchHit> search(const AnyVector &q, std::size_t k) const;

    [[nodiscard]] const Space &space() const { return space_; }
    [[nodiscard]] std::size_t size() const { return data_.size(); }
    [[nodiscard]] const AnyVector &vector(DocId id) const { return data_.at(id); }

    void save(std::ostream &out) const;
    static BruteForceIndex load(std::istream &in);

   private:
    Space space_;
    std::vector<AnyVector> data_;
};

struct HnswParams {
    std::uint32_t m = 16;
    std::uint32_t max_m0 = 32;
    std::uint32_t ef_construction = 200;
    double level_mult = 1.0 / std::log(16.0);
    std::uint64_t seed = 42;

    /// Defaults for a given M: max_m0 = 2M, level_mult = 1/ln(M).
    static HnswParams for_m(std::uint32_t m, std::uint64_t seed = 42);
};

/// floor(-ln(u) * level_mult) for u in (0, 1].
int assign_level(double u, double level_mult);

/// Pairwise distance between two indexed points, lower is better.
using PairDistance = std::function<double(DocId, DocId)>;

/// Heuristic neighbor selection. `candidates` carry their distance to the
/// base point in `score` and must be sorted nearest-first. A candidate is
/// kept only if it is closer to the base than to every neighbor already
/// kept; if fewer than `m` survive, the pruned ones fill the remaining
/// slots nearest-first.
std::vector<SearchHit> select_neighbors(std::span<const SearchHit> candidates, std::size_t m,
                                        const PairDistance &distance);

/// Hierarchical navigable small world graph. Traversal only ever calls
/// Space::distance, so any space (including non-metric inner product)
/// works. Construction is single-threaded and deterministic for a given
/// seed and insert order; after freeze() the index is read-only and
/// search() may be called concurrently.
class HnswIndex {
   public:
    explicit HnswIndex(Space space, HnswParams params = {});

    DocId insert(AnyVector v);
    void freeze() { frozen_ = true; }
    [[nodiscard]] bool frozen() const { return frozen_; }

    /// Approximate top-k: greedy descent through the upper layers, then a
    /// beam of width max(ef, k) at level 0.
    [[nodiscard]] std::vector<SearchHit> search(const AnyVector &q, std::size_t k, std::size_t ef) const;

    [[nodiscard]] const Space &space() const { return space_; }
    [[nodiscard]] const HnswParams &params() const { return params_; }
    [[nodiscard]] std::size_t size() const { return data_.size(); }
    [[nodiscard]] const AnyVector &vector(DocId id) const { return data_.at(id); }
    [[nodiscard]] DocId entry_point() const { return entry_; }
    [[nodiscard]] int max_level() const { return max_level_; }
    [[nodiscard]] int level_of(DocId id) const { return static_cast<int>(links_.at(id).size()) - 1; }
    [[nodiscard]] std::span<const DocId> neighbors(DocId id, int level) const { return links_.at(id).at(level); }

    void save(std::ostream &out) const;
    static HnswIndex load(std::istream &in);

   private:
    struct Candidate {
        double dist;
        DocId id;
    };

    [[nodiscard]] double distance_to(const AnyVector &q, DocId id) const { return space_.distance(q, data_[id]); }
    [[nodiscard]] Candidate greedy_closest(const AnyVector &q, Candidate start, int level) const;
    [[nodiscard]] std::vector<Candidate> search_layer(const AnyVector &q, std::span<const Candidate> entry_points,
                                                      std::size_t ef, int level,
                                                      std::vector<std::uint32_t> &visited,
                                                      std::uint32_t &visit_tag) const;
    std::vector<DocId> select(std::vector<Candidate> nearest_first, std::size_t m) const;
    double draw_uniform();

    Space space_;
    HnswParams params_;
    std::vector<AnyVector> data_;
    // links_[node][level] -> neighbor ids
    std::vector<std::vector<std::vector<DocId>>> links_;
    DocId entry_ = 0;
    int max_level_ = -1;
    std::mt19937_64 rng_;
    bool frozen_ = false;
};

}  // namespace hybrid
