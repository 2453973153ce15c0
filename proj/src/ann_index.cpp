#include "hybrid/ann_index.hpp"

#include <algorithm>
#include <istream>
#include <limits>
#include <ostream>
#include <queue>
#include <stdexcept>

#include "hybrid/binary_io.hpp"

namespace hybrid {

namespace {

constexpr std::uint32_t kBruteForceVersion = 1;
constexpr std::uint32_t kHnswVersion = 1;
constexpr std::uint64_t kMaxPoints = 1ULL << 32;

}  // namespace

void sort_hits(std::vector<SearchHit> &hits, const Space &space)
{
    std::sort(hits.begin(), hits.end(), [&space](const SearchHit &a, const SearchHit &b) {
        if (a.score != b.score) {
            return space.better(a.score, b.score);
        }
        return a.id < b.id;
    });
}

DocId BruteForceIndex::add(AnyVector v)
{
    space_.require(v);
    data_.push_back(std::move(v));
    return static_cast<DocId>(data_.size() - 1);
}

std::vector<SearchHit> BruteForceIndex::search(const AnyVector &q, std::size_t k) const
{
    if (k == 0) {
        throw std::invalid_argument("k must be at least 1");
    }
    if (data_.empty()) {
        return {};
    }
    space_.require(q);
    std::vector<SearchHit> hits;
    hits.reserve(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) {
        hits.push_back({static_cast<DocId>(i), space_.score(q, data_[i])});
    }
    auto keep = std::min(k, hits.size());
    auto cmp = [this](const SearchHit &a, const SearchHit &b) {
        if (a.score != b.score) {
            return space_.better(a.score, b.score);
        }
        return a.id < b.id;
    };
    std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(keep), hits.end(), cmp);
    hits.resize(keep);
    return hits;
}

void BruteForceIndex::save(std::ostream &out) const
{
    BinaryWriter w(out);
    w.magic("BFIX");
    w.u32(kBruteForceVersion);
    w.u32(static_cast<std::uint32_t>(space_.kind()));
    w.u64(data_.size());
    for (const auto &v : data_) {
        write_vector(w, v);
    }
    w.check();
}

BruteForceIndex BruteForceIndex::load(std::istream &in)
{
    BinaryReader r(in);
    r.expect_magic("BFIX", "brute-force index");
    r.expect_version(kBruteForceVersion, "brute-force index");
    BruteForceIndex index(Space(static_cast<SpaceKind>(r.u32())));
    auto n = r.count(kMaxPoints, "point");
    for (std::uint64_t i = 0; i < n; ++i) {
        index.add(read_vector(r));
    }
    return index;
}

HnswParams HnswParams::for_m(std::uint32_t m, std::uint64_t seed)
{
    HnswParams p;
    p.m = m;
    p.max_m0 = 2 * m;
    p.level_mult = m > 1 ? 1.0 / std::log(static_cast<double>(m)) : 1.0;
    p.seed = seed;
    return p;
}

int assign_level(double u, double level_mult)
{
    if (!(u > 0.0 && u <= 1.0) || !(level_mult > 0.0)) {
        throw std::invalid_argument("assign_level requires u in (0,1] and level_mult > 0");
    }
    // Guard against -ln(u)*mult landing a hair under an integer.
    double x = -std::log(u) * level_mult;
    double r = std::round(x);
    if (std::abs(x - r) < 1e-12) {
        x = r;
    }
    return static_cast<int>(std::floor(x));
}

std::vector<SearchHit> select_neighbors(std::span<const SearchHit> candidates, std::size_t m,
                                        const PairDistance &distance)
{
    std::vector<SearchHit> kept;
    std::vector<SearchHit> pruned;
    for (const auto &c : candidates) {
        if (kept.size() >= m) {
            break;
        }
        bool good = true;
        for (const auto &r : kept) {
            if (distance(c.id, r.id) <= c.score) {
                good = false;
                break;
            }
        }
        if (good) {
            kept.push_back(c);
        } else {
            pruned.push_back(c);
        }
    }
    for (const auto &p : pruned) {
        if (kept.size() >= m) {
            break;
        }
        kept.push_back(p);
    }
    std::stable_sort(kept.begin(), kept.end(), [](const SearchHit &a, const SearchHit &b) {
        return a.score != b.score ? a.score < b.score : a.id < b.id;
    });
    return kept;
}

HnswIndex::HnswIndex(Space space, HnswParams params) : space_(space), params_(params), rng_(params.seed)
{
    if (params_.m < 1 || params_.max_m0 < params_.m || params_.ef_construction < 1 || !(params_.level_mult > 0.0)) {
        throw std::invalid_argument("invalid HNSW parameters");
    }
}

double HnswIndex::draw_uniform()
{
    // 53 random bits mapped to (0, 1]; avoids the implementation-defined
    // std::uniform_real_distribution so graphs are portable.
    auto bits = rng_() >> 11;
    return 1.0 - static_cast<double>(bits) * 0x1.0p-53;
}

HnswIndex::Candidate HnswIndex::greedy_closest(const AnyVector &q, Candidate start, int level) const
{
    Candidate cur = start;
    bool changed = true;
    while (changed) {
        changed = false;
        for (DocId nb : links_[cur.id][level]) {
            double d = distance_to(q, nb);
            if (d < cur.dist || (d == cur.dist && nb < cur.id)) {
                cur = {d, nb};
                changed = true;
            }
        }
    }
    return cur;
}

std::vector<HnswIndex::Candidate> HnswIndex::search_layer(const AnyVector &q, std::span<const Candidate> entry_points,
                                                          std::size_t ef, int level,
                                                          std::vector<std::uint32_t> &visited,
                                                          std::uint32_t &visit_tag) const
{
    auto closer = [](const Candidate &a, const Candidate &b) {
        return a.dist != b.dist ? a.dist < b.dist : a.id < b.id;
    };
    auto farther = [&closer](const Candidate &a, const Candidate &b) { return closer(b, a); };

    ++visit_tag;
    // Min-heap of frontier, max-heap of current results.
    std::priority_queue<Candidate, std::vector<Candidate>, decltype(farther)> frontier(farther);
    std::priority_queue<Candidate, std::vector<Candidate>, decltype(closer)> results(closer);
    for (const auto &ep : entry_points) {
        if (visited[ep.id] == visit_tag) {
            continue;
        }
        visited[ep.id] = visit_tag;
        frontier.push(ep);
        results.push(ep);
    }
    while (results.size() > ef) {
        results.pop();
    }

    while (!frontier.empty()) {
        auto c = frontier.top();
        frontier.pop();
        if (closer(results.top(), c) && results.size() >= ef) {
            break;
        }
        for (DocId nb : links_[c.id][level]) {
            if (visited[nb] == visit_tag) {
                continue;
            }
            visited[nb] = visit_tag;
            Candidate cand{distance_to(q, nb), nb};
            if (results.size() < ef || closer(cand, results.top())) {
                frontier.push(cand);
                results.push(cand);
                if (results.size() > ef) {
                    results.pop();
                }
            }
        }
    }

    std::vector<Candidate> out;
    out.reserve(results.size());
    while (!results.empty()) {
        out.push_back(results.top());
        results.pop();
    }
    std::reverse(out.begin(), out.end());
    return out;
}

std::vector<DocId> HnswIndex::select(std::vector<Candidate> nearest_first, std::size_t m) const
{
    std::vector<SearchHit> cands;
    cands.reserve(nearest_first.size());
    for (const auto &c : nearest_first) {
        cands.push_back({c.id, c.dist});
    }
    auto chosen = select_neighbors(cands, m, [this](DocId a, DocId b) { return space_.distance(data_[a], data_[b]); });
    std::vector<DocId> ids;
    ids.reserve(chosen.size());
    for (const auto &h : chosen) {
        ids.push_back(h.id);
    }
    return ids;
}

DocId HnswIndex::insert(AnyVector v)
{
    if (frozen_) {
        throw std::logic_error("cannot insert into a frozen HNSW index");
    }
    space_.require(v);
    const auto id = static_cast<DocId>(data_.size());
    const int level = assign_level(draw_uniform(), params_.level_mult);
    data_.push_back(std::move(v));
    links_.emplace_back(static_cast<std::size_t>(level) + 1);

    if (max_level_ < 0) {
        entry_ = id;
        max_level_ = level;
        return id;
    }

    const AnyVector &q = data_[id];
    std::vector<std::uint32_t> visited(data_.size(), 0);
    std::uint32_t tag = 0;

    Candidate cur{distance_to(q, entry_), entry_};
    for (int lc = max_level_; lc > level; --lc) {
        cur = greedy_closest(q, cur, lc);
    }

    std::vector<Candidate> entry_points{cur};
    for (int lc = std::min(level, max_level_); lc >= 0; --lc) {
        auto nearest = search_layer(q, entry_points, params_.ef_construction, lc, visited, tag);
        auto chosen = select(nearest, params_.m);
        links_[id][lc] = chosen;

        const std::size_t cap = lc == 0 ? params_.max_m0 : params_.m;
        for (DocId nb : chosen) {
            auto &adj = links_[nb][lc];
            adj.push_back(id);
            if (adj.size() > cap) {
                std::vector<Candidate> pool;
                pool.reserve(adj.size());
                for (DocId x : adj) {
                    pool.push_back({space_.distance(data_[nb], data_[x]), x});
                }
                std::sort(pool.begin(), pool.end(), [](const Candidate &a, const Candidate &b) {
                    return a.dist != b.dist ? a.dist < b.dist : a.id < b.id;
                });
                adj = select(std::move(pool), cap);
            }
        }
        entry_points = std::move(nearest);
    }

    if (level > max_level_) {
        max_level_ = level;
        entry_ = id;
    }
    return id;
}

std::vector<SearchHit> HnswIndex::search(const AnyVector &q, std::size_t k, std::size_t ef) const
{
    if (k == 0) {
        throw std::invalid_argument("k must be at least 1");
    }
    if (data_.empty()) {
        return {};
    }
    space_.require(q);
    std::vector<std::uint32_t> visited(data_.size(), 0);
    std::uint32_t tag = 0;

    Candidate cur{distance_to(q, entry_), entry_};
    for (int lc = max_level_; lc > 0; --lc) {
        cur = greedy_closest(q, cur, lc);
    }
    std::vector<Candidate> eps{cur};
    auto found = search_layer(q, eps, std::max(ef, k), 0, visited, tag);
    if (found.size() > k) {
        found.resize(k);
    }
    std::vector<SearchHit> hits;
    hits.reserve(found.size());
    for (const auto &c : found) {
        hits.push_back({c.id, space_.score_from_distance(c.dist)});
    }
    return hits;
}

void HnswIndex::save(std::ostream &out) const
{
    BinaryWriter w(out);
    w.magic("HNSW");
    w.u32(kHnswVersion);
    w.u32(static_cast<std::uint32_t>(space_.kind()));
    w.u32(params_.m);
    w.u32(params_.max_m0);
    w.u32(params_.ef_construction);
    w.f64(params_.level_mult);
    w.u64(params_.seed);
    w.u64(data_.size());
    w.u32(entry_);
    w.i32(max_level_);
    for (const auto &levels : links_) {
        w.u32(static_cast<std::uint32_t>(levels.size()));
        for (const auto &adj : levels) {
            w.u32(static_cast<std::uint32_t>(adj.size()));
            for (DocId x : adj) {
                w.u32(x);
            }
        }
    }
    for (const auto &v : data_) {
        write_vector(w, v);
    }
    w.check();
}

HnswIndex HnswIndex::load(std::istream &in)
{
    BinaryReader r(in);
    r.expect_magic("HNSW", "HNSW index");
    r.expect_version(kHnswVersion, "HNSW index");
    Space space(static_cast<SpaceKind>(r.u32()));
    HnswParams p;
    p.m = r.u32();
    p.max_m0 = r.u32();
    p.ef_construction = r.u32();
    p.level_mult = r.f64();
    p.seed = r.u64();
    HnswIndex index(space, p);
    auto n = r.count(kMaxPoints, "point");
    index.entry_ = r.u32();
    index.max_level_ = r.i32();
    index.links_.resize(n);
    for (auto &levels : index.links_) {
        auto nlev = r.u32();
        if (nlev == 0 || nlev > 64) {
            throw FormatError("HNSW index: corrupt level count");
        }
        levels.resize(nlev);
        for (auto &adj : levels) {
            auto deg = r.u32();
            if (deg > p.max_m0 + 1) {
                throw FormatError("HNSW index: corrupt adjacency list");
            }
            adj.resize(deg);
            for (auto &x : adj) {
                x = r.u32();
                if (x >= n) {
                    throw FormatError("HNSW index: neighbor id out of range");
                }
            }
        }
    }
    index.data_.reserve(n);
    for (std::uint64_t i = 0; i < n; ++i) {
        auto v = read_vector(r);
        space.require(v);
        index.data_.push_back(std::move(v));
    }
    if (n > 0 && (index.entry_ >= n || index.level_of(index.entry_) != index.max_level_)) {
        throw FormatError("HNSW index: inconsistent entry point");
    }
    index.frozen_ = true;
    return index;
}

}  // namespace hybrid
