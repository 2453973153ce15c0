#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace hybrid {

class BinaryReader;
class BinaryWriter;

using TermId = std::uint32_t;

/// Fixed-length dense vector. Stored as 32-bit floats; every entry finite.
class DenseVector {
   public:
    DenseVector() = default;
    explicit DenseVector(std::vector<float> values);
    DenseVector(std::initializer_list<float> values) : DenseVector(std::vector<float>(values)) {}

    [[nodiscard]] std::size_t dim() const { return values_.size(); }
    [[nodiscard]] std::span<const float> values() const { return values_; }
    [[nodiscard]] float operator[](std::size_t i) const { return values_[i]; }

    friend bool operator==(const DenseVector &, const DenseVector &) = default;

   private:
    std::vector<float> values_;
};

struct SparseEntry {
    TermId term;
    float value;

    friend bool operator==(const SparseEntry &, const SparseEntry &) = default;
};

/// Variable-size sparse vector: term ids strictly increasing, values nonzero
/// and finite. May be empty.
class SparseVector {
   public:
    SparseVector() = default;
    /// Validates the invariants; throws std::invalid_argument on violation.
    explicit SparseVector(std::vector<SparseEntry> entries);
    SparseVector(std::initializer_list<SparseEntry> entries) : SparseVector(std::vector<SparseEntry>(entries)) {}

    /// Sorts, sums duplicate ids and drops zeros.
    static SparseVector from_unsorted(std::vector<SparseEntry> entries);

    [[nodiscard]] std::size_t size() const { return entries_.size(); }
    [[nodiscard]] bool empty() const { return entries_.empty(); }
    [[nodiscard]] std::span<const SparseEntry> entries() const { return entries_; }

    friend bool operator==(const SparseVector &, const SparseVector &) = default;

   private:
    std::vector<SparseEntry> entries_;
};

using FieldVector = std::variant<DenseVector, SparseVector>;

struct CompositeField {
    std::string name;
    FieldVector vector;
    double weight = 1.0;

    friend bool operator==(const CompositeField &, const CompositeField &) = default;
};

/// Ordered list of named per-field vectors with their fusion weights.
class CompositeVector {
   public:
    CompositeVector() = default;
    explicit CompositeVector(std::vector<CompositeField> fields);

    [[nodiscard]] std::span<const CompositeField> fields() const { return fields_; }
    [[nodiscard]] std::size_t size() const { return fields_.size(); }
    /// Replaces the weights in place; the vectors are untouched.
    void set_weights(std::span<const double> weights);

    friend bool operator==(const CompositeVector &, const CompositeVector &) = default;

   private:
    std::vector<CompositeField> fields_;
};

using AnyVector = std::variant<DenseVector, SparseVector, CompositeVector>;

double dot(const DenseVector &a, const DenseVector &b);
double dot(const SparseVector &a, const SparseVector &b);
double dot(const FieldVector &a, const FieldVector &b);
double l2_distance(const DenseVector &a, const DenseVector &b);
double l2_norm(const DenseVector &a);
/// Zero when either side has zero norm.
double cosine_similarity(const DenseVector &a, const DenseVector &b);
DenseVector normalize_l2(const DenseVector &a);
/// Sum over fields of q.weight * <q_f, d_f>. Weights are taken from `q`.
double composite_score(const CompositeVector &q, const CompositeVector &d);

enum class SpaceKind : std::uint32_t {
    L2Dense = 1,
    CosineDense = 2,
    InnerProductDense = 3,
    InnerProductSparse = 4,
    CompositeInnerProduct = 5,
};

enum class Orientation { Distance, Similarity };

/// A vector representation paired with a distance or similarity.
class Space {
   public:
    explicit Space(SpaceKind kind) : kind_(kind) {}

    [[nodiscard]] SpaceKind kind() const { return kind_; }
    [[nodiscard]] Orientation orientation() const
    {
        return kind_ == SpaceKind::L2Dense ? Orientation::Distance : Orientation::Similarity;
    }
    [[nodiscard]] std::string name() const;
    static Space from_name(const std::string &name);

    [[nodiscard]] bool accepts(const AnyVector &v) const;
    /// Throws std::invalid_argument when `v` does not match the space kind.
    void require(const AnyVector &v) const;

    /// Score in the space's own orientation.
    [[nodiscard]] double score(const AnyVector &a, const AnyVector &b) const;
    /// Lower is better. Similarities are negated; no metric properties assumed.
    [[nodiscard]] double distance(const AnyVector &a, const AnyVector &b) const;
    /// Converts an internal distance back to the oriented score.
    [[nodiscard]] double score_from_distance(double d) const
    {
        return orientation() == Orientation::Distance ? d : -d;
    }
    /// True when oriented score `a` ranks strictly ahead of `b`.
    [[nodiscard]] bool better(double a, double b) const
    {
        return orientation() == Orientation::Distance ? a < b : a > b;
    }

    friend bool operator==(const Space &, const Space &) = default;

   private:
    SpaceKind kind_;
};

void write_vector(BinaryWriter &w, const AnyVector &v);
AnyVector read_vector(BinaryReader &r);

}  // namespace hybrid
