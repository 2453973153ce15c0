#include "hybrid/vectors.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

#include "hybrid/binary_io.hpp"

namespace hybrid {

namespace {

void require_same_dim(const DenseVector &a, const DenseVector &b)
{
    if (a.dim() != b.dim()) {
        throw std::invalid_argument("dimension mismatch: " + std::to_string(a.dim()) + " vs " +
                                    std::to_string(b.dim()));
    }
}

enum class VectorTag : std::uint8_t { Dense = 1, Sparse = 2, Composite = 3 };

void write_field_vector(BinaryWriter &w, const FieldVector &v)
{
    if (const auto *d = std::get_if<DenseVector>(&v)) {
        w.u8(static_cast<std::uint8_t>(VectorTag::Dense));
        w.u32(static_cast<std::uint32_t>(d->dim()));
        for (float x : d->values()) {
            w.f32(x);
        }
    } else {
        const auto &s = std::get<SparseVector>(v);
        w.u8(static_cast<std::uint8_t>(VectorTag::Sparse));
        w.u32(static_cast<std::uint32_t>(s.size()));
        for (const auto &e : s.entries()) {
            w.u32(e.term);
            w.f32(e.value);
        }
    }
}

constexpr std::uint32_t kMaxVectorEntries = 1U << 26;

std::uint32_t read_entry_count(BinaryReader &r)
{
    auto n = r.u32();
    if (n > kMaxVectorEntries) {
        throw FormatError("implausible vector length " + std::to_string(n));
    }
    return n;
}

FieldVector read_field_vector(BinaryReader &r, std::uint8_t tag)
{
    if (tag == static_cast<std::uint8_t>(VectorTag::Dense)) {
        std::vector<float> values(read_entry_count(r));
        for (auto &x : values) {
            x = r.f32();
        }
        return DenseVector(std::move(values));
    }
    if (tag == static_cast<std::uint8_t>(VectorTag::Sparse)) {
        std::vector<SparseEntry> entries(read_entry_count(r));
        for (auto &e : entries) {
            e.term = r.u32();
            e.value = r.f32();
        }
        return SparseVector(std::move(entries));
    }
    throw FormatError("unknown vector tag " + std::to_string(tag));
}

}  // namespace

DenseVector::DenseVector(std::vector<float> values) : values_(std::move(values))
{
    for (float x : values_) {
        if (!std::isfinite(x)) {
            throw std::invalid_argument("dense vector entries must be finite");
        }
    }
}

SparseVector::SparseVector(std::vector<SparseEntry> entries) : entries_(std::move(entries))
{
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (i > 0 && entries_[i].term <= entries_[i - 1].term) {
            throw std::invalid_argument("sparse vector term ids must be strictly increasing");
        }
        if (entries_[i].value == 0.0F || !std::isfinite(entries_[i].value)) {
            throw std::invalid_argument("sparse vector values must be nonzero and finite");
        }
    }
}

SparseVector SparseVector::from_unsorted(std::vector<SparseEntry> entries)
{
    std::sort(entries.begin(), entries.end(), [](const auto &a, const auto &b) { return a.term < b.term; });
    std::vector<SparseEntry> merged;
    merged.reserve(entries.size());
    for (const auto &e : entries) {
        if (!merged.empty() && merged.back().term == e.term) {
            merged.back().value += e.value;
        } else {
            merged.push_back(e);
        }
    }
    std::erase_if(merged, [](const SparseEntry &e) { return e.value == 0.0F; });
    return SparseVector(std::move(merged));
}

CompositeVector::CompositeVector(std::vector<CompositeField> fields) : fields_(std::move(fields))
{
    std::unordered_set<std::string> seen;
    for (const auto &f : fields_) {
        if (!seen.insert(f.name).second) {
            throw std::invalid_argument("duplicate composite field name '" + f.name + "'");
        }
        if (!std::isfinite(f.weight)) {
            throw std::invalid_argument("composite field weights must be finite");
        }
    }
}

void CompositeVector::set_weights(std::span<const double> weights)
{
    if (weights.size() != fields_.size()) {
        throw std::invalid_argument("weight count does not match field count");
    }
    for (std::size_t i = 0; i < weights.size(); ++i) {
        if (!std::isfinite(weights[i])) {
            throw std::invalid_argument("composite field weights must be finite");
        }
        fields_[i].weight = weights[i];
    }
}

double dot(const DenseVector &a, const DenseVector &b)
{
    require_same_dim(a, b);
    double sum = 0.0;
    for (std::size_t i = 0; i < a.dim(); ++i) {
        sum += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    }
    return sum;
}

double dot(const SparseVector &a, const SparseVector &b)
{
    auto x = a.entries();
    auto y = b.entries();
    std::size_t i = 0;
    std::size_t j = 0;
    double sum = 0.0;
    while (i < x.size() && j < y.size()) {
        if (x[i].term < y[j].term) {
            ++i;
        } else if (y[j].term < x[i].term) {
            ++j;
        } else {
            sum += static_cast<double>(x[i].value) * static_cast<double>(y[j].value);
            ++i;
            ++j;
        }
    }
    return sum;
}

double dot(const FieldVector &a, const FieldVector &b)
{
    if (a.index() != b.index()) {
        throw std::invalid_argument("cannot take inner product of dense and sparse vectors");
    }
    if (const auto *d = std::get_if<DenseVector>(&a)) {
        return dot(*d, std::get<DenseVector>(b));
    }
    return dot(std::get<SparseVector>(a), std::get<SparseVector>(b));
}

double l2_distance(const DenseVector &a, const DenseVector &b)
{
    require_same_dim(a, b);
    double sum = 0.0;
    for (std::size_t i = 0; i < a.dim(); ++i) {
        double diff = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        sum += diff * diff;
    }
    return std::sqrt(sum);
}

double l2_norm(const DenseVector &a)
{
    double sum = 0.0;
    for (float x : a.values()) {
        sum += static_cast<double>(x) * static_cast<double>(x);
    }
    return std::sqrt(sum);
}

double cosine_similarity(const DenseVector &a, const DenseVector &b)
{
    require_same_dim(a, b);
    double na = l2_norm(a);
    double nb = l2_norm(b);
    if (na == 0.0 || nb == 0.0) {
        return 0.0;
    }
    return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

DenseVector normalize_l2(const DenseVector &a)
{
    double n = l2_norm(a);
    if (n == 0.0) {
        return a;
    }
    std::vector<float> out(a.dim());
    for (std::size_t i = 0; i < a.dim(); ++i) {
        out[i] = static_cast<float>(static_cast<double>(a[i]) / n);
    }
    return DenseVector(std::move(out));
}

double composite_score(const CompositeVector &q, const CompositeVector &d)
{
    auto qf = q.fields();
    auto df = d.fields();
    if (qf.size() != df.size()) {
        throw std::invalid_argument("composite schema mismatch: field counts differ");
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < qf.size(); ++i) {
        if (qf[i].name != df[i].name || qf[i].vector.index() != df[i].vector.index()) {
            throw std::invalid_argument("composite schema mismatch at field '" + qf[i].name + "'");
        }
        if (qf[i].weight == 0.0) {
            continue;
        }
        sum += qf[i].weight * dot(qf[i].vector, df[i].vector);
    }
    return sum;
}

std::string Space::name() const
{
    switch (kind_) {
        case SpaceKind::L2Dense:
            return "l2";
        case SpaceKind::CosineDense:
            return "cosine";
        case SpaceKind::InnerProductDense:
            return "ip-dense";
        case SpaceKind::InnerProductSparse:
            return "ip-sparse";
        case SpaceKind::CompositeInnerProduct:
            return "ip-composite";
    }
    return "unknown";
}

Space Space::from_name(const std::string &name)
{
    for (auto k : {SpaceKind::L2Dense, SpaceKind::CosineDense, SpaceKind::InnerProductDense,
                   SpaceKind::InnerProductSparse, SpaceKind::CompositeInnerProduct}) {
        if (Space(k).name() == name) {
            return Space(k);
        }
    }
    throw std::invalid_argument("unknown space '" + name + "'");
}

bool Space::accepts(const AnyVector &v) const
{
    switch (kind_) {
        case SpaceKind::L2Dense:
        case SpaceKind::CosineDense:
        case SpaceKind::InnerProductDense:
            return std::holds_alternative<DenseVector>(v);
        case SpaceKind::InnerProductSparse:
            return std::holds_alternative<SparseVector>(v);
        case SpaceKind::CompositeInnerProduct:
            return std::holds_alternative<CompositeVector>(v);
    }
    return false;
}

void Space::require(const AnyVector &v) const
{
    if (!accepts(v)) {
        throw std::invalid_argument("vector kind does not match space '" + name() + "'");
    }
}

double Space::score(const AnyVector &a, const AnyVector &b) const
{
    switch (kind_) {
        case SpaceKind::L2Dense:
            return l2_distance(std::get<DenseVector>(a), std::get<DenseVector>(b));
        case SpaceKind::CosineDense:
            return cosine_similarity(std::get<DenseVector>(a), std::get<DenseVector>(b));
        case SpaceKind::InnerProductDense:
            return dot(std::get<DenseVector>(a), std::get<DenseVector>(b));
        case SpaceKind::InnerProductSparse:
            return dot(std::get<SparseVector>(a), std::get<SparseVector>(b));
        case SpaceKind::CompositeInnerProduct:
            return composite_score(std::get<CompositeVector>(a), std::get<CompositeVector>(b));
    }
    throw std::logic_error("unhandled space kind");
}

double Space::distance(const AnyVector &a, const AnyVector &b) const
{
    double s = score(a, b);
    return orientation() == Orientation::Distance ? s : -s;
}

void write_vector(BinaryWriter &w, const AnyVector &v)
{
    if (const auto *c = std::get_if<CompositeVector>(&v)) {
        w.u8(static_cast<std::uint8_t>(VectorTag::Composite));
        w.u32(static_cast<std::uint32_t>(c->size()));
        for (const auto &f : c->fields()) {
            w.str(f.name);
            w.f64(f.weight);
            write_field_vector(w, f.vector);
        }
        return;
    }
    if (const auto *d = std::get_if<DenseVector>(&v)) {
        write_field_vector(w, *d);
    } else {
        write_field_vector(w, std::get<SparseVector>(v));
    }
}

AnyVector read_vector(BinaryReader &r)
{
    auto tag = r.u8();
    if (tag == static_cast<std::uint8_t>(VectorTag::Composite)) {
        std::vector<CompositeField> fields(read_entry_count(r));
        for (auto &f : fields) {
            f.name = r.str();
            f.weight = r.f64();
            f.vector = read_field_vector(r, r.u8());
        }
        return CompositeVector(std::move(fields));
    }
    auto fv = read_field_vector(r, tag);
    if (auto *d = std::get_if<DenseVector>(&fv)) {
        return std::move(*d);
    }
    return std::get<SparseVector>(std::move(fv));
}

}  // namespace hybrid
