#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "hybrid/ann_index.hpp"
#include "hybrid/extractors.hpp"

namespace hybrid {

/// Per-field export keeps one vector per extractor and leaves the weights
/// adjustable; composite export bakes sqrt(weight) into one concatenated
/// vector on both sides.
enum class ExportScenario { PerField, Composite };

std::string scenario_name(ExportScenario s);
ExportScenario scenario_from_name(const std::string &name);

struct ExportField {
    std::string name;
    std::shared_ptr<const InnerProductExtractor> extractor;
    double weight = 1.0;
};

struct ManifestField {
    std::string name;
    bool sparse = false;
    /// Term-id space size (sparse) or dimension (dense).
    std::size_t space = 0;
    double weight = 1.0;
    /// First term id of this field inside a concatenated vector.
    std::size_t offset = 0;

    friend bool operator==(const ManifestField &, const ManifestField &) = default;
};

struct ExportManifest {
    ExportScenario scenario = ExportScenario::PerField;
    std::vector<ManifestField> fields;
    std::size_t doc_count = 0;
    /// Extractor configurations (one per field) needed to vectorize queries.
    std::vector<ExtractorConfig> extractors;
    /// Directory the extractor configurations' relative paths resolve to.
    std::string config_base_dir;

    /// Name of the space the exported vectors live in.
    [[nodiscard]] std::string space_name() const;
    /// True when the concatenated vector is sparse (any sparse field).
    [[nodiscard]] bool composite_sparse() const;

    [[nodiscard]] nlohmann::json to_json() const;
    static ExportManifest from_json(const nlohmann::json &j);
};

/// Turns inner-product-equivalent extractors into query and document
/// vectors for k-NN search.
class VectorExporter {
   public:
    /// Throws ConfigError for duplicate names, non-finite weights or an
    /// extractor whose configured score is not an inner product.
    explicit VectorExporter(std::vector<ExportField> fields);

    [[nodiscard]] const std::vector<ExportField> &fields() const { return fields_; }
    [[nodiscard]] std::vector<double> weights() const;
    [[nodiscard]] ExportManifest manifest(ExportScenario scenario, std::size_t doc_count) const;

    [[nodiscard]] CompositeVector per_field_doc(DocId doc) const;
    [[nodiscard]] CompositeVector per_field_query(const QueryEntry &query) const;
    /// Throws std::invalid_argument on a negative weight.
    [[nodiscard]] FieldVector composite_doc(DocId doc) const;
    [[nodiscard]] FieldVector composite_query(const QueryEntry &query) const;

    [[nodiscard]] AnyVector doc_vector(DocId doc, ExportScenario scenario) const;
    [[nodiscard]] AnyVector query_vector(const QueryEntry &query, ExportScenario scenario) const;
    [[nodiscard]] Space space(ExportScenario scenario) const;

   private:
    [[nodiscard]] std::vector<ManifestField> layout() const;

    std::vector<ExportField> fields_;
};

/// Concatenates field vectors, scaling each by sqrt(weight). The result is
/// sparse when `sparse` is set (dense dimensions become term ids after the
/// field offset), otherwise the dense fields are laid end to end.
FieldVector concatenate_fields(std::span<const FieldVector> parts, std::span<const ManifestField> layout,
                               bool sparse);

/// Vectors for one extractor over documents [0, doc_count).
std::vector<FieldVector> export_field_vectors(const InnerProductExtractor &extractor, std::size_t doc_count);

struct ExportData {
    ExportManifest manifest;
    BruteForceIndex vectors;
};

ExportData export_vectors(const VectorExporter &exporter, ExportScenario scenario, std::size_t doc_count);

/// Writes `<dir>/manifest.json` and `<dir>/vectors.bin` (brute-force index
/// layout).
void write_export(const std::filesystem::path &dir, const ExportData &data);
ExportData read_export(const std::filesystem::path &dir);

/// Builds an exporter from extractor configurations; field names are taken
/// from the extractors' feature names. Weights default to 1.
VectorExporter make_exporter(std::span<const ExtractorConfig> configs, const ExtractorResources &res,
                             std::span<const double> weights = {});

}  // namespace hybrid
