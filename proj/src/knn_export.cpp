#include "hybrid/knn_export.hpp"

#include <cmath>
#include <fstream>
#include <set>

namespace hybrid {

std::string scenario_name(ExportScenario s)
{
    return s == ExportScenario::PerField ? "per-field" : "composite";
}

ExportScenario scenario_from_name(const std::string &name)
{
    if (name == "per-field") {
        return ExportScenario::PerField;
    }
    if (name == "composite") {
        return ExportScenario::Composite;
    }
    throw ConfigError("unknown export scenario '" + name + "' (expected per-field or composite)");
}

// Manifest

bool ExportManifest::composite_sparse() const
{
    for (const auto &f : fields) {
        if (f.sparse) {
            return true;
        }
    }
    return false;
}

std::string ExportManifest::space_name() const
{
    if (scenario == ExportScenario::PerField) {
        return "ip-composite";
    }
    return composite_sparse() ? "ip-sparse" : "ip-dense";
}

nlohmann::json ExportManifest::to_json() const
{
    nlohmann::json j;
    j["scenario"] = scenario_name(scenario);
    j["space"] = space_name();
    j["docCount"] = doc_count;
    j["weights"] = scenario == ExportScenario::PerField ? "adjustable" : "baked";
    j["fields"] = nlohmann::json::array();
    for (const auto &f : fields) {
        j["fields"].push_back({{"name", f.name},
                               {"kind", f.sparse ? "sparse" : "dense"},
                               {"space", f.space},
                               {"weight", f.weight},
                               {"offset", f.offset}});
    }
    j["extractors"] = nlohmann::json::array();
    for (const auto &e : extractors) {
        j["extractors"].push_back({{"type", e.type}, {"params", e.params}});
    }
    j["configBaseDir"] = config_base_dir;
    return j;
}

ExportManifest ExportManifest::from_json(const nlohmann::json &j)
{
    try {
        ExportManifest m;
        m.scenario = scenario_from_name(j.at("scenario").get<std::string>());
        m.doc_count = j.at("docCount").get<std::size_t>();
        for (const auto &f : j.at("fields")) {
            ManifestField mf;
            mf.name = f.at("name").get<std::string>();
            auto kind = f.at("kind").get<std::string>();
            if (kind != "sparse" && kind != "dense") {
                throw ConfigError("manifest field '" + mf.name + "' has unknown kind '" + kind + "'");
            }
            mf.sparse = kind == "sparse";
            mf.space = f.at("space").get<std::size_t>();
            mf.weight = f.at("weight").get<double>();
            mf.offset = f.at("offset").get<std::size_t>();
            m.fields.push_back(std::move(mf));
        }
        if (j.contains("extractors")) {
            m.extractors = parse_extractor_configs(j.at("extractors"));
        }
        m.config_base_dir = j.value("configBaseDir", "");
        if (j.contains("space") && j.at("space").get<std::string>() != m.space_name()) {
            throw ConfigError("manifest space '" + j.at("space").get<std::string>() + "' does not match its fields");
        }
        return m;
    } catch (const nlohmann::json::exception &e) {
        throw ConfigError(std::string("malformed export manifest: ") + e.what());
    }
}

// Exporter

VectorExporter::VectorExporter(std::vector<ExportField> fields) : fields_(std::move(fields))
{
    if (fields_.empty()) {
        throw ConfigError("vector export needs at least one field");
    }
    std::set<std::string> names;
    for (const auto &f : fields_) {
        if (!f.extractor) {
            throw ConfigError("export field '" + f.name + "' has no extractor");
        }
        if (!f.extractor->inner_product_equivalent()) {
            throw ConfigError("extractor for '" + f.name +
                              "' is not inner-product equivalent (avgWordEmbed needs distType cosine)");
        }
        if (!std::isfinite(f.weight)) {
            throw ConfigError("export field '" + f.name + "' has a non-finite weight");
        }
        if (!names.insert(f.name).second) {
            throw ConfigError("duplicate export field '" + f.name + "'");
        }
    }
}

std::vector<double> VectorExporter::weights() const
{
    std::vector<double> w;
    for (const auto &f : fields_) {
        w.push_back(f.weight);
    }
    return w;
}

std::vector<ManifestField> VectorExporter::layout() const
{
    std::vector<ManifestField> out;
    std::size_t offset = 0;
    for (const auto &f : fields_) {
        ManifestField mf{f.name, f.extractor->sparse(), f.extractor->vector_space(), f.weight, offset};
        offset += mf.space;
        out.push_back(std::move(mf));
    }
    return out;
}

ExportManifest VectorExporter::manifest(ExportScenario scenario, std::size_t doc_count) const
{
    ExportManifest m;
    m.scenario = scenario;
    m.fields = layout();
    m.doc_count = doc_count;
    return m;
}

CompositeVector VectorExporter::per_field_doc(DocId doc) const
{
    std::vector<CompositeField> out;
    for (const auto &f : fields_) {
        out.push_back({f.name, f.extractor->doc_vector(doc), f.weight});
    }
    return CompositeVector(std::move(out));
}

CompositeVector VectorExporter::per_field_query(const QueryEntry &query) const
{
    std::vector<CompositeField> out;
    for (const auto &f : fields_) {
        out.push_back({f.name, f.extractor->query_vector(query), f.weight});
    }
    return CompositeVector(std::move(out));
}

FieldVector concatenate_fields(std::span<const FieldVector> parts, std::span<const ManifestField> layout, bool sparse)
{
    if (parts.size() != layout.size()) {
        throw std::invalid_argument("field count differs from the export layout");
    }
    for (const auto &f : layout) {
        if (f.weight < 0.0 || !std::isfinite(f.weight)) {
            throw std::invalid_argument("composite export needs nonnegative weights; field '" + f.name +
                                        "' has weight " + std::to_string(f.weight));
        }
    }
    if (!sparse) {
        std::vector<float> values;
        for (std::size_t i = 0; i < parts.size(); ++i) {
            const auto &dv = std::get<DenseVector>(parts[i]);
            if (dv.dim() != layout[i].space) {
                throw std::invalid_argument("field '" + layout[i].name + "' has dimension " +
                                            std::to_string(dv.dim()) + ", layout says " +
                                            std::to_string(layout[i].space));
            }
            const double s = std::sqrt(layout[i].weight);
            for (float x : dv.values()) {
                values.push_back(static_cast<float>(s * x));
            }
        }
        return DenseVector(std::move(values));
    }
    std::vector<SparseEntry> entries;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        const double s = std::sqrt(layout[i].weight);
        if (s == 0.0) {
            continue;
        }
        const auto offset = layout[i].offset;
        auto push = [&](std::size_t local, float x) {
            if (local >= layout[i].space) {
                throw std::invalid_argument("field '" + layout[i].name + "' component " + std::to_string(local) +
                                            " is outside its space");
            }
            float v = static_cast<float>(s * x);
            if (v != 0.0F) {
                entries.push_back({static_cast<TermId>(offset + local), v});
            }
        };
        if (const auto *sv = std::get_if<SparseVector>(&parts[i])) {
            for (const auto &e : sv->entries()) {
                push(e.term, e.value);
            }
        } else {
            const auto &dv = std::get<DenseVector>(parts[i]);
            for (std::size_t d = 0; d < dv.dim(); ++d) {
                push(d, dv[d]);
            }
        }
    }
    return SparseVector(std::move(entries));
}

FieldVector VectorExporter::composite_doc(DocId doc) const
{
    std::vector<FieldVector> parts;
    for (const auto &f : fields_) {
        parts.push_back(f.extractor->doc_vector(doc));
    }
    auto l = layout();
    return concatenate_fields(parts, l, manifest(ExportScenario::Composite, 0).composite_sparse());
}

FieldVector VectorExporter::composite_query(const QueryEntry &query) const
{
    std::vector<FieldVector> parts;
    for (const auto &f : fields_) {
        parts.push_back(f.extractor->query_vector(query));
    }
    auto l = layout();
    return concatenate_fields(parts, l, manifest(ExportScenario::Composite, 0).composite_sparse());
}

AnyVector VectorExporter::doc_vector(DocId doc, ExportScenario scenario) const
{
    if (scenario == ExportScenario::PerField) {
        return per_field_doc(doc);
    }
    return std::visit([](auto &&v) -> AnyVector { return v; }, composite_doc(doc));
}

AnyVector VectorExporter::query_vector(const QueryEntry &query, ExportScenario scenario) const
{
    if (scenario == ExportScenario::PerField) {
        return per_field_query(query);
    }
    return std::visit([](auto &&v) -> AnyVector { return v; }, composite_query(query));
}

Space VectorExporter::space(ExportScenario scenario) const
{
    return Space::from_name(manifest(scenario, 0).space_name());
}

std::vector<FieldVector> export_field_vectors(const InnerProductExtractor &extractor, std::size_t doc_count)
{
    std::vector<FieldVector> out;
    out.reserve(doc_count);
    for (DocId d = 0; d < doc_count; ++d) {
        out.push_back(extractor.doc_vector(d));
    }
    return out;
}

ExportData export_vectors(const VectorExporter &exporter, ExportScenario scenario, std::size_t doc_count)
{
    ExportData data{exporter.manifest(scenario, doc_count), BruteForceIndex(exporter.space(scenario))};
    for (DocId d = 0; d < doc_count; ++d) {
        data.vectors.add(exporter.doc_vector(d, scenario));
    }
    return data;
}

void write_export(const std::filesystem::path &dir, const ExportData &data)
{
    std::filesystem::create_directories(dir);
    {
        std::ofstream out(dir / "manifest.json");
        if (!out) {
            throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
        }
        out << data.manifest.to_json().dump(2) << '\n';
    }
    std::ofstream out(dir / "vectors.bin", std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write " + (dir / "vectors.bin").string());
    }
    data.vectors.save(out);
}

ExportData read_export(const std::filesystem::path &dir)
{
    std::ifstream mj(dir / "manifest.json");
    if (!mj) {
        throw ConfigError("no export manifest in " + dir.string());
    }
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(mj);
    } catch (const nlohmann::json::exception &e) {
        throw ConfigError((dir / "manifest.json").string() + ": " + e.what());
    }
    auto manifest = ExportManifest::from_json(j);
    std::ifstream vin(dir / "vectors.bin", std::ios::binary);
    if (!vin) {
        throw ConfigError("no exported vectors in " + dir.string());
    }
    auto vectors = BruteForceIndex::load(vin);
    if (vectors.size() != manifest.doc_count) {
        throw ConfigError("export holds " + std::to_string(vectors.size()) + " vectors, manifest says " +
                          std::to_string(manifest.doc_count));
    }
    if (vectors.space().name() != manifest.space_name()) {
        throw ConfigError("exported vectors are in space '" + vectors.space().name() + "', manifest says '" +
                          manifest.space_name() + "'");
    }
    return {std::move(manifest), std::move(vectors)};
}

VectorExporter make_exporter(std::span<const ExtractorConfig> configs, const ExtractorResources &res,
                             std::span<const double> weights)
{
    if (!weights.empty() && weights.size() != configs.size()) {
        throw ConfigError("got " + std::to_string(weights.size()) + " weights for " +
                          std::to_string(configs.size()) + " extractors");
    }
    std::vector<ExportField> fields;
    for (std::size_t i = 0; i < configs.size(); ++i) {
        std::shared_ptr<const FeatureExtractor> e = make_extractor(configs[i], res);
        auto ip = std::dynamic_pointer_cast<const InnerProductExtractor>(e);
        if (!ip) {
            throw ConfigError("extractor '" + configs[i].type + "' cannot be exported as vectors");
        }
        auto names = ip->feature_names();
        fields.push_back({names.front(), ip, weights.empty() ? 1.0 : weights[i]});
    }
    return VectorExporter(std::move(fields));
}

}  // namespace hybrid
