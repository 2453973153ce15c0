#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "hybrid/ann_index.hpp"
#include "hybrid/inverted_index.hpp"

namespace hybrid {

/// Malformed ingestion input. The message carries the line number.
class ParseError : public std::runtime_error {
   public:
    ParseError(std::size_t line, const std::string &what)
        : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line)
    {
    }
    [[nodiscard]] std::size_t line() const { return line_; }

   private:
    std::size_t line_;
};

/// One JSONL entry: a document or a query. `fields` holds every key other
/// than DOCNO, including "text" and any unknown extras. Non-string values
/// are kept as their JSON text.
struct DocumentEntry {
    std::string docno;
    std::map<std::string, std::string> fields;

    [[nodiscard]] const std::string &text() const { return fields.at("text"); }
    /// Empty string when the entry lacks the field.
    [[nodiscard]] std::string_view field(const std::string &name) const;
};

using QueryEntry = DocumentEntry;

/// Throws std::invalid_argument when DOCNO or text is missing.
DocumentEntry entry_from_json(const nlohmann::json &obj);
std::vector<DocumentEntry> parse_jsonl(std::istream &in);
std::vector<DocumentEntry> read_jsonl_file(const std::filesystem::path &path);
std::string to_json_line(const DocumentEntry &entry);

/// Splits on runs of whitespace. No case folding or stopping.
std::vector<std::string> tokenize_parsed(std::string_view text);

enum class FieldKind : std::uint8_t { Parsed = 1, Raw = 2 };

struct FieldSpec {
    std::string name;
    FieldKind kind = FieldKind::Parsed;

    /// Parses "name" or "name:parsed" / "name:raw".
    static FieldSpec parse(std::string_view spec);
};

/// Forward index for one field: a term dictionary plus per-document bags
/// of (term id, frequency), optional ordered term sequences, or stored raw
/// text for raw fields. Document ids are positions in the ingested
/// collection and agree across all fields built together.
class ForwardIndex {
   public:
    ForwardIndex() = default;
    ForwardIndex(std::string field, FieldKind kind, bool has_positions)
        : field_(std::move(field)), kind_(kind), has_positions_(has_positions)
    {
    }

    /// Appends one document. Parsed fields are tokenized here.
    DocId add_document(std::string docno, std::string_view content);

    [[nodiscard]] const std::string &field_name() const { return field_; }
    [[nodiscard]] FieldKind kind() const { return kind_; }
    [[nodiscard]] bool has_positions() const { return has_positions_; }

    [[nodiscard]] std::size_t doc_count() const { return docnos_.size(); }
    [[nodiscard]] std::size_t vocabulary_size() const { return terms_.size(); }
    [[nodiscard]] std::uint64_t total_tokens() const { return total_tokens_; }
    [[nodiscard]] double avg_doc_length() const
    {
        return docnos_.empty() ? 0.0 : static_cast<double>(total_tokens_) / static_cast<double>(docnos_.size());
    }

    [[nodiscard]] const std::string &docno(DocId doc) const { return docnos_.at(doc); }
    [[nodiscard]] std::optional<DocId> find_docno(const std::string &docno) const;
    [[nodiscard]] std::optional<TermId> term_id(std::string_view token) const;
    [[nodiscard]] const std::string &term(TermId id) const { return terms_.at(id); }
    [[nodiscard]] std::uint32_t doc_freq(TermId id) const { return doc_freq_.at(id); }
    /// Total occurrences of the term across the collection.
    [[nodiscard]] std::uint64_t collection_freq(TermId id) const { return coll_freq_.at(id); }

    [[nodiscard]] std::span<const TermCount> bag(DocId doc) const { return bags_.at(doc); }
    [[nodiscard]] std::uint32_t doc_length(DocId doc) const { return doc_lengths_.at(doc); }
    /// Throws std::logic_error when positions were not kept.
    [[nodiscard]] std::span<const TermId> sequence(DocId doc) const;
    [[nodiscard]] const std::string &raw_text(DocId doc) const;

    /// Maps query tokens to in-vocabulary term counts; OOV tokens dropped.
    [[nodiscard]] std::vector<TermCount> query_terms(std::span<const std::string> tokens) const;

    void save(std::ostream &out) const;
    static ForwardIndex load(std::istream &in);
    void save_file(const std::filesystem::path &path) const;
    static ForwardIndex load_file(const std::filesystem::path &path);

    friend bool operator==(const ForwardIndex &a, const ForwardIndex &b);

   private:
    TermId intern(const std::string &token);
    void rebuild_lookup();

    std::string field_;
    FieldKind kind_ = FieldKind::Parsed;
    bool has_positions_ = false;

    std::vector<std::string> docnos_;
    std::unordered_map<std::string, DocId> docno_lookup_;

    std::vector<std::string> terms_;
    std::unordered_map<std::string, TermId> term_lookup_;
    std::vector<std::uint32_t> doc_freq_;
    std::vector<std::uint64_t> coll_freq_;

    std::vector<std::vector<TermCount>> bags_;
    std::vector<std::uint32_t> doc_lengths_;
    std::vector<std::vector<TermId>> sequences_;
    std::vector<std::string> raw_;
    std::uint64_t total_tokens_ = 0;
};

/// One forward index per field spec. Duplicate DOCNO values are rejected.
std::map<std::string, ForwardIndex> build_forward(std::span<const DocumentEntry> entries,
                                                  std::span<const FieldSpec> specs, bool keep_positions);

/// File name convention for a field's forward index: `<field>.fwd`.
std::filesystem::path forward_file(const std::filesystem::path &dir, const std::string &field);

/// BM25 inverted index built from a parsed field's bags.
InvertedIndex build_bm25_index(const ForwardIndex &field);

}  // namespace hybrid
