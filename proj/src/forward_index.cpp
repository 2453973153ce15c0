#include "hybrid/forward_index.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <istream>
#include <ostream>
#include <unordered_set>

#include <json.hpp>

#include "hybrid/binary_io.hpp"

namespace hybrid {

namespace {

constexpr std::uint32_t kForwardVersion = 1;
constexpr std::uint64_t kMaxCount = 1ULL << 32;

bool is_space(char c)
{
    return std::isspace(static_cast<unsigned char>(c)) != 0;
}

}  // namespace

std::string_view DocumentEntry::field(const std::string &name) const
{
    auto it = fields.find(name);
    if (it == fields.end()) {
        return {};
    }
    return it->second;
}

DocumentEntry entry_from_json(const nlohmann::json &obj)
{
    if (!obj.is_object()) {
        throw std::invalid_argument("expected a JSON object");
    }
    DocumentEntry entry;
    for (const auto &[key, value] : obj.items()) {
        std::string text = value.is_string() ? value.get<std::string>() : value.dump();
        if (key == "DOCNO") {
            entry.docno = std::move(text);
        } else {
            entry.fields.emplace(key, std::move(text));
        }
    }
    if (!obj.contains("DOCNO")) {
        throw std::invalid_argument("missing mandatory field \"DOCNO\"");
    }
    if (!obj.contains("text")) {
        throw std::invalid_argument("missing mandatory field \"text\"");
    }
    return entry;
}

std::vector<DocumentEntry> parse_jsonl(std::istream &in)
{
    std::vector<DocumentEntry> entries;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (std::all_of(line.begin(), line.end(), is_space)) {
            continue;
        }
        nlohmann::json obj;
        try {
            obj = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error &e) {
            throw ParseError(line_no, std::string("malformed JSON: ") + e.what());
        }
        try {
            entries.push_back(entry_from_json(obj));
        } catch (const std::invalid_argument &e) {
            throw ParseError(line_no, e.what());
        }
    }
    return entries;
}

std::vector<DocumentEntry> read_jsonl_file(const std::filesystem::path &path)
{
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open " + path.string());
    }
    try {
        return parse_jsonl(in);
    } catch (const ParseError &e) {
        throw std::runtime_error(path.string() + ": " + e.what());
    }
}

std::string to_json_line(const DocumentEntry &entry)
{
    nlohmann::ordered_json obj;
    obj["DOCNO"] = entry.docno;
    for (const auto &[k, v] : entry.fields) {
        obj[k] = v;
    }
    return obj.dump();
}

std::vector<std::string> tokenize_parsed(std::string_view text)
{
    std::vector<std::string> tokens;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && is_space(text[i])) {
            ++i;
        }
        std::size_t start = i;
        while (i < text.size() && !is_space(text[i])) {
            ++i;
        }
        if (i > start) {
            tokens.emplace_back(text.substr(start, i - start));
        }
    }
    return tokens;
}

FieldSpec FieldSpec::parse(std::string_view spec)
{
    auto colon = spec.find(':');
    FieldSpec out;
    out.name = std::string(spec.substr(0, colon));
    if (out.name.empty()) {
        throw std::invalid_argument("empty field name in spec '" + std::string(spec) + "'");
    }
    if (colon != std::string_view::npos) {
        auto kind = spec.substr(colon + 1);
        if (kind == "parsed") {
            out.kind = FieldKind::Parsed;
        } else if (kind == "raw") {
            out.kind = FieldKind::Raw;
        } else {
            throw std::invalid_argument("unknown field kind '" + std::string(kind) + "' (expected parsed or raw)");
        }
    }
    return out;
}

TermId ForwardIndex::intern(const std::string &token)
{
    auto [it, inserted] = term_lookup_.try_emplace(token, static_cast<TermId>(terms_.size()));
    if (inserted) {
        terms_.push_back(token);
        doc_freq_.push_back(0);
        coll_freq_.push_back(0);
    }
    return it->second;
}

DocId ForwardIndex::add_document(std::string docno, std::string_view content)
{
    auto id = static_cast<DocId>(docnos_.size());
    if (!docno_lookup_.try_emplace(docno, id).second) {
        throw std::invalid_argument("duplicate DOCNO '" + docno + "'");
    }
    docnos_.push_back(std::move(docno));

    if (kind_ == FieldKind::Raw) {
        raw_.emplace_back(content);
        bags_.emplace_back();
        doc_lengths_.push_back(0);
        return id;
    }

    std::vector<TermId> seq;
    for (const auto &tok : tokenize_parsed(content)) {
        seq.push_back(intern(tok));
    }
    std::vector<TermCount> bag;
    bag.reserve(seq.size());
    for (TermId t : seq) {
        bag.push_back({t, 1});
    }
    bag = normalize_query(std::move(bag));
    for (const auto &tc : bag) {
        doc_freq_[tc.term] += 1;
        coll_freq_[tc.term] += tc.count;
    }
    total_tokens_ += seq.size();
    doc_lengths_.push_back(static_cast<std::uint32_t>(seq.size()));
    bags_.push_back(std::move(bag));
    if (has_positions_) {
        sequences_.push_back(std::move(seq));
    }
    return id;
}

std::optional<DocId> ForwardIndex::find_docno(const std::string &docno) const
{
    auto it = docno_lookup_.find(docno);
    if (it == docno_lookup_.end()) {
        return std::nullopt;
    }
    return it->second;
}

std::optional<TermId> ForwardIndex::term_id(std::string_view token) const
{
    auto it = term_lookup_.find(std::string(token));
    if (it == term_lookup_.end()) {
        return std::nullopt;
    }
    return it->second;
}

std::span<const TermId> ForwardIndex::sequence(DocId doc) const
{
    if (!has_positions_) {
        throw std::logic_error("field '" + field_ + "' was indexed without positions");
    }
    return sequences_.at(doc);
}

const std::string &ForwardIndex::raw_text(DocId doc) const
{
    if (kind_ != FieldKind::Raw) {
        throw std::logic_error("field '" + field_ + "' is not a raw field");
    }
    return raw_.at(doc);
}

std::vector<TermCount> ForwardIndex::query_terms(std::span<const std::string> tokens) const
{
    std::vector<TermCount> out;
    for (const auto &tok : tokens) {
        if (auto id = term_id(tok)) {
            out.push_back({*id, 1});
        }
    }
    return normalize_query(std::move(out));
}

void ForwardIndex::rebuild_lookup()
{
    docno_lookup_.clear();
    for (std::size_t i = 0; i < docnos_.size(); ++i) {
        docno_lookup_.emplace(docnos_[i], static_cast<DocId>(i));
    }
    term_lookup_.clear();
    for (std::size_t i = 0; i < terms_.size(); ++i) {
        term_lookup_.emplace(terms_[i], static_cast<TermId>(i));
    }
}

void ForwardIndex::save(std::ostream &out) const
{
    BinaryWriter w(out);
    w.magic("FWDX");
    w.u32(kForwardVersion);
    w.str(field_);
    w.u8(static_cast<std::uint8_t>(kind_));
    w.u8(has_positions_ ? 1 : 0);
    w.u64(docnos_.size());
    for (const auto &d : docnos_) {
        w.str(d);
    }
    w.u64(terms_.size());
    for (std::size_t i = 0; i < terms_.size(); ++i) {
        w.str(terms_[i]);
        w.u32(doc_freq_[i]);
        w.u64(coll_freq_[i]);
    }
    for (std::size_t d = 0; d < docnos_.size(); ++d) {
        if (kind_ == FieldKind::Raw) {
            w.str(raw_[d]);
            continue;
        }
        w.u32(doc_lengths_[d]);
        w.u32(static_cast<std::uint32_t>(bags_[d].size()));
        for (const auto &tc : bags_[d]) {
            w.u32(tc.term);
            w.u32(tc.count);
        }
        if (has_positions_) {
            w.u32(static_cast<std::uint32_t>(sequences_[d].size()));
            for (TermId t : sequences_[d]) {
                w.u32(t);
            }
        }
    }
    w.check();
}

ForwardIndex ForwardIndex::load(std::istream &in)
{
    BinaryReader r(in);
    r.expect_magic("FWDX", "forward index");
    r.expect_version(kForwardVersion, "forward index");
    ForwardIndex f;
    f.field_ = r.str();
    auto kind = r.u8();
    if (kind != static_cast<std::uint8_t>(FieldKind::Parsed) && kind != static_cast<std::uint8_t>(FieldKind::Raw)) {
        throw FormatError("forward index: unknown field kind");
    }
    f.kind_ = static_cast<FieldKind>(kind);
    f.has_positions_ = r.u8() != 0;
    auto n = r.count(kMaxCount, "document");
    f.docnos_.resize(n);
    for (auto &d : f.docnos_) {
        d = r.str();
    }
    auto vocab = r.count(kMaxCount, "term");
    f.terms_.resize(vocab);
    f.doc_freq_.resize(vocab);
    f.coll_freq_.resize(vocab);
    for (std::size_t i = 0; i < vocab; ++i) {
        f.terms_[i] = r.str();
        f.doc_freq_[i] = r.u32();
        f.coll_freq_[i] = r.u64();
    }
    for (std::size_t d = 0; d < n; ++d) {
        if (f.kind_ == FieldKind::Raw) {
            f.raw_.push_back(r.str());
            f.bags_.emplace_back();
            f.doc_lengths_.push_back(0);
            continue;
        }
        f.doc_lengths_.push_back(r.u32());
        std::vector<TermCount> bag(r.u32());
        for (auto &tc : bag) {
            tc.term = r.u32();
            tc.count = r.u32();
            if (tc.term >= vocab) {
                throw FormatError("forward index: term id out of range");
            }
        }
        f.total_tokens_ += f.doc_lengths_.back();
        f.bags_.push_back(std::move(bag));
        if (f.has_positions_) {
            auto len = r.u32();
            if (len != f.doc_lengths_.back()) {
                throw FormatError("forward index: sequence length disagrees with document length");
            }
            std::vector<TermId> seq(len);
            for (auto &t : seq) {
                t = r.u32();
            }
            f.sequences_.push_back(std::move(seq));
        }
    }
    f.rebuild_lookup();
    if (f.docno_lookup_.size() != f.docnos_.size()) {
        throw FormatError("forward index: duplicate DOCNO entries");
    }
    return f;
}

void ForwardIndex::save_file(const std::filesystem::path &path) const
{
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    save(out);
}

ForwardIndex ForwardIndex::load_file(const std::filesystem::path &path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open " + path.string());
    }
    try {
        return load(in);
    } catch (const FormatError &e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

bool operator==(const ForwardIndex &a, const ForwardIndex &b)
{
    return a.field_ == b.field_ && a.kind_ == b.kind_ && a.has_positions_ == b.has_positions_ &&
           a.docnos_ == b.docnos_ && a.terms_ == b.terms_ && a.doc_freq_ == b.doc_freq_ &&
           a.coll_freq_ == b.coll_freq_ && a.bags_ == b.bags_ && a.doc_lengths_ == b.doc_lengths_ &&
           a.sequences_ == b.sequences_ && a.raw_ == b.raw_ && a.total_tokens_ == b.total_tokens_;
}

std::map<std::string, ForwardIndex> build_forward(std::span<const DocumentEntry> entries,
                                                  std::span<const FieldSpec> specs, bool keep_positions)
{
    std::unordered_set<std::string> seen;
    for (const auto &e : entries) {
        if (!seen.insert(e.docno).second) {
            throw std::invalid_argument("duplicate DOCNO '" + e.docno + "'");
        }
    }
    std::map<std::string, ForwardIndex> out;
    for (const auto &spec : specs) {
        ForwardIndex f(spec.name, spec.kind, keep_positions && spec.kind == FieldKind::Parsed);
        for (const auto &e : entries) {
            f.add_document(e.docno, e.field(spec.name));
        }
        if (!out.emplace(spec.name, std::move(f)).second) {
            throw std::invalid_argument("field '" + spec.name + "' listed twice");
        }
    }
    return out;
}

std::filesystem::path forward_file(const std::filesystem::path &dir, const std::string &field)
{
    return dir / (field + ".fwd");
}

InvertedIndex build_bm25_index(const ForwardIndex &field)
{
    if (field.kind() != FieldKind::Parsed) {
        throw std::invalid_argument("BM25 index requires a parsed field");
    }
    std::vector<std::vector<TermCount>> bags;
    bags.reserve(field.doc_count());
    for (DocId d = 0; d < field.doc_count(); ++d) {
        auto b = field.bag(d);
        bags.emplace_back(b.begin(), b.end());
    }
    return InvertedIndex::build_from_counts(bags);
}

}  // namespace hybrid
