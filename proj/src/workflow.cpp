#include "hybrid/workflow.hpp"

#include <mutex>
#include <thread>

namespace hybrid {

std::map<std::string, ForwardIndex> ingest_corpus(const std::filesystem::path &jsonl,
                                                  std::span<const FieldSpec> specs, bool keep_positions,
                                                  const std::filesystem::path &out_dir)
{
    auto entries = read_jsonl_file(jsonl);
    auto indices = build_forward(entries, specs, keep_positions);
    std::filesystem::create_directories(out_dir);
    for (const auto &[name, index] : indices) {
        index.save_file(forward_file(out_dir, name));
    }
    return indices;
}

std::vector<std::string> document_tokens(const ForwardIndex &field, DocId doc)
{
    std::vector<std::string> out;
    if (field.has_positions()) {
        for (TermId t : field.sequence(doc)) {
            out.push_back(field.term(t));
        }
        return out;
    }
    for (const auto &tc : field.bag(doc)) {
        out.insert(out.end(), tc.count, field.term(tc.term));
    }
    return out;
}

std::vector<BitextPair> relevance_bitext(const ForwardIndex &field, std::span<const QueryEntry> queries,
                                         const Qrels &qrels, const std::string &query_field,
                                         std::size_t chunk_len)
{
    std::vector<BitextPair> out;
    for (const auto &q : queries) {
        auto target = tokenize_parsed(q.field(query_field));
        if (target.empty()) {
            continue;
        }
        for (const auto &docno : qrels.relevant(q.docno)) {
            auto id = field.find_docno(docno);
            if (!id) {
                continue;
            }
            auto tokens = document_tokens(field, *id);
            if (tokens.empty()) {
                continue;
            }
            if (chunk_len == 0) {
                out.push_back({std::move(tokens), target});
                continue;
            }
            for (auto &chunk : chunk_document(tokens, chunk_len)) {
                out.push_back({std::move(chunk), target});
            }
        }
    }
    return out;
}

TrainingData collect_training_data(const CandidateProvider &provider, const CompositeExtractor &extractors,
                                   const ForwardIndex &docnos, std::span<const QueryEntry> queries,
                                   const Qrels &qrels, std::size_t cand_qty, unsigned threads)
{
    TrainingData data;
    data.columns = extractors.columns();
    data.features.resize(queries.size());
    auto work = [&](std::size_t i) {
        std::vector<DocId> ids;
        for (const auto &c : provider.candidates(queries[i], cand_qty)) {
            ids.push_back(c.doc);
        }
        data.features[i] = extractors.extract(queries[i], ids, docnos);
    };
    threads = std::max(1U, std::min<unsigned>(threads, static_cast<unsigned>(queries.size())));
    if (threads <= 1) {
        for (std::size_t i = 0; i < queries.size(); ++i) {
            work(i);
        }
    } else {
        std::vector<std::thread> pool;
        std::exception_ptr failure;
        std::mutex mu;
        for (unsigned t = 0; t < threads; ++t) {
            pool.emplace_back([&, t] {
                try {
                    for (std::size_t i = t; i < queries.size(); i += threads) {
                        work(i);
                    }
                } catch (...) {
                    std::lock_guard lock(mu);
                    if (!failure) {
                        failure = std::current_exception();
                    }
                }
            });
        }
        for (auto &th : pool) {
            th.join();
        }
        if (failure) {
            std::rethrow_exception(failure);
        }
    }
    for (const auto &m : data.features) {
        data.groups.push_back(make_group(m, qrels));
    }
    return data;
}

}  // namespace hybrid
