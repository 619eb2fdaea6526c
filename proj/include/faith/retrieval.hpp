#pragma once

#include "faith/embedding.hpp"
#include "faith/error.hpp"
#include "faith/log.hpp"
#include "faith/vector_index.hpp"

#include <json.hpp>

#include <fstream>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace faith {

struct Passage {
    std::string pid;
    std::optional<std::string> title;
    std::string text;
};

/// Corpus JSON Lines: {"pid": .., "title": .., "text": ..} per line. Numeric
/// pids are accepted and stringified.
inline std::vector<Passage> load_corpus(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw PreconditionError("cannot open corpus '" + path + "'");
    std::vector<Passage> out;
    std::unordered_map<std::string, std::size_t> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        Passage p;
        try {
            const auto j = nlohmann::json::parse(line);
            const auto& pid = j.at("pid");
            p.pid = pid.is_string() ? pid.get<std::string>() : pid.dump();
            if (j.contains("title") && !j.at("title").is_null()) p.title = j.at("title").get<std::string>();
            p.text = j.at("text").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            throw InputFormatError(line_no, e.what());
        }
        if (p.text.empty()) throw InputFormatError(line_no, "passage text is empty");
        if (!seen.emplace(p.pid, line_no).second) throw InputFormatError(line_no, "duplicate pid '" + p.pid + "'");
        out.push_back(std::move(p));
    }
    return out;
}

/// Text handed to the embedder and shown in prompts: "title: text" when a title exists.
inline std::string passage_content(const Passage& p) {
    return p.title && !p.title->empty() ? *p.title + ": " + p.text : p.text;
}

inline VectorIndex build_index(std::span<const Passage> passages, std::span<const EmbeddingVector> vectors,
                               const IndexParams& params) {
    std::vector<std::string> pids;
    pids.reserve(passages.size());
    for (const auto& p : passages) pids.push_back(p.pid);
    return VectorIndex::build(pids, vectors, params);
}

/// Embeds every passage in batches and builds the index.
inline VectorIndex build_index(std::span<const Passage> passages, Embedder& embedder, const IndexParams& params,
                               std::size_t batch = 64) {
    if (passages.empty()) throw PreconditionError("cannot build an index over an empty corpus");
    std::vector<EmbeddingVector> vectors;
    vectors.reserve(passages.size());
    for (std::size_t i = 0; i < passages.size(); i += batch) {
        std::vector<std::string> texts;
        for (std::size_t j = i; j < std::min(passages.size(), i + batch); ++j) texts.push_back(passage_content(passages[j]));
        auto part = embed(embedder, texts, embedder.dim());
        std::move(part.begin(), part.end(), std::back_inserter(vectors));
    }
    return build_index(passages, vectors, params);
}

struct RetrievedPassage {
    std::string pid;
    std::string text;
    double score = 0.0;
};

/// Index plus corpus text plus query embedder.
class Retriever {
  public:
    Retriever(const VectorIndex& index, std::span<const Passage> corpus, Embedder& embedder)
        : index_(index), embedder_(embedder) {
        for (const auto& p : corpus) text_.emplace(p.pid, passage_content(p));
        if (embedder_.dim() != index_.dim())
            throw PreconditionError("embedder dimension " + std::to_string(embedder_.dim()) +
                                    " does not match index dimension " + std::to_string(index_.dim()));
    }

    /// Top-k passages for each query, in query order.
    std::vector<std::vector<RetrievedPassage>> retrieve(std::span<const std::string> queries, std::size_t k) const {
        const auto vectors = embed(embedder_, queries, index_.dim());
        std::vector<std::vector<RetrievedPassage>> out;
        out.reserve(queries.size());
        for (const auto& q : vectors) {
            std::vector<RetrievedPassage> hits;
            for (auto& h : index_.search(q, k)) {
                auto it = text_.find(h.pid);
                if (it == text_.end()) throw PreconditionError("index references pid '" + h.pid + "' missing from corpus");
                hits.push_back({std::move(h.pid), it->second, h.score});
            }
            out.push_back(std::move(hits));
        }
        return out;
    }

    [[nodiscard]] const VectorIndex& index() const noexcept { return index_; }

  private:
    const VectorIndex& index_;
    Embedder& embedder_;
    std::unordered_map<std::string, std::string> text_;
};

}  // namespace faith
