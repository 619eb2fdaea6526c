#pragma once

#include "faith/error.hpp"
#include "faith/log.hpp"
#include "faith/random.hpp"

#include <cctype>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace faith {

using EmbeddingVector = std::vector<float>;

class Embedder {
  public:
    virtual ~Embedder() = default;
    /// Raw (not necessarily normalized) vectors, one per input, order preserved.
    virtual std::vector<EmbeddingVector> embed_batch(std::span<const std::string> texts) = 0;
    [[nodiscard]] virtual std::size_t dim() const = 0;
    [[nodiscard]] virtual std::size_t max_length() const { return 8192; }
    [[nodiscard]] virtual std::string identity() const = 0;
};

/// Scale to unit L2 norm; a zero vector is left as is.
inline void normalize_l2(std::span<float> v) {
    double norm2 = 0.0;
    for (float x : v) norm2 += static_cast<double>(x) * x;
    if (norm2 <= 0.0) return;
    const double inv = 1.0 / std::sqrt(norm2);
    for (float& x : v) x = static_cast<float>(x * inv);
}

/// Embed texts through `backend`, truncating over-long inputs and returning
/// unit-norm vectors. `expected_dim` (non-zero) guards against index mismatch.
inline std::vector<EmbeddingVector> embed(Embedder& backend, std::span<const std::string> texts,
                                          std::size_t expected_dim = 0) {
    if (texts.empty()) throw PreconditionError("nothing to embed");
    std::vector<std::string> inputs(texts.begin(), texts.end());
    for (auto& t : inputs) {
        if (t.size() > backend.max_length()) {
            log::warn("truncating embedding input of " + std::to_string(t.size()) + " bytes to " +
                      std::to_string(backend.max_length()));
            t.resize(backend.max_length());
        }
    }
    auto vectors = backend.embed_batch(inputs);
    if (vectors.size() != inputs.size())
        throw MalformedResponseError("embedder returned " + std::to_string(vectors.size()) + " vectors for " +
                                     std::to_string(inputs.size()) + " inputs");
    for (auto& v : vectors) {
        if (expected_dim != 0 && v.size() != expected_dim)
            throw PreconditionError("embedding dimension " + std::to_string(v.size()) + " does not match index dimension " +
                                    std::to_string(expected_dim));
        normalize_l2(v);
    }
    return vectors;
}

/// Deterministic offline embedder: signed feature hashing of lowercase
/// alphanumeric tokens plus their character trigrams. Texts with shared words
/// land near each other, related spellings score above unrelated text, and
/// identical texts always map to identical vectors.
class MockEmbedder : public Embedder {
  public:
    explicit MockEmbedder(std::size_t dim = 64, std::uint64_t seed = 0) : dim_(dim), seed_(seed) {
        if (dim_ == 0) throw PreconditionError("embedding dimension must be positive");
    }

    std::vector<EmbeddingVector> embed_batch(std::span<const std::string> texts) override {
        std::vector<EmbeddingVector> out;
        out.reserve(texts.size());
        for (const auto& t : texts) out.push_back(embed_one(t));
        return out;
    }

    [[nodiscard]] std::size_t dim() const override { return dim_; }
    [[nodiscard]] std::string identity() const override {
        return "mock:" + std::to_string(dim_) + ":" + std::to_string(seed_);
    }

  private:
    void add_feature(EmbeddingVector& v, std::string_view token, float weight) const {
        const auto h = splitmix64(fnv1a64(token, fnv1a64(std::to_string(seed_))));
        const auto slot = static_cast<std::size_t>(h % dim_);
        v[slot] += ((h >> 63) != 0U ? -weight : weight);
    }

    EmbeddingVector embed_one(const std::string& text) const {
        EmbeddingVector v(dim_, 0.0F);
        std::string token;
        bool any = false;
        auto flush = [&] {
            if (token.empty()) return;
            add_feature(v, token, 1.0F);
            const std::string padded = "#" + token + "#";
            for (std::size_t i = 0; i + 3 <= padded.size(); ++i) add_feature(v, padded.substr(i, 3), 0.2F);
            any = true;
            token.clear();
        };
        for (char ch : text) {
            const auto c = static_cast<unsigned char>(ch);
            if (std::isalnum(c) != 0 || c >= 0x80)
                token.push_back(static_cast<char>(std::tolower(c)));
            else
                flush();
        }
        flush();
        // Whole-text feature keeps distinct texts apart even with shared tokens.
        add_feature(v, "\x01" + text, any ? 0.25F : 1.0F);
        return v;
    }

    std::size_t dim_;
    std::uint64_t seed_;
};

}  // namespace faith
