#pragma once

// Inner-product vector index over unit-norm embeddings. Two kinds:
//   flat   - vectors stored verbatim, exact scan
//   ivf_pq - coarse k-means quantizer (L2) with nlist inverted lists; the
//            residual of each vector to its list centroid is product-quantized
//            into pq_m sub-codes of pq_bits each. Queries probe the nprobe
//            nearest lists and score entries by asymmetric distance:
//            <q, centroid> + sum_m <q_m, codebook_m[code_m]>.
//
// Index file layout (little endian):
//   "FAIVF1" | u32 version | u8 kind | u32 dim | u8 metric | u32 nlist |
//   u32 pq_m | u32 pq_bits | u64 count | u32 nprobe |
//   f32 centroids[nlist*dim] | f32 codebooks[pq_m*2^pq_bits*dsub] |
//   lists: nlist x (u64 size | u64 ids[size] | u8 codes[size*pq_m]) |
//   flat:  f32 vectors[count*dim] |
//   id map: count x (u32 len | bytes) | u32 crc32 of everything before it

#include "faith/error.hpp"
#include "faith/kmeans.hpp"
#include "faith/log.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

namespace faith {

enum class IndexKind : std::uint8_t { Flat = 0, IvfPq = 1 };

inline std::string_view index_kind_name(IndexKind k) { return k == IndexKind::Flat ? "flat" : "ivf_pq"; }

inline IndexKind parse_index_kind(std::string_view s) {
    if (s == "flat") return IndexKind::Flat;
    if (s == "ivf_pq") return IndexKind::IvfPq;
    throw PreconditionError("unknown index kind '" + std::string(s) + "'");
}

struct IndexParams {
    IndexKind kind = IndexKind::IvfPq;
    std::size_t nlist = 0;  // 0: ceil(sqrt(n))
    std::size_t nprobe = 8;
    std::size_t pq_m = 0;   // 0: dim / 8 (at least 1)
    unsigned pq_bits = 8;
    std::uint64_t seed = 0;
    int max_iterations = 25;
    double tolerance = 1e-4;
};

struct RetrievalHit {
    std::string pid;
    double score = 0.0;
    std::size_t rank = 0;  // 1-based
};

class VectorIndex {
  public:
    static constexpr std::string_view kMagic = "FAIVF1";
    static constexpr std::uint32_t kVersion = 1;

    struct InvertedList {
        std::vector<std::uint64_t> ids;    // internal ids
        std::vector<std::uint8_t> codes;   // ids.size() * pq_m
    };

    static VectorIndex build(std::span<const std::string> pids, std::span<const std::vector<float>> vectors,
                             IndexParams params = {}) {
        if (pids.empty()) throw PreconditionError("cannot build an index over an empty corpus");
        if (pids.size() != vectors.size())
            throw PreconditionError("passage and vector counts differ (" + std::to_string(pids.size()) + " vs " +
                                    std::to_string(vectors.size()) + ")");
        VectorIndex idx;
        idx.kind_ = params.kind;
        idx.dim_ = vectors.front().size();
        if (idx.dim_ == 0) throw PreconditionError("vectors have dimension 0");
        idx.count_ = pids.size();
        idx.pids_.assign(pids.begin(), pids.end());
        idx.build_id_map();

        std::vector<float> data;
        data.reserve(idx.count_ * idx.dim_);
        for (const auto& v : vectors) {
            if (v.size() != idx.dim_) throw PreconditionError("vectors have inconsistent dimensions");
            data.insert(data.end(), v.begin(), v.end());
        }

        if (params.kind == IndexKind::Flat) {
            idx.flat_ = std::move(data);
            idx.nprobe_ = 0;
            return idx;
        }

        const std::size_t n = idx.count_;
        idx.nlist_ = params.nlist ? params.nlist : static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n))));
        if (idx.nlist_ > n)
            throw PreconditionError("nlist = " + std::to_string(idx.nlist_) + " exceeds corpus size " + std::to_string(n));
        idx.pq_m_ = params.pq_m ? params.pq_m : std::max<std::size_t>(1, idx.dim_ / 8);
        if (idx.dim_ % idx.pq_m_ != 0)
            throw PreconditionError("pq_m = " + std::to_string(idx.pq_m_) + " does not divide dimension " +
                                    std::to_string(idx.dim_));
        if (params.pq_bits == 0 || params.pq_bits > 8) throw PreconditionError("pq_bits must be in [1, 8]");
        idx.pq_bits_ = params.pq_bits;
        idx.nprobe_ = std::clamp<std::size_t>(params.nprobe, 1, idx.nlist_);
        const std::size_t ksub = idx.codebook_size();
        const std::size_t dsub = idx.dim_ / idx.pq_m_;
        if (n < ksub)
            log::warn("ivf_pq: " + std::to_string(n) + " training points for " + std::to_string(ksub) +
                      " codewords per subspace; codebooks will be under-trained");

        const auto coarse = kmeans(data, idx.dim_,
                                   {idx.nlist_, derive_seed(params.seed, "coarse"), params.max_iterations, params.tolerance});
        idx.centroids_ = coarse.centroids;

        std::vector<float> residuals(data.size());
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < idx.dim_; ++j)
                residuals[i * idx.dim_ + j] = data[i * idx.dim_ + j] - idx.centroids_[coarse.assignment[i] * idx.dim_ + j];

        idx.codebooks_.assign(idx.pq_m_ * ksub * dsub, 0.0F);
        std::vector<float> sub(n * dsub);
        for (std::size_t m = 0; m < idx.pq_m_; ++m) {
            for (std::size_t i = 0; i < n; ++i)
                std::copy_n(&residuals[i * idx.dim_ + m * dsub], dsub, &sub[i * dsub]);
            const auto book = kmeans(sub, dsub,
                                     {ksub, derive_seed(params.seed, 1000 + m), params.max_iterations, params.tolerance});
            std::copy(book.centroids.begin(), book.centroids.end(), idx.codebooks_.begin() + static_cast<std::ptrdiff_t>(m * ksub * dsub));
        }

        idx.lists_.assign(idx.nlist_, {});
        for (std::size_t i = 0; i < n; ++i) {
            auto& list = idx.lists_[coarse.assignment[i]];
            list.ids.push_back(i);
            const auto codes = idx.encode_residual(std::span<const float>(residuals).subspan(i * idx.dim_, idx.dim_));
            list.codes.insert(list.codes.end(), codes.begin(), codes.end());
        }
        return idx;
    }

    /// Top-k by inner product; scores descending, ties by pid ascending.
    [[nodiscard]] std::vector<RetrievalHit> search(std::span<const float> query, std::size_t k,
                                                   std::optional<std::size_t> nprobe = std::nullopt) const {
        if (k == 0) throw PreconditionError("k must be positive");
        if (query.size() != dim_)
            throw PreconditionError("query dimension " + std::to_string(query.size()) + " does not match index dimension " +
                                    std::to_string(dim_));
        std::vector<std::pair<double, std::uint64_t>> cand;
        if (kind_ == IndexKind::Flat) {
            cand.reserve(count_);
            for (std::size_t i = 0; i < count_; ++i) cand.emplace_back(dot(query, flat_row(i)), i);
        } else {
            scan_lists(query, std::clamp<std::size_t>(nprobe.value_or(nprobe_), 1, nlist_), cand);
        }

        auto better = [this](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return pids_[a.second] < pids_[b.second];
        };
        const std::size_t take = std::min(k, cand.size());
        if (take < cand.size()) {
            std::nth_element(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(take), cand.end(), better);
            cand.resize(take);
        }
        std::sort(cand.begin(), cand.end(), better);
        std::vector<RetrievalHit> hits;
        hits.reserve(take);
        for (std::size_t r = 0; r < take; ++r) hits.push_back({pids_[cand[r].second], cand[r].first, r + 1});
        return hits;
    }

    void save(const std::string& path) const {
        const auto bytes = serialize();
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw PreconditionError("cannot open '" + path + "' for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw PreconditionError("write to '" + path + "' failed");
    }

    static VectorIndex load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw PreconditionError("cannot open index file '" + path + "'");
        std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        return deserialize(bytes);
    }

    [[nodiscard]] std::string serialize() const {
        Writer w;
        w.raw(kMagic);
        w.u32(kVersion);
        w.u8(static_cast<std::uint8_t>(kind_));
        w.u32(static_cast<std::uint32_t>(dim_));
        w.u8(0);  // metric: inner product
        w.u32(static_cast<std::uint32_t>(nlist_));
        w.u32(static_cast<std::uint32_t>(pq_m_));
        w.u32(pq_bits_);
        w.u64(count_);
        w.u32(static_cast<std::uint32_t>(nprobe_));
        w.floats(centroids_);
        w.floats(codebooks_);
        for (const auto& list : lists_) {
            w.u64(list.ids.size());
            for (auto id : list.ids) w.u64(id);
            w.raw(std::string_view(reinterpret_cast<const char*>(list.codes.data()), list.codes.size()));
        }
        w.floats(flat_);
        for (const auto& pid : pids_) {
            w.u32(static_cast<std::uint32_t>(pid.size()));
            w.raw(pid);
        }
        const auto crc = crc32_of(w.buf);
        w.u32(crc);
        return std::move(w.buf);
    }

    static VectorIndex deserialize(std::string_view bytes) {
        if (bytes.size() < kMagic.size() || bytes.substr(0, kMagic.size()) != kMagic)
            throw IndexFormatError("not an index file (bad magic)");
        Reader r{bytes, kMagic.size()};
        if (const auto v = r.u32(); v != kVersion) throw IndexFormatError("unsupported index version " + std::to_string(v));
        if (bytes.size() < 4 + r.pos) throw IndexFormatError("index file truncated");
        const auto body = bytes.substr(0, bytes.size() - 4);
        Reader tail{bytes, bytes.size() - 4};
        if (tail.u32() != crc32_of(body)) throw IndexFormatError("index checksum mismatch (corrupt or truncated file)");
        r.data = body;

        VectorIndex idx;
        const auto kind = r.u8();
        if (kind > 1) throw IndexFormatError("unknown index kind " + std::to_string(kind));
        idx.kind_ = static_cast<IndexKind>(kind);
        idx.dim_ = r.u32();
        if (r.u8() != 0) throw IndexFormatError("unsupported metric");
        idx.nlist_ = r.u32();
        idx.pq_m_ = r.u32();
        idx.pq_bits_ = r.u32();
        idx.count_ = r.u64();
        idx.nprobe_ = r.u32();
        if (idx.dim_ == 0 || (idx.kind_ == IndexKind::IvfPq && (idx.pq_m_ == 0 || idx.pq_bits_ == 0 || idx.pq_bits_ > 8 ||
                                                               idx.dim_ % idx.pq_m_ != 0 || idx.nlist_ == 0)))
            throw IndexFormatError("inconsistent index header");
        if (idx.kind_ == IndexKind::IvfPq) {
            idx.centroids_ = r.floats(idx.nlist_ * idx.dim_);
            idx.codebooks_ = r.floats(idx.pq_m_ * idx.codebook_size() * (idx.dim_ / idx.pq_m_));
            idx.lists_.resize(idx.nlist_);
            for (auto& list : idx.lists_) {
                const auto size = r.u64();
                if (size > idx.count_) throw IndexFormatError("inverted list larger than corpus");
                list.ids.resize(size);
                for (auto& id : list.ids) id = r.u64();
                const auto codes = r.take(size * idx.pq_m_);
                list.codes.assign(codes.begin(), codes.end());
            }
        } else {
            idx.flat_ = r.floats(idx.count_ * idx.dim_);
        }
        idx.pids_.resize(idx.count_);
        for (auto& pid : idx.pids_) pid = std::string(r.take(r.u32()));
        if (r.pos != r.data.size()) throw IndexFormatError("trailing bytes in index file");
        idx.build_id_map();
        return idx;
    }

    [[nodiscard]] IndexKind kind() const noexcept { return kind_; }
    [[nodiscard]] std::size_t dim() const noexcept { return dim_; }
    [[nodiscard]] std::size_t size() const noexcept { return count_; }
    [[nodiscard]] std::size_t nlist() const noexcept { return nlist_; }
    [[nodiscard]] std::size_t nprobe() const noexcept { return nprobe_; }
    [[nodiscard]] std::size_t pq_m() const noexcept { return pq_m_; }
    [[nodiscard]] unsigned pq_bits() const noexcept { return pq_bits_; }
    [[nodiscard]] std::size_t codebook_size() const noexcept { return std::size_t{1} << pq_bits_; }
    [[nodiscard]] std::span<const float> centroids() const noexcept { return centroids_; }
    [[nodiscard]] std::span<const float> codebooks() const noexcept { return codebooks_; }
    [[nodiscard]] std::span<const InvertedList> lists() const noexcept { return lists_; }
    [[nodiscard]] std::span<const std::string> pids() const noexcept { return pids_; }

    void set_nprobe(std::size_t nprobe) {
        if (kind_ == IndexKind::IvfPq) nprobe_ = std::clamp<std::size_t>(nprobe, 1, nlist_);
    }

    [[nodiscard]] std::optional<std::uint64_t> internal_id(std::string_view pid) const {
        auto it = id_of_.find(std::string(pid));
        if (it == id_of_.end()) return std::nullopt;
        return it->second;
    }

  private:
    static double dot(std::span<const float> a, std::span<const float> b) {
        double s = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
        return s;
    }

    [[nodiscard]] std::span<const float> flat_row(std::size_t i) const {
        return std::span<const float>(flat_).subspan(i * dim_, dim_);
    }

    void build_id_map() {
        id_of_.clear();
        for (std::size_t i = 0; i < pids_.size(); ++i)
            if (!id_of_.emplace(pids_[i], i).second) throw PreconditionError("duplicate passage id '" + pids_[i] + "'");
    }

    [[nodiscard]] std::vector<std::uint8_t> encode_residual(std::span<const float> residual) const {
        const std::size_t ksub = codebook_size();
        const std::size_t dsub = dim_ / pq_m_;
        std::vector<std::uint8_t> codes(pq_m_);
        for (std::size_t m = 0; m < pq_m_; ++m) {
            const auto book = std::span<const float>(codebooks_).subspan(m * ksub * dsub, ksub * dsub);
            codes[m] = static_cast<std::uint8_t>(nearest_centroid(residual.subspan(m * dsub, dsub), book, dsub));
        }
        return codes;
    }

    void scan_lists(std::span<const float> query, std::size_t nprobe,
                    std::vector<std::pair<double, std::uint64_t>>& cand) const {
        std::vector<std::pair<double, std::size_t>> coarse(nlist_);
        const std::span<const float> cents(centroids_);
        for (std::size_t l = 0; l < nlist_; ++l) coarse[l] = {squared_l2(query, cents.subspan(l * dim_, dim_)), l};
        std::partial_sort(coarse.begin(), coarse.begin() + static_cast<std::ptrdiff_t>(nprobe), coarse.end());

        const std::size_t ksub = codebook_size();
        const std::size_t dsub = dim_ / pq_m_;
        std::vector<double> table(pq_m_ * ksub);
        for (std::size_t m = 0; m < pq_m_; ++m)
            for (std::size_t j = 0; j < ksub; ++j)
                table[m * ksub + j] = dot(query.subspan(m * dsub, dsub),
                                          std::span<const float>(codebooks_).subspan((m * ksub + j) * dsub, dsub));

        for (std::size_t p = 0; p < nprobe; ++p) {
            const auto l = coarse[p].second;
            const auto& list = lists_[l];
            const double base = dot(query, cents.subspan(l * dim_, dim_));
            for (std::size_t e = 0; e < list.ids.size(); ++e) {
                double s = base;
                for (std::size_t m = 0; m < pq_m_; ++m) s += table[m * ksub + list.codes[e * pq_m_ + m]];
                cand.emplace_back(s, list.ids[e]);
            }
        }
    }

    static std::uint32_t crc32_of(std::string_view bytes) {
        uLong crc = ::crc32(0L, Z_NULL, 0);
        // zlib takes uInt lengths; feed in chunks for very large files.
        constexpr std::size_t chunk = 1U << 30;
        for (std::size_t off = 0; off < bytes.size(); off += chunk) {
            const auto len = static_cast<uInt>(std::min(chunk, bytes.size() - off));
            crc = ::crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + off), len);
        }
        return static_cast<std::uint32_t>(crc);
    }

    struct Writer {
        std::string buf;
        void raw(std::string_view s) { buf.append(s); }
        void u8(std::uint8_t v) { buf.push_back(static_cast<char>(v)); }
        void u32(std::uint32_t v) {
            for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
        }
        void u64(std::uint64_t v) {
            for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
        }
        void floats(std::span<const float> v) {
            for (float f : v) u32(std::bit_cast<std::uint32_t>(f));
        }
    };

    struct Reader {
        std::string_view data;
        std::size_t pos = 0;
        std::string_view take(std::size_t n) {
            if (n > data.size() - pos) throw IndexFormatError("index file truncated");
            auto s = data.substr(pos, n);
            pos += n;
            return s;
        }
        std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
        std::uint32_t u32() {
            const auto s = take(4);
            std::uint32_t v = 0;
            for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<std::uint8_t>(s[static_cast<std::size_t>(i)]);
            return v;
        }
        std::uint64_t u64() {
            const auto s = take(8);
            std::uint64_t v = 0;
            for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<std::uint8_t>(s[static_cast<std::size_t>(i)]);
            return v;
        }
        std::vector<float> floats(std::size_t n) {
            if (n > (data.size() - pos) / 4) throw IndexFormatError("index file truncated");
            std::vector<float> v(n);
            for (auto& f : v) f = std::bit_cast<float>(u32());
            return v;
        }
    };

    IndexKind kind_ = IndexKind::Flat;
    std::size_t dim_ = 0;
    std::size_t count_ = 0;
    std::size_t nlist_ = 0;
    std::size_t nprobe_ = 0;
    std::size_t pq_m_ = 0;
    unsigned pq_bits_ = 0;
    std::vector<float> centroids_;
    std::vector<float> codebooks_;
    std::vector<InvertedList> lists_;
    std::vector<float> flat_;
    std::vector<std::string> pids_;
    std::unordered_map<std::string, std::uint64_t> id_of_;
};

}  // namespace faith
