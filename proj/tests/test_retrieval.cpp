#include "faith/retrieval.hpp"

#include "vectors.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <unistd.h>

using namespace faith;

using namespace vectors;

namespace {

void expect_well_ordered(const std::vector<RetrievalHit>& hits) {
    for (std::size_t r = 0; r < hits.size(); ++r) {
        EXPECT_EQ(hits[r].rank, r + 1);
        if (r > 0) {
            EXPECT_LE(hits[r].score, hits[r - 1].score);
            if (hits[r].score == hits[r - 1].score) {
                EXPECT_LT(hits[r - 1].pid, hits[r].pid);
            }
        }
    }
}

IndexParams ivf_params(std::size_t nlist, std::size_t pq_m, unsigned bits = 8) {
    IndexParams p;
    p.kind = IndexKind::IvfPq;
    p.nlist = nlist;
    p.pq_m = pq_m;
    p.pq_bits = bits;
    p.seed = 17;
    return p;
}

IndexParams flat_params() {
    IndexParams p;
    p.kind = IndexKind::Flat;
    return p;
}

std::filesystem::path temp_file(const std::string& name) {
    return std::filesystem::temp_directory_path() / ("faith_test_" + std::to_string(::getpid()) + "_" + name);
}

}  // namespace

TEST(MockEmbedder, DeterministicUnitVectors) {
    MockEmbedder e(32, 5);
    const std::vector<std::string> texts{"abc", "abc", "something else"};
    const auto a = embed(e, texts, 32);
    const auto b = embed(e, texts, 32);
    ASSERT_EQ(a.size(), 3U);
    EXPECT_EQ(a, b);
    EXPECT_EQ(a[0], a[1]);
    EXPECT_NE(a[0], a[2]);
    for (const auto& v : a) {
        double n = 0;
        for (float x : v) n += static_cast<double>(x) * x;
        EXPECT_NEAR(std::sqrt(n), 1.0, 1e-6);
    }
    EXPECT_NE(embed(e, std::vector<std::string>{"abc"}, 32)[0],
              embed(*std::make_unique<MockEmbedder>(32, 6), std::vector<std::string>{"abc"}, 32)[0]);
}

TEST(MockEmbedder, DimensionMismatchAndEmptyInput) {
    MockEmbedder e(16, 0);
    EXPECT_THROW(embed(e, std::vector<std::string>{"x"}, 32), PreconditionError);
    EXPECT_THROW(embed(e, std::vector<std::string>{}, 16), PreconditionError);
}

TEST(FlatIndex, SelfRetrievalWithUnitScore) {
    const auto data = gaussian_vectors(100, 16, 1);
    const auto pids = pid_list(100);
    const auto idx = VectorIndex::build(pids, data, flat_params());
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto hits = idx.search(data[i], 1);
        ASSERT_EQ(hits.size(), 1U);
        EXPECT_EQ(hits[0].pid, pids[i]);
        EXPECT_NEAR(hits[0].score, 1.0, 1e-6);
    }
}

TEST(FlatIndex, MatchesBruteForceOracle) {
    const auto data = gaussian_vectors(1000, 24, 2);
    const auto pids = pid_list(1000);
    const auto idx = VectorIndex::build(pids, data, flat_params());
    for (const auto& q : gaussian_vectors(25, 24, 3)) {
        const auto hits = idx.search(q, 10);
        const auto truth = brute_force(data, pids, q, 10);
        ASSERT_EQ(hits.size(), truth.size());
        for (std::size_t r = 0; r < hits.size(); ++r) {
            EXPECT_EQ(hits[r].pid, truth[r].first);
            EXPECT_NEAR(hits[r].score, truth[r].second, 1e-9);
        }
        expect_well_ordered(hits);
    }
}

TEST(FlatIndex, KLargerThanCorpusAndTies) {
    const std::vector<std::vector<float>> data{{1, 0}, {0, 1}, {1, 0}, {0, -1}};
    const std::vector<std::string> pids{"d", "b", "a", "c"};
    const auto idx = VectorIndex::build(pids, data, flat_params());
    const auto hits = idx.search(std::vector<float>{1, 0}, 10);
    ASSERT_EQ(hits.size(), 4U);
    EXPECT_EQ(hits[0].pid, "a");
    EXPECT_EQ(hits[1].pid, "d");
    EXPECT_EQ(hits[2].pid, "b");
    EXPECT_EQ(hits[3].pid, "c");
    expect_well_ordered(hits);
    EXPECT_THROW(idx.search(std::vector<float>{1, 0}, 0), PreconditionError);
    EXPECT_THROW(idx.search(std::vector<float>{1, 0, 0}, 1), PreconditionError);
}

TEST(IvfPqIndex, EveryPidInExactlyOneList) {
    const auto data = gaussian_vectors(100, 8, 4);
    const auto pids = pid_list(100);
    const auto idx = VectorIndex::build(pids, data, ivf_params(4, 2));
    ASSERT_EQ(idx.lists().size(), 4U);
    std::multiset<std::uint64_t> seen;
    std::size_t total = 0;
    for (const auto& l : idx.lists()) {
        EXPECT_EQ(l.codes.size(), l.ids.size() * 2);
        seen.insert(l.ids.begin(), l.ids.end());
        total += l.ids.size();
    }
    EXPECT_EQ(total, 100U);
    for (std::uint64_t i = 0; i < 100; ++i) EXPECT_EQ(seen.count(i), 1U);
    EXPECT_EQ(idx.codebooks().size(), 2U * 256U * 4U);
    EXPECT_EQ(idx.centroids().size(), 4U * 8U);
}

TEST(IvfPqIndex, BuildPreconditions) {
    const auto data = gaussian_vectors(100, 8, 5);
    const auto pids = pid_list(100);
    EXPECT_THROW(VectorIndex::build(pids, data, ivf_params(200, 2)), PreconditionError);
    EXPECT_THROW(VectorIndex::build(pids, data, ivf_params(4, 3)), PreconditionError);
    EXPECT_THROW(VectorIndex::build(pids, data, ivf_params(4, 2, 9)), PreconditionError);
    EXPECT_THROW(VectorIndex::build(std::vector<std::string>{}, std::vector<std::vector<float>>{}, ivf_params(1, 1)),
                 PreconditionError);
    EXPECT_THROW(VectorIndex::build(std::vector<std::string>{"only"}, data, flat_params()), PreconditionError);
}

TEST(IvfPqIndex, DefaultParameters) {
    const auto data = gaussian_vectors(200, 16, 6);
    IndexParams p;
    p.seed = 3;
    const auto idx = VectorIndex::build(pid_list(200), data, p);
    EXPECT_EQ(idx.nlist(), 15U);
    EXPECT_EQ(idx.pq_m(), 2U);
    EXPECT_EQ(idx.pq_bits(), 8U);
    EXPECT_EQ(idx.nprobe(), 8U);
}

TEST(IvfPqIndex, RecallAtFullProbeAndMonotoneInNprobe) {
    const std::size_t d = 32;
    const auto data = clustered_vectors(1000, d, 40, 0.15F, 7);
    const auto pids = pid_list(1000);
    // Two dimensions per subquantizer; coarser splits lose too much to quantization at 1000 points.
    const auto idx = VectorIndex::build(pids, data, ivf_params(32, d / 2));
    const auto queries = clustered_vectors(50, d, 40, 0.15F, 8);
    double prev = 0;
    for (std::size_t nprobe : {1U, 2U, 4U, 8U, 16U, 32U}) {
        const double r = recall_at(idx, data, pids, queries, 10, nprobe);
        EXPECT_GE(r + 1e-12, prev) << "nprobe " << nprobe;
        prev = r;
    }
    EXPECT_GE(prev, 0.90);
    for (const auto& q : queries) expect_well_ordered(idx.search(q, 10, 32));
}

TEST(IndexFile, FlatRoundTripSearchEquivalent) {
    const auto data = gaussian_vectors(10, 8, 9);
    const auto pids = pid_list(10);
    const auto idx = VectorIndex::build(pids, data, flat_params());
    const auto path = temp_file("flat.idx");
    idx.save(path.string());
    const auto back = VectorIndex::load(path.string());
    std::filesystem::remove(path);
    for (const auto& q : gaussian_vectors(5, 8, 10)) {
        const auto a = idx.search(q, 4);
        const auto b = back.search(q, 4);
        ASSERT_EQ(a.size(), b.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            EXPECT_EQ(a[i].pid, b[i].pid);
            EXPECT_EQ(a[i].score, b[i].score);
        }
    }
}

TEST(IndexFile, IvfPqRoundTripIsBitExact) {
    const auto data = gaussian_vectors(300, 16, 11);
    const auto idx = VectorIndex::build(pid_list(300), data, ivf_params(8, 2, 6));
    const auto back = VectorIndex::deserialize(idx.serialize());
    EXPECT_EQ(back.serialize(), idx.serialize());
    ASSERT_EQ(back.lists().size(), idx.lists().size());
    for (std::size_t l = 0; l < idx.lists().size(); ++l) {
        EXPECT_EQ(back.lists()[l].ids, idx.lists()[l].ids);
        EXPECT_EQ(back.lists()[l].codes, idx.lists()[l].codes);
    }
    EXPECT_TRUE(std::equal(idx.centroids().begin(), idx.centroids().end(), back.centroids().begin(),
                           back.centroids().end(), [](float a, float b) { return std::memcmp(&a, &b, 4) == 0; }));
    EXPECT_EQ(back.nprobe(), idx.nprobe());
    for (const auto& q : gaussian_vectors(5, 16, 12)) {
        const auto a = idx.search(q, 5);
        const auto b = back.search(q, 5);
        for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].pid, b[i].pid);
    }
}

TEST(IndexFile, CorruptionIsDetected) {
    const auto idx = VectorIndex::build(pid_list(10), gaussian_vectors(10, 8, 13), flat_params());
    const auto bytes = idx.serialize();

    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    EXPECT_THROW(VectorIndex::deserialize(bad_magic), IndexFormatError);

    EXPECT_THROW(VectorIndex::deserialize(std::string_view(bytes).substr(0, bytes.size() / 2)), IndexFormatError);
    EXPECT_THROW(VectorIndex::deserialize(std::string_view(bytes).substr(0, 4)), IndexFormatError);

    auto flipped = bytes;
    flipped[bytes.size() / 2] ^= 0x40;
    EXPECT_THROW(VectorIndex::deserialize(flipped), IndexFormatError);

    auto bad_version = bytes;
    bad_version[6] = 9;
    EXPECT_THROW(VectorIndex::deserialize(bad_version), IndexFormatError);

    EXPECT_THROW(VectorIndex::load(temp_file("missing.idx").string()), PreconditionError);
}

TEST(KMeans, SeparatedBlobsAreRecovered) {
    std::vector<float> data;
    std::mt19937_64 gen(1);
    std::normal_distribution<float> g(0.0F, 0.01F);
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < 20; ++i) {
            data.push_back(static_cast<float>(c * 10) + g(gen));
            data.push_back(g(gen));
        }
    const auto r = kmeans(data, 2, {3, 99, 25, 1e-4});
    ASSERT_EQ(r.assignment.size(), 60U);
    for (int c = 0; c < 3; ++c)
        for (int i = 1; i < 20; ++i) EXPECT_EQ(r.assignment[c * 20 + i], r.assignment[c * 20]);
    EXPECT_NE(r.assignment[0], r.assignment[20]);
    EXPECT_NE(r.assignment[20], r.assignment[40]);
    EXPECT_LE(r.iterations, 25);
    const auto again = kmeans(data, 2, {3, 99, 25, 1e-4});
    EXPECT_EQ(again.centroids, r.centroids);
}

TEST(KMeans, NoEmptyClustersWithDuplicates) {
    std::vector<float> data(40, 0.5F);
    data[0] = 3.0F;
    const auto r = kmeans(data, 1, {4, 0, 25, 1e-4});
    EXPECT_EQ(r.centroids.size(), 4U);
}

TEST(Corpus, LoadsJsonLinesAndRejectsBadInput) {
    const auto path = temp_file("corpus.jsonl");
    {
        std::ofstream out(path);
        out << R"({"pid":"1","title":"Octopussy","text":"Octopussy is a 1983 spy film."})" << "\n\n"
            << R"({"pid":"2","text":"Paris is the capital of France."})" << "\n";
    }
    const auto corpus = load_corpus(path.string());
    ASSERT_EQ(corpus.size(), 2U);
    EXPECT_EQ(passage_content(corpus[0]), "Octopussy: Octopussy is a 1983 spy film.");
    EXPECT_EQ(passage_content(corpus[1]), "Paris is the capital of France.");
    {
        std::ofstream out(path);
        out << R"({"pid":"1","text":"a"})" << "\n" << R"({"pid":"1","text":"b"})" << "\n";
    }
    EXPECT_THROW(load_corpus(path.string()), Error);
    {
        std::ofstream out(path);
        out << R"({"pid":"1","text":""})" << "\n";
    }
    EXPECT_THROW(load_corpus(path.string()), Error);
    std::filesystem::remove(path);
}

TEST(Retriever, TopThreeFromMockEmbeddings) {
    std::vector<Passage> corpus;
    const std::vector<std::string> topics{"Octopussy James Bond film 1983", "Paris capital France Seine",
                                          "Photosynthesis chlorophyll plants light", "Roland Garros French Open tennis",
                                          "Mount Everest Himalaya highest mountain"};
    for (std::size_t i = 0; i < topics.size(); ++i) corpus.push_back({"p" + std::to_string(i), std::nullopt, topics[i]});
    MockEmbedder e(64, 1);
    const auto idx = build_index(corpus, e, flat_params(), 2);
    Retriever r(idx, corpus, e);
    const auto out = r.retrieve(std::vector<std::string>{"Which James Bond film is Octopussy?"}, 3);
    ASSERT_EQ(out.size(), 1U);
    ASSERT_EQ(out[0].size(), 3U);
    EXPECT_EQ(out[0][0].pid, "p0");
    EXPECT_EQ(out[0][0].text, topics[0]);
    EXPECT_GT(out[0][0].score, out[0][1].score);

    MockEmbedder wrong(32, 1);
    EXPECT_THROW(Retriever(idx, corpus, wrong), PreconditionError);
}
