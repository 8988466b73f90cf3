#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "vader/kmeans.hpp"

using namespace vader;

static Rowsf blobs(std::size_t per_blob, std::size_t dim, double spread, std::uint64_t seed,
                   std::vector<std::uint32_t>* truth = nullptr) {
    Rng rng(seed);
    Rowsf data(per_blob * 3, dim);
    double centers[3] = {-10.0, 0.0, 10.0};
    for (std::size_t b = 0; b < 3; ++b)
        for (std::size_t i = 0; i < per_blob; ++i) {
            float* row = data[b * per_blob + i];
            for (std::size_t j = 0; j < dim; ++j)
                row[j] = static_cast<float>(centers[b] + rng.normal(0.0, spread));
            if (truth) truth->push_back(static_cast<std::uint32_t>(b));
        }
    return data;
}

TEST_CASE("kmeans recovers well-separated blobs") {
    std::vector<std::uint32_t> truth;
    auto data = blobs(100, 4, 0.2, 3, &truth);
    auto res = kmeans(data, 3, 17);
    REQUIRE(res.assignments.size() == 300);
    // same blob -> same cluster, different blobs -> different clusters
    std::set<std::uint32_t> labels;
    for (std::size_t b = 0; b < 3; ++b) {
        std::uint32_t label = res.assignments[b * 100];
        labels.insert(label);
        for (std::size_t i = 0; i < 100; ++i) CHECK(res.assignments[b * 100 + i] == label);
    }
    CHECK(labels.size() == 3);
    CHECK(res.inertia / 300.0 < 1.0);
}

TEST_CASE("kmeans is deterministic for a fixed seed") {
    auto data = blobs(50, 6, 1.0, 8);
    auto a = kmeans(data, 5, 123);
    auto b = kmeans(data, 5, 123);
    CHECK(a.centroids.data == b.centroids.data);
    CHECK(a.assignments == b.assignments);
    CHECK(a.inertia == b.inertia);
}

TEST_CASE("kmeans with one cluster returns the mean") {
    Rowsf data(4, 2);
    float vals[4][2] = {{0, 0}, {2, 0}, {0, 2}, {2, 2}};
    for (int i = 0; i < 4; ++i) std::copy(vals[i], vals[i] + 2, data[i]);
    auto res = kmeans(data, 1, 5);
    CHECK(res.centroids[0][0] == Catch::Approx(1.0));
    CHECK(res.centroids[0][1] == Catch::Approx(1.0));
    CHECK(res.inertia == Catch::Approx(8.0));
}

TEST_CASE("kmeans handles more clusters than distinct points") {
    Rowsf data(5, 3);
    for (std::size_t i = 0; i < 5; ++i) data[i][0] = static_cast<float>(i * 3);
    auto res = kmeans(data, 8, 9);
    CHECK(res.inertia == Catch::Approx(0.0));
    for (auto a : res.assignments) CHECK(a < 8);
}

TEST_CASE("kmeans trains on a sample but assigns every row") {
    auto data = blobs(400, 4, 0.3, 2);
    auto res = kmeans(data, 3, 7, 25, 100);
    CHECK(res.sample_truncated);
    REQUIRE(res.assignments.size() == 1200);
    // blob structure still found despite the 100-row training sample
    for (std::size_t b = 0; b < 3; ++b)
        for (std::size_t i = 1; i < 400; ++i)
            CHECK(res.assignments[b * 400 + i] == res.assignments[b * 400]);
}

TEST_CASE("kmeans rejects degenerate inputs") {
    Rowsf empty;
    empty.dim = 4;
    CHECK_THROWS_AS(kmeans(empty, 2, 1), param_error);
    Rowsf one(1, 4);
    CHECK_THROWS_AS(kmeans(one, 0, 1), param_error);
}
