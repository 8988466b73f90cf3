#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>

#include "vader/core.hpp"

using namespace vader;

TEST_CASE("splitmix64 matches the reference stream") {
    // first output of the reference splitmix64 generator seeded with 0
    CHECK(splitmix64(0) == 0xE220A8397B1DCDAFull);
    CHECK(splitmix64(1) != splitmix64(2));
}

TEST_CASE("rng is deterministic per seed and derive() forks independent streams") {
    Rng a(42), b(42);
    for (int i = 0; i < 16; ++i) CHECK(a.next_u64() == b.next_u64());

    Rng base(7);
    Rng d3 = base.derive(3);
    // deriving is a pure function of the seed, not of draw position
    base.next_u64();
    base.next_u64();
    Rng d3_again = base.derive(3);
    for (int i = 0; i < 8; ++i) CHECK(d3.next_u64() == d3_again.next_u64());

    Rng d4 = Rng(7).derive(4);
    bool all_equal = true;
    Rng d3_fresh = Rng(7).derive(3);
    for (int i = 0; i < 8; ++i) all_equal &= (d3_fresh.next_u64() == d4.next_u64());
    CHECK_FALSE(all_equal);
}

TEST_CASE("blocked dot and l2 agree with naive accumulation") {
    Rng rng(123);
    for (std::size_t n : {0ull, 1ull, 7ull, 8ull, 9ull, 63ull, 64ull, 513ull}) {
        std::vector<float> a(n), b(n);
        for (auto& v : a) v = static_cast<float>(rng.normal());
        for (auto& v : b) v = static_cast<float>(rng.normal());
        double ref_dot = 0.0, ref_l2 = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            ref_dot += static_cast<double>(a[i]) * b[i];
            double d = static_cast<double>(a[i]) - b[i];
            ref_l2 += d * d;
        }
        CHECK(std::abs(dot(a.data(), b.data(), n) - ref_dot) < 1e-3);
        CHECK(std::abs(l2_sq(a.data(), b.data(), n) - ref_l2) < 1e-3);
    }
    // double precision path is tighter
    std::vector<double> x(129), y(129);
    for (auto& v : x) v = rng.normal();
    for (auto& v : y) v = rng.normal();
    double ref = std::inner_product(x.begin(), x.end(), y.begin(), 0.0);
    CHECK(std::abs(dot(x.data(), y.data(), x.size()) - ref) < 1e-9);
}

TEST_CASE("normalize produces unit vectors and rejects the zero vector") {
    std::vector<float> v{3.0f, 4.0f};
    normalize(v);
    CHECK(v[0] == Catch::Approx(0.6f));
    CHECK(v[1] == Catch::Approx(0.8f));
    CHECK(std::abs(norm(v.data(), 2) - 1.0f) < 1e-6f);

    std::vector<float> z{0.0f, 0.0f, 0.0f};
    CHECK_THROWS_AS(normalize(z), param_error);
}

TEST_CASE("percentile interpolates linearly between order statistics") {
    std::vector<double> v{4.0, 1.0, 3.0, 2.0};
    CHECK(percentile_linear(v, 50.0) == Catch::Approx(2.5));
    CHECK(percentile_linear(v, 25.0) == Catch::Approx(1.75));
    CHECK(percentile_linear(v, 75.0) == Catch::Approx(3.25));

    CHECK(percentile_linear({5.0}, 30.0) == Catch::Approx(5.0));
    CHECK(percentile_linear({1.0, 2.0, 3.0}, 50.0) == Catch::Approx(2.0));

    CHECK_THROWS_AS(percentile_linear({}, 50.0), param_error);
    CHECK_THROWS_AS(percentile_linear({1.0}, 0.0), param_error);
    CHECK_THROWS_AS(percentile_linear({1.0}, 100.0), param_error);

    // monotone in p, bounded by the extremes
    Rng rng(9);
    std::vector<double> sample(200);
    for (auto& s : sample) s = rng.normal();
    double prev = -1e300;
    for (double p = 5.0; p < 100.0; p += 5.0) {
        double q = percentile_linear(sample, p);
        CHECK(q >= prev);
        CHECK(q >= *std::min_element(sample.begin(), sample.end()));
        CHECK(q <= *std::max_element(sample.begin(), sample.end()));
        prev = q;
    }
}

TEST_CASE("fnv1a64 matches published test vectors") {
    CHECK(fnv1a64("") == 0xcbf29ce484222325ull);
    CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cull);
    CHECK(fnv1a64("foobar") == 0x85944171f73967e8ull);
}

TEST_CASE("rows matrix stores row-major and validates pushed dimensions") {
    Rowsf m;
    m.dim = 3;
    m.push_row(std::vector<float>{1, 2, 3});
    m.push_row(std::vector<float>{4, 5, 6});
    REQUIRE(m.size() == 2);
    CHECK(m[1][0] == 4.0f);
    CHECK(m[0][2] == 3.0f);
    CHECK_THROWS_AS(m.push_row(std::vector<float>{1, 2}), param_error);

    Rowsf zeroed(4, 2);
    CHECK(zeroed.size() == 4);
    CHECK(zeroed[3][1] == 0.0f);
}
