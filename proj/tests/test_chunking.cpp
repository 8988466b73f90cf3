#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "vader/chunking.hpp"

using namespace vader;

// builds a video from explicit rows laid out on the standard time grid
static VideoFeatures make_video(std::vector<std::vector<float>> rows, const std::string& id = "v") {
    VideoFeatures v;
    v.video_id = id;
    v.chunks.dim = rows[0].size();
    double d = chunk_duration_s(v.fps);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        normalize(rows[i]);
        v.chunks.push_row(rows[i]);
        v.chunk_times.emplace_back(i * d, (i + 1) * d);
    }
    return v;
}

static std::vector<float> axis(std::size_t dim, std::size_t i) {
    std::vector<float> v(dim, 0.0f);
    v[i] = 1.0f;
    return v;
}

TEST_CASE("tau selection: constant similarity distribution returns that constant") {
    // a, a, a gives consecutive similarities {1,1}; scale-free of percentile
    auto v = make_video({axis(8, 0), axis(8, 0), axis(8, 0)});
    for (double p : {10.0, 50.0, 90.0})
        CHECK(select_tau({v}, p) == Catch::Approx(1.0));

    // walk with constant cosine 0.9 between steps
    std::vector<std::vector<float>> rows;
    double angle = std::acos(0.9);
    for (int i = 0; i < 5; ++i) {
        std::vector<float> r(8, 0.0f);
        r[0] = static_cast<float>(std::cos(angle * i));
        r[1] = static_cast<float>(std::sin(angle * i));
        rows.push_back(r);
    }
    auto w = make_video(rows);
    CHECK(select_tau({w}, 30.0) == Catch::Approx(0.9).margin(1e-6));
}

TEST_CASE("tau selection: two-point distribution interpolates") {
    // a, a, b with cos(a,b)=0 gives similarities {1, 0}; median is 0.5
    auto v = make_video({axis(8, 0), axis(8, 0), axis(8, 1)});
    CHECK(select_tau({v}, 50.0) == Catch::Approx(0.5));

    auto single = make_video({axis(8, 0)});
    CHECK_THROWS_AS(select_tau({single}, 50.0), param_error);
}

TEST_CASE("tau selection matches a brute-force percentile over the pooled similarities") {
    SynthConfig cfg;
    cfg.n_videos = 1000;
    cfg.chunks_min = 50;
    cfg.chunks_max = 150;
    cfg.dim = 512;
    cfg.smoothness = 0.9;
    cfg.seed = 7;
    auto corpus = synth_corpus(cfg);

    // independent oracle: pool, sort, index with linear interpolation
    // (similarities come from the shared dot primitive, itself checked
    // against naive accumulation elsewhere)
    std::vector<double> pooled;
    for (const auto& v : corpus)
        for (std::size_t i = 1; i < v.chunk_count(); ++i)
            pooled.push_back(dot(v.chunks[i - 1], v.chunks[i], v.chunks.dim));
    std::sort(pooled.begin(), pooled.end());
    auto oracle = [&](double p) {
        double pos = p / 100.0 * static_cast<double>(pooled.size() - 1);
        std::size_t lo = static_cast<std::size_t>(pos);
        double frac = pos - static_cast<double>(lo);
        return lo + 1 < pooled.size() ? pooled[lo] * (1 - frac) + pooled[lo + 1] * frac
                                      : pooled[lo];
    };
    for (double p : {25.0, 50.0, 75.0})
        CHECK(std::abs(select_tau(corpus, p) - oracle(p)) < 1e-12);
}

TEST_CASE("threshold chunking merges runs of similar descriptors") {
    ChunkingPolicy pol;
    pol.mode = ChunkMode::adaptive_threshold;
    pol.tau = 0.5;

    auto merged = chunk(make_video({axis(8, 0), axis(8, 0), axis(8, 0)}), pol);
    REQUIRE(merged.size() == 1);
    CHECK(merged.entries[0].span == 3);
    CHECK(merged.descriptors[0][0] == Catch::Approx(1.0));
    CHECK(merged.entries[0].start_s == 0.0);
    CHECK(merged.entries[0].end_s == Catch::Approx(3 * chunk_duration_s(24.0)));

    auto split = chunk(make_video({axis(8, 0), axis(8, 1)}), pol);
    REQUIRE(split.size() == 2);
    CHECK(split.entries[0].span == 1);
    CHECK(split.entries[1].span == 1);
    CHECK(split.descriptors[0][0] == 1.0f);
    CHECK(split.descriptors[1][1] == 1.0f);

    auto mixed = chunk(make_video({axis(8, 0), axis(8, 0), axis(8, 1)}), pol);
    REQUIRE(mixed.size() == 2);
    CHECK(mixed.entries[0].span == 2);
    CHECK(mixed.entries[1].span == 1);
    CHECK(mixed.descriptors[0][0] == Catch::Approx(1.0));
    CHECK(mixed.descriptors[1][1] == Catch::Approx(1.0));
}

TEST_CASE("none policy is the identity; all policy folds the video into one entry") {
    SynthConfig cfg;
    cfg.n_videos = 1;
    cfg.chunks_min = cfg.chunks_max = 9;
    cfg.dim = 32;
    cfg.seed = 42;
    auto v = synth_corpus(cfg)[0];

    ChunkingPolicy none;
    auto cn = chunk(v, none);
    REQUIRE(cn.size() == 9);
    CHECK(cn.descriptors.data == v.chunks.data);
    for (std::size_t i = 0; i < 9; ++i) {
        CHECK(cn.entries[i].span == 1);
        CHECK(cn.entries[i].start_s == v.chunk_times[i].first);
        CHECK(cn.entries[i].end_s == v.chunk_times[i].second);
    }

    ChunkingPolicy all;
    all.mode = ChunkMode::all;
    auto ca = chunk(v, all);
    REQUIRE(ca.size() == 1);
    CHECK(ca.entries[0].span == 9);
    std::vector<double> mean(32, 0.0);
    for (std::size_t i = 0; i < 9; ++i)
        for (std::size_t j = 0; j < 32; ++j) mean[j] += v.chunks[i][j] / 9.0;
    double nm = 0.0;
    for (double x : mean) nm += x * x;
    nm = std::sqrt(nm);
    for (std::size_t j = 0; j < 32; ++j)
        CHECK(ca.descriptors[0][j] == Catch::Approx(mean[j] / nm).margin(1e-5));
}

TEST_CASE("constant chunking groups k consecutive raw chunks") {
    SynthConfig cfg;
    cfg.n_videos = 1;
    cfg.chunks_min = cfg.chunks_max = 7;
    cfg.dim = 16;
    cfg.seed = 6;
    auto v = synth_corpus(cfg)[0];

    ChunkingPolicy c2;
    c2.mode = ChunkMode::constant;
    c2.k = 2;
    auto out = chunk(v, c2);
    REQUIRE(out.size() == 4);
    CHECK(out.entries[0].span == 2);
    CHECK(out.entries[1].span == 2);
    CHECK(out.entries[2].span == 2);
    CHECK(out.entries[3].span == 1);

    c2.k = 1;
    CHECK_THROWS_AS(chunk(v, c2), param_error);
}

TEST_CASE("chunking invariants hold across policies and corpora") {
    SynthConfig cfg;
    cfg.n_videos = 12;
    cfg.chunks_min = 3;
    cfg.chunks_max = 40;
    cfg.dim = 24;
    cfg.smoothness = 0.85;
    cfg.seed = 91;
    auto corpus = synth_corpus(cfg);

    std::vector<ChunkingPolicy> policies;
    policies.push_back({});
    {
        ChunkingPolicy p;
        p.mode = ChunkMode::all;
        policies.push_back(p);
        p.mode = ChunkMode::constant;
        p.k = 3;
        policies.push_back(p);
        p.mode = ChunkMode::adaptive_threshold;
        p.tau = select_tau(corpus, 50.0);
        policies.push_back(p);
        policies.push_back(make_kmeans_policy(corpus, 6, 5));
    }

    for (const auto& pol : policies) {
        for (const auto& v : corpus) {
            auto cv = chunk(v, pol);
            CHECK(cv.raw_chunks() == v.chunk_count());
            REQUIRE(cv.size() >= 1);
            CHECK(cv.entries.front().start_s == v.chunk_times.front().first);
            CHECK(cv.entries.back().end_s == v.chunk_times.back().second);
            std::size_t cum = 0;
            for (std::size_t e = 0; e < cv.size(); ++e) {
                const auto& en = cv.entries[e];
                CHECK(en.start_s == v.chunk_times[cum].first);
                CHECK(en.end_s == v.chunk_times[cum + en.span - 1].second);
                CHECK(is_unit(cv.descriptors[e], cv.descriptors.dim, 1e-5));

                // aggregation oracle in double precision
                std::vector<double> mean(v.chunks.dim, 0.0);
                for (std::size_t i = cum; i < cum + en.span; ++i)
                    for (std::size_t j = 0; j < v.chunks.dim; ++j) mean[j] += v.chunks[i][j];
                double nm = 0.0;
                for (double& x : mean) x /= en.span;
                for (double x : mean) nm += x * x;
                nm = std::sqrt(nm);
                for (std::size_t j = 0; j < v.chunks.dim; ++j)
                    CHECK(cv.descriptors[e][j] == Catch::Approx(mean[j] / nm).margin(2e-5));
                cum += en.span;
            }
            CHECK(cum == v.chunk_count());
        }
    }
}

TEST_CASE("lowering tau never increases the entry count") {
    SynthConfig cfg;
    cfg.n_videos = 6;
    cfg.chunks_min = 10;
    cfg.chunks_max = 60;
    cfg.dim = 32;
    cfg.smoothness = 0.8;
    cfg.seed = 14;
    auto corpus = synth_corpus(cfg);

    std::vector<double> taus;
    for (double p = 10.0; p < 100.0; p += 10.0) taus.push_back(select_tau(corpus, p));
    for (const auto& v : corpus) {
        std::size_t prev = 0;
        for (double t : taus) {
            ChunkingPolicy pol;
            pol.mode = ChunkMode::adaptive_threshold;
            pol.tau = t;
            std::size_t n = chunk(v, pol).size();
            CHECK(n >= prev);
            prev = n;
        }
    }
}

TEST_CASE("kmeans policy degenerates to all with one centroid and none with per-chunk centroids") {
    SynthConfig cfg;
    cfg.n_videos = 1;
    cfg.chunks_min = cfg.chunks_max = 14;
    cfg.dim = 16;
    cfg.smoothness = 0.5;
    cfg.seed = 77;
    auto v = synth_corpus(cfg)[0];

    auto one = make_kmeans_policy({v}, 1, 3);
    auto merged = chunk(v, one);
    ChunkingPolicy all;
    all.mode = ChunkMode::all;
    auto folded = chunk(v, all);
    REQUIRE(merged.size() == 1);
    CHECK(merged.descriptors.data == folded.descriptors.data);
    CHECK(merged.entries[0].span == folded.entries[0].span);

    // centroids = the video's own (pairwise distinct) descriptors
    ChunkingPolicy per;
    per.mode = ChunkMode::adaptive_kmeans;
    per.centroids = v.chunks;
    auto split = chunk(v, per);
    ChunkingPolicy none;
    auto identity = chunk(v, none);
    REQUIRE(split.size() == identity.size());
    CHECK(split.descriptors.data == identity.descriptors.data);
}

TEST_CASE("compression rate counts raw chunks per emitted entry") {
    SynthConfig cfg;
    cfg.n_videos = 5;
    cfg.chunks_min = cfg.chunks_max = 8;
    cfg.dim = 16;
    cfg.seed = 33;
    auto corpus = synth_corpus(cfg);

    std::vector<ChunkedVideo> none_out, const_out;
    ChunkingPolicy none;
    ChunkingPolicy c2;
    c2.mode = ChunkMode::constant;
    c2.k = 2;
    for (const auto& v : corpus) {
        none_out.push_back(chunk(v, none));
        const_out.push_back(chunk(v, c2));
    }
    CHECK(compression_rate(corpus, none_out) == Catch::Approx(1.0));
    CHECK(compression_rate(corpus, const_out) == Catch::Approx(2.0));

    std::swap(const_out[0].video_id, const_out[1].video_id);
    CHECK_THROWS_AS(compression_rate(corpus, const_out), mismatch_error);
}

TEST_CASE("median-percentile adaptive chunking lands near 2x compression on a smooth corpus") {
    SynthConfig cfg;
    cfg.n_videos = 300;
    cfg.chunks_min = 50;
    cfg.chunks_max = 150;
    cfg.dim = 128;
    cfg.smoothness = 0.9;
    cfg.seed = 19;
    auto corpus = synth_corpus(cfg);

    ChunkingPolicy pol;
    pol.mode = ChunkMode::adaptive_threshold;
    pol.tau = select_tau(corpus, 50.0);
    std::vector<ChunkedVideo> out;
    for (const auto& v : corpus) out.push_back(chunk(v, pol));
    double rate = compression_rate(corpus, out);
    CHECK(rate >= 1.6);
    CHECK(rate <= 2.4);
}

TEST_CASE("chunking policies serialize into the index header format") {
    namespace fs = std::filesystem;
    std::string path = (fs::temp_directory_path() / "vader_policy.bin").string();

    SynthConfig cfg;
    cfg.n_videos = 2;
    cfg.chunks_min = cfg.chunks_max = 6;
    cfg.dim = 12;
    cfg.seed = 2;
    auto corpus = synth_corpus(cfg);
    auto pol = make_kmeans_policy(corpus, 4, 9);
    pol.tau = 0.25;
    pol.k = 3;

    {
        io::BinWriter w(path);
        pol.serialize(w);
        w.close();
    }
    {
        io::BinReader r(path);
        auto back = ChunkingPolicy::deserialize(r);
        CHECK(back.mode == pol.mode);
        CHECK(back.tau == pol.tau);
        CHECK(back.k == pol.k);
        CHECK(back.renormalize == pol.renormalize);
        CHECK(back.centroids.dim == pol.centroids.dim);
        CHECK(back.centroids.data == pol.centroids.data);
    }

    // chunking with a reloaded policy reproduces the original segmentation
    io::BinReader r(path);
    auto back = ChunkingPolicy::deserialize(r);
    for (const auto& v : corpus) {
        auto a = chunk(v, pol);
        auto b = chunk(v, back);
        CHECK(a.descriptors.data == b.descriptors.data);
        CHECK(a.size() == b.size());
    }
    std::remove(path.c_str());
}

TEST_CASE("chunking rejects empty videos and mismatched centroid dimensions") {
    VideoFeatures empty;
    empty.video_id = "e";
    empty.chunks.dim = 8;
    ChunkingPolicy none;
    CHECK_THROWS_AS(chunk(empty, none), param_error);

    auto v = make_video({axis(8, 0), axis(8, 1)});
    ChunkingPolicy km;
    km.mode = ChunkMode::adaptive_kmeans;
    km.centroids = Rowsf(2, 16);
    CHECK_THROWS_AS(chunk(v, km), mismatch_error);
}
