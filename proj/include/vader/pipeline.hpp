#pragma once

// End-to-end plumbing: a serializable run configuration, corpus/query
// synthesis on disk, index construction, and the retrieve -> align -> diff
// chain over a manifest. Every artifact embeds the configuration hash so
// mixed-provenance runs fail loudly instead of silently disagreeing.

#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vader/aligner.hpp"
#include "vader/chunking.hpp"
#include "vader/comparator.hpp"
#include "vader/core.hpp"
#include "vader/features.hpp"
#include "vader/metrics.hpp"
#include "vader/retrieval.hpp"
#include "vader/vindex.hpp"

namespace vader {

struct PipelineConfig {
    std::string policy = "adaptive:p50";  // none | all | const:K | adaptive:pNN | kmeans:K
    std::size_t nlist = 64;
    std::size_t m_sub = 8;
    std::size_t bits = 8;
    bool exact = false;
    std::size_t r = 20;
    std::size_t nprobe = 16;
    double lambda = 2.0;
    std::string mode = "ours";  // ours | nosigma | count | maxsim | uniform
    std::string align_checkpoint;
    double margin_s = 15.0;
    std::string differ_checkpoint;
    double threshold = 0.5;
    std::uint64_t seed = 0;

    void set(const std::string& key, const std::string& value) {
        auto to_u = [&](const char* what) {
            try {
                return static_cast<std::size_t>(std::stoull(value));
            } catch (...) {
                throw param_error(std::string("config: ") + what + " wants an integer, got '" +
                                  value + "'");
            }
        };
        auto to_d = [&](const char* what) {
            try {
                return std::stod(value);
            } catch (...) {
                throw param_error(std::string("config: ") + what + " wants a number, got '" +
                                  value + "'");
            }
        };
        if (key == "policy") policy = value;
        else if (key == "nlist") nlist = to_u("nlist");
        else if (key == "m_sub") m_sub = to_u("m_sub");
        else if (key == "bits") bits = to_u("bits");
        else if (key == "exact") exact = value == "1" || value == "true";
        else if (key == "r") r = to_u("r");
        else if (key == "nprobe") nprobe = to_u("nprobe");
        else if (key == "lambda") lambda = to_d("lambda");
        else if (key == "mode") mode = value;
        else if (key == "align_checkpoint") align_checkpoint = value;
        else if (key == "margin_s") margin_s = to_d("margin_s");
        else if (key == "differ_checkpoint") differ_checkpoint = value;
        else if (key == "threshold") threshold = to_d("threshold");
        else if (key == "seed") seed = std::stoull(value);
        else throw param_error("config: unknown key '" + key + "'");
    }

    // canonical form: fixed key order, %.17g numbers; the hash is FNV-1a of this
    std::string serialize() const {
        char buf[64];
        std::string out;
        auto add = [&](const std::string& k, const std::string& v) {
            out += k + " = " + v + "\n";
        };
        auto num = [&](double v) {
            std::snprintf(buf, sizeof(buf), "%.17g", v);
            return std::string(buf);
        };
        add("policy", policy);
        add("nlist", std::to_string(nlist));
        add("m_sub", std::to_string(m_sub));
        add("bits", std::to_string(bits));
        add("exact", exact ? "1" : "0");
        add("r", std::to_string(r));
        add("nprobe", std::to_string(nprobe));
        add("lambda", num(lambda));
        add("mode", mode);
        add("align_checkpoint", align_checkpoint);
        add("margin_s", num(margin_s));
        add("differ_checkpoint", differ_checkpoint);
        add("threshold", num(threshold));
        add("seed", std::to_string(seed));
        return out;
    }

    std::uint64_t hash() const { return fnv1a64(serialize()); }

    // fingerprint of only the fields that shape the index artifact; stored in
    // the index and re-checked before querying it
    std::uint64_t index_hash() const {
        std::string s = "policy=" + policy + ";nlist=" + std::to_string(nlist) +
                        ";m_sub=" + std::to_string(m_sub) + ";bits=" + std::to_string(bits) +
                        ";seed=" + std::to_string(seed);
        return fnv1a64(s);
    }

    void apply_text(const std::string& text, const std::string& origin) {
        std::istringstream in(text);
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            auto hash_pos = line.find('#');
            if (hash_pos != std::string::npos) line.resize(hash_pos);
            auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r'; };
            std::string stripped;
            for (char c : line)
                if (!is_space(c)) stripped += c;
            if (stripped.empty()) continue;
            auto eq = stripped.find('=');
            if (eq == std::string::npos || eq == 0)
                throw param_error("config: expected key=value at " + origin + ":" +
                                  std::to_string(lineno));
            set(stripped.substr(0, eq), stripped.substr(eq + 1));
        }
    }

    void apply_file(const std::string& path) { apply_text(io::read_text_file(path), path); }
};

inline ScoreMode parse_score_mode(const std::string& s) {
    if (s == "ours") return ScoreMode::ours;
    if (s == "nosigma") return ScoreMode::ours_no_sigma;
    if (s == "count") return ScoreMode::count;
    if (s == "maxsim") return ScoreMode::max_sim;
    if (s == "uniform") return ScoreMode::uniform;
    throw param_error("unknown scoring mode '" + s + "'");
}

// Chunking policies are named on the command line; the data-dependent ones
// (threshold percentile, centroid set) are fitted against the corpus here.
inline ChunkingPolicy make_policy(const std::string& spec,
                                  const std::vector<VideoFeatures>& corpus) {
    ChunkingPolicy p;
    if (spec == "none") {
        p.mode = ChunkMode::none;
        return p;
    }
    if (spec == "all") {
        p.mode = ChunkMode::all;
        return p;
    }
    if (spec.rfind("const:", 0) == 0) {
        p.mode = ChunkMode::constant;
        p.k = static_cast<std::size_t>(std::stoull(spec.substr(6)));
        p.validate();
        return p;
    }
    if (spec.rfind("adaptive:p", 0) == 0) {
        p.mode = ChunkMode::adaptive_threshold;
        double pct = std::stod(spec.substr(10));
        if (!(pct > 0.0 && pct < 100.0))
            throw param_error("chunking policy: percentile outside (0,100) in '" + spec + "'");
        p.tau = select_tau(corpus, pct);
        return p;
    }
    if (spec.rfind("kmeans:", 0) == 0) {
        std::size_t k = static_cast<std::size_t>(std::stoull(spec.substr(7)));
        return make_kmeans_policy(corpus, k, 0);
    }
    throw param_error("unknown chunking policy '" + spec + "'");
}

// ---------------------------------------------------------------------------
// On-disk corpus layout
// ---------------------------------------------------------------------------
//
//   <dir>/corpus/<video_id>.vdrf[.json]         chunk descriptors
//   <dir>/corpus/<video_id>.frames.vdrf[.json]  frame descriptors
//   <dir>/queries/<query_id>.vdrf[.json]        query chunk descriptors
//   <dir>/queries/<query_id>.frames.vdrf[.json]
//   <dir>/manifest.json                         ground truth + file pointers
//   <dir>/index.vdri                            after build-index

struct SynthPlan {
    std::size_t videos = 100;
    std::size_t queries = 20;
    std::size_t chunks_min = 50;
    std::size_t chunks_max = 150;
    std::size_t dim = 512;
    double smoothness = 0.9;
    bool frame_features = true;
    std::size_t frame_dim = 64;
    double query_noise = 0.1;
    double query_min_s = 20.0;  // cropped fragment length bounds
    double query_max_s = 60.0;
    std::uint64_t seed = 0;
};

inline std::vector<ManipulationRecord> synth_dataset(const std::string& dir,
                                                     const SynthPlan& plan) {
    namespace fs = std::filesystem;
    if (plan.videos < 1 || plan.queries < 1) throw param_error("synth: empty plan");
    fs::create_directories(fs::path(dir) / "corpus");
    fs::create_directories(fs::path(dir) / "queries");

    SynthConfig sc;
    sc.n_videos = plan.videos;
    sc.chunks_min = plan.chunks_min;
    sc.chunks_max = plan.chunks_max;
    sc.dim = plan.dim;
    sc.smoothness = plan.smoothness;
    sc.seed = plan.seed;
    sc.with_frame_features = plan.frame_features;
    sc.frame_dim = plan.frame_dim;
    auto corpus = synth_corpus(sc);
    for (const auto& v : corpus) {
        auto base = (fs::path(dir) / "corpus" / v.video_id).string();
        save_descriptors(base + ".vdrf", v, DescriptorKind::chunks);
        if (plan.frame_features)
            save_descriptors(base + ".frames.vdrf", v, DescriptorKind::frames);
    }

    Rng rng = Rng(plan.seed).derive(777);
    std::vector<ManipulationRecord> records;
    records.reserve(plan.queries);
    for (std::size_t q = 0; q < plan.queries; ++q) {
        const auto& src = corpus[static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<std::int64_t>(corpus.size()) - 1))];
        double dur = src.duration_s();
        double span = std::min(dur, rng.uniform(plan.query_min_s, plan.query_max_s));
        double start = rng.uniform(0.0, dur - span);
        auto qv = apply_benign(src, plan.query_noise, {start, start + span}, rng.next_u64());
        qv.video_id = "query-" + std::to_string(q);

        auto base = (fs::path(dir) / "queries" / qv.video_id).string();
        save_descriptors(base + ".vdrf", qv, DescriptorKind::chunks);
        ManipulationRecord rec;
        rec.query_id = qv.video_id;
        rec.original_id = src.video_id;
        rec.gt_start_s = start;
        rec.gt_end_s = start + span;
        rec.edit_type = EditType::frame_level;
        rec.edit_type_raw = "frame_level";
        rec.query_features = "queries/" + qv.video_id + ".vdrf";
        rec.original_features = "corpus/" + src.video_id + ".vdrf";
        if (plan.frame_features && qv.frame_features.size() > 0) {
            save_descriptors(base + ".frames.vdrf", qv, DescriptorKind::frames);
            rec.query_frame_features = "queries/" + qv.video_id + ".frames.vdrf";
            rec.original_frame_features = "corpus/" + src.video_id + ".frames.vdrf";
        }
        records.push_back(std::move(rec));
    }
    save_manifest((fs::path(dir) / "manifest.json").string(), records);
    return records;
}

inline std::vector<VideoFeatures> load_corpus_dir(const std::string& dir) {
    namespace fs = std::filesystem;
    std::vector<VideoFeatures> out;
    if (!fs::is_directory(dir)) throw io_error("corpus directory missing: " + dir);
    std::vector<std::string> paths;
    for (const auto& e : fs::directory_iterator(dir)) {
        auto p = e.path().string();
        if (p.size() > 5 && p.substr(p.size() - 5) == ".vdrf" &&
            p.find(".frames.vdrf") == std::string::npos)
            paths.push_back(p);
    }
    std::sort(paths.begin(), paths.end());
    out.reserve(paths.size());
    for (const auto& p : paths) out.push_back(load_descriptors(p));
    return out;
}

// ---------------------------------------------------------------------------
// Stage results and reporting
// ---------------------------------------------------------------------------

struct QueryOutcome {
    std::string query_id;
    std::string truth;        // empty when unknown
    std::vector<VideoScore> ranking;
    std::size_t truth_rank = 0;  // 1-based, 0 = absent
    double coarse_start_s = 0.0;
    bool coarse_valid = false;
    double align_offset_s = 0.0;
    bool align_valid = false;
    std::size_t masked_frames = 0;
    std::size_t mask_frames_total = 0;
    double mean_iou = -1.0;  // < 0: no ground-truth masks
};

// One JSON line per query. Schema (all rows): query_id str; config_hash str;
// rank1 str; rank1_score num; truth str; truth_rank int (0 = missed);
// coarse_start_s num|null; align_offset_s num|null; masked_frames int|null;
// mean_iou num|null.
inline nlohmann::json outcome_to_json(const QueryOutcome& o, std::uint64_t config_hash) {
    nlohmann::json j;
    j["query_id"] = o.query_id;
    char hb[32];
    std::snprintf(hb, sizeof(hb), "%016llx", static_cast<unsigned long long>(config_hash));
    j["config_hash"] = hb;
    j["rank1"] = o.ranking.empty() ? "" : o.ranking.front().video_id;
    j["rank1_score"] = o.ranking.empty() ? 0.0 : o.ranking.front().score;
    j["truth"] = o.truth;
    j["truth_rank"] = o.truth_rank;
    if (o.coarse_valid) j["coarse_start_s"] = o.coarse_start_s;
    else j["coarse_start_s"] = nullptr;
    if (o.align_valid) j["align_offset_s"] = o.align_offset_s;
    else j["align_offset_s"] = nullptr;
    if (o.mask_frames_total > 0) j["masked_frames"] = o.masked_frames;
    else j["masked_frames"] = nullptr;
    if (o.mean_iou >= 0.0) j["mean_iou"] = o.mean_iou;
    else j["mean_iou"] = nullptr;
    return j;
}

// Hand-rolled schema check for report lines; throws with the offending field.
inline void validate_report_line(const nlohmann::json& j) {
    auto need = [&](const char* field) -> const nlohmann::json& {
        if (!j.contains(field))
            throw validation_error(std::string("report line: missing field '") + field + "'");
        return j.at(field);
    };
    auto str_field = [&](const char* field) {
        if (!need(field).is_string())
            throw validation_error(std::string("report line: '") + field + "' must be a string");
    };
    str_field("query_id");
    str_field("config_hash");
    str_field("rank1");
    str_field("truth");
    if (!need("rank1_score").is_number())
        throw validation_error("report line: 'rank1_score' must be a number");
    if (!need("truth_rank").is_number_unsigned())
        throw validation_error("report line: 'truth_rank' must be a non-negative integer");
    for (const char* f : {"coarse_start_s", "align_offset_s", "mean_iou"}) {
        const auto& v = need(f);
        if (!v.is_null() && !v.is_number())
            throw validation_error(std::string("report line: '") + f + "' must be number or null");
    }
    const auto& mf = need("masked_frames");
    if (!mf.is_null() && !mf.is_number_unsigned())
        throw validation_error("report line: 'masked_frames' must be unsigned or null");
    const std::string& hash = j.at("config_hash").get_ref<const std::string&>();
    if (hash.size() != 16 || hash.find_first_not_of("0123456789abcdef") != std::string::npos)
        throw validation_error("report line: 'config_hash' must be 16 hex digits");
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

struct RetrievalStage {
    VIndex index;
    PipelineConfig cfg;

    static RetrievalStage open(const std::string& index_path, const PipelineConfig& cfg) {
        RetrievalStage st;
        if (!std::filesystem::exists(index_path))
            throw io_error("index file missing: " + index_path);
        st.index = VIndex::load(index_path);
        st.cfg = cfg;
        return st;
    }

    QueryOutcome run(const VideoFeatures& query, const std::string& truth) const {
        if (query.chunks.dim != index.dim())
            throw mismatch_error("query dimension " + std::to_string(query.chunks.dim) +
                                 " does not match index dimension " + std::to_string(index.dim()));
        ChunkedVideo cq = chunk(query, index.policy);
        auto hits = index.search(cq.descriptors, cfg.r, cfg.nprobe, cfg.exact);
        std::vector<std::pair<double, double>> spans;
        spans.reserve(cq.entries.size());
        for (const auto& e : cq.entries) spans.emplace_back(e.start_s, e.end_s);
        auto ctx = QueryContext::from_times(spans, cfg.lambda, cfg.r);
        QueryOutcome out;
        out.query_id = query.video_id;
        out.truth = truth;
        out.ranking = score_videos(hits, ctx, parse_score_mode(cfg.mode));
        for (std::size_t i = 0; i < out.ranking.size(); ++i)
            if (out.ranking[i].video_id == truth) {
                out.truth_rank = i + 1;
                break;
            }
        if (!out.ranking.empty()) {
            const auto& top = out.ranking.front().video_id;
            try {
                out.coarse_start_s =
                    coarse_start(hits, ctx, top, index.duration(top), cfg.lambda);
                out.coarse_valid = true;
            } catch (const localization_unavailable&) {
                out.coarse_start_s = max_sim_start(hits, top);
                out.coarse_valid = true;
            }
        }
        return out;
    }
};

}  // namespace vader
