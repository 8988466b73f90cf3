// Command-line front end: synthesis, indexing, retrieval, alignment,
// differencing, and evaluation as composable subcommands. Configuration
// precedence is CLI flag > --config file > VADER_CONFIG file > defaults,
// and every artifact carries the configuration hash that produced it.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vader/pipeline.hpp"

using namespace vader;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct cli_exit {
    int code;
    std::string msg;
};

// Options shared with the config file. Each subcommand attaches the subset it
// honors; values parse through PipelineConfig::set so the file and the flags
// cannot drift apart.
struct ConfigFlags {
    std::map<std::string, std::string> raw;
    std::string config_path;
    bool exact_flag = false;
    bool has_exact = false;

    void attach(CLI::App* sub, const std::vector<std::string>& keys) {
        sub->add_option("--config", config_path, "key=value configuration file");
        for (const auto& key : keys) {
            if (key == "exact") {
                has_exact = true;
                sub->add_flag("--exact", exact_flag, "score candidates without quantization");
                continue;
            }
            std::string flag = "--" + key;
            for (auto& c : flag)
                if (c == '_') c = '-';
            sub->add_option(flag, raw[key], "");
        }
    }

    PipelineConfig resolve(const CLI::App* sub) const {
        PipelineConfig cfg;
        if (const char* env = std::getenv("VADER_CONFIG")) cfg.apply_file(env);
        if (!config_path.empty()) cfg.apply_file(config_path);
        for (const auto& [key, value] : raw) {
            std::string flag = "--" + key;
            for (auto& c : flag)
                if (c == '_') c = '-';
            if (sub->count(flag)) cfg.set(key, value);
        }
        if (has_exact && sub->count("--exact")) cfg.set("exact", exact_flag ? "1" : "0");
        return cfg;
    }
};

std::string hash_hex(std::uint64_t h) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

VideoFeatures load_features_checked(const std::string& path) {
    if (!fs::exists(path)) throw io_error("feature file missing: " + path);
    return load_descriptors(path);
}

// Rows of the batch report; kept in manifest order regardless of worker count.
json ranking_json(const QueryOutcome& out, std::size_t limit) {
    json arr = json::array();
    for (std::size_t i = 0; i < out.ranking.size() && i < limit; ++i)
        arr.push_back({{"video_id", out.ranking[i].video_id}, {"score", out.ranking[i].score}});
    return arr;
}

int cmd_synth(const std::string& out_dir, const SynthPlan& plan) {
    auto records = synth_dataset(out_dir, plan);
    std::cout << "wrote " << plan.videos << " corpus videos and " << records.size()
              << " queries under " << out_dir << "\n";
    std::cout << "manifest: " << (fs::path(out_dir) / "manifest.json").string() << "\n";
    return 0;
}

int cmd_build_index(const std::string& data_dir, const std::string& out_path,
                    const PipelineConfig& cfg) {
    auto corpus = load_corpus_dir((fs::path(data_dir) / "corpus").string());
    if (corpus.empty()) throw io_error("no descriptor files under " + data_dir + "/corpus");
    ChunkingPolicy policy = make_policy(cfg.policy, corpus);

    std::vector<ChunkedVideo> chunked;
    chunked.reserve(corpus.size());
    std::size_t total = 0;
    for (const auto& v : corpus) {
        chunked.push_back(chunk(v, policy));
        total += chunked.back().size();
    }
    Rowsf sample;
    sample.dim = corpus.front().chunks.dim;
    sample.data.reserve(total * sample.dim);
    for (const auto& cv : chunked)
        for (std::size_t e = 0; e < cv.size(); ++e) sample.push_row(cv.descriptors[e]);

    VIndex index;
    VIndex::Config ic;
    ic.nlist = cfg.nlist;
    ic.m_sub = cfg.m_sub;
    ic.bits = cfg.bits;
    ic.seed = cfg.seed;
    index.train(sample, ic);
    for (const auto& cv : chunked) index.add(cv);
    index.policy = policy;
    index.config_hash = cfg.index_hash();
    index.save(out_path);
    std::cout << "indexed " << corpus.size() << " videos, " << total << " descriptors of dim "
              << index.dim() << " (policy " << cfg.policy << ", config " << hash_hex(index.config_hash)
              << ") -> " << out_path << "\n";
    if (index.small_sample_warning())
        std::cerr << "warning: training sample is small for nlist/bits; recall may suffer\n";
    return 0;
}

int cmd_query(const std::string& index_path, const std::string& features_path,
              const std::string& truth, const PipelineConfig& cfg) {
    auto stage = RetrievalStage::open(index_path, cfg);
    auto q = load_features_checked(features_path);
    auto out = stage.run(q, truth);
    json j = outcome_to_json(out, cfg.hash());
    j["ranking"] = ranking_json(out, cfg.r);
    std::cout << j.dump(2) << "\n";
    return 0;
}

int cmd_align(const std::string& ckpt, const std::string& query_path,
              const std::string& original_path, double start_s, double margin_s,
              const std::string& out_path) {
    if (!fs::exists(ckpt)) throw io_error("checkpoint missing: " + ckpt);
    auto model = load_align<float>(ckpt);
    auto q = load_features_checked(query_path);
    auto orig = load_features_checked(original_path);
    if (q.frame_features.dim != model.cfg.feat_dim)
        throw mismatch_error("query frame dimension " + std::to_string(q.frame_features.dim) +
                             " does not match the model's " + std::to_string(model.cfg.feat_dim));
    if (orig.frame_features.dim != model.cfg.feat_dim)
        throw mismatch_error("candidate frame dimension " +
                             std::to_string(orig.frame_features.dim) +
                             " does not match the model's " + std::to_string(model.cfg.feat_dim));
    auto res = align_videos(model, q, orig, start_s, margin_s);
    json j;
    j["offset_s"] = res.offset_s;
    j["frames"] = json::array();
    for (const auto& f : res.frames)
        j["frames"].push_back({{"query_t_s", f.query_t_s},
                               {"matched_t_s", f.matched_t_s},
                               {"windows", f.windows}});
    std::string text = j.dump(2) + "\n";
    if (!out_path.empty()) io::write_text_file(out_path, text);
    std::cout << text;
    return 0;
}

// Runs the detector over a clip in model-sized windows; the tail window is
// anchored to the end so every frame is covered exactly once per pass.
io::GridU8 diff_clip(ComparatorModel<float>& model, const VideoTensor& query,
                     const VideoTensor& original, std::size_t shift, double threshold) {
    std::size_t T = model.cfg.frames;
    if (query.t < T) throw param_error("diff: query clip shorter than the model window");
    if (original.t < query.t + shift)
        throw mismatch_error("diff: original clip too short for the requested shift");
    io::GridU8 out;
    out.frames = static_cast<std::uint32_t>(query.t);
    out.height = static_cast<std::uint32_t>(query.h);
    out.width = static_cast<std::uint32_t>(query.w);
    out.data.assign(query.t * query.h * query.w, 0);
    for (std::size_t t0 = 0;; t0 += T) {
        if (t0 + T > query.t) t0 = query.t - T;
        auto vp = query.window(t0, T);
        auto v = original.window(t0 + shift, T);
        auto pred = differ_forward(model, v, vp);
        auto masks = render_heatmap(pred, query.h, query.w, threshold);
        std::copy(masks.data.begin(), masks.data.end(),
                  out.data.begin() + t0 * query.h * query.w);
        if (t0 + T >= query.t) break;
    }
    return out;
}

int cmd_diff(const std::string& ckpt, const std::string& query_path,
             const std::string& original_path, double threshold, std::size_t shift,
             const std::string& mask_path, const std::string& out_grid, bool baseline) {
    auto query = load_clip(query_path);
    auto original = load_clip(original_path);
    io::GridU8 masks;
    if (baseline) {
        if (original.t < query.t + shift)
            throw mismatch_error("diff: original clip too short for the requested shift");
        masks = ssd_baseline(original.window(shift, query.t), query, threshold);
    } else {
        if (ckpt.empty()) throw param_error("diff: --checkpoint required unless --baseline");
        if (!fs::exists(ckpt)) throw io_error("checkpoint missing: " + ckpt);
        auto model = load_differ<float>(ckpt);
        model.frozen_stats = true;
        if (query.c != model.cfg.in_channels)
            throw mismatch_error("diff: clip has " + std::to_string(query.c) +
                                 " channels, model wants " +
                                 std::to_string(model.cfg.in_channels));
        masks = diff_clip(model, query, original, shift, threshold);
    }
    json j;
    j["frames"] = masks.frames;
    std::size_t flagged = 0;
    for (std::size_t t = 0; t < masks.frames; ++t) {
        const auto* p = masks.data.data() + t * masks.height * masks.width;
        for (std::size_t i = 0; i < masks.height * masks.width; ++i)
            if (p[i]) {
                ++flagged;
                break;
            }
    }
    j["flagged_frames"] = flagged;
    if (!mask_path.empty()) {
        auto gt = io::read_grid_u8(mask_path);
        auto per_frame = frame_iou(masks, gt);
        j["mean_iou"] = mean_iou(masks, gt);
        j["temporal_stability"] = temporal_stability(per_frame);
    }
    if (!out_grid.empty()) {
        io::write_grid_u8(out_grid, masks);
        j["masks"] = out_grid;
    }
    std::cout << j.dump(2) << "\n";
    return 0;
}

std::vector<json> read_jsonl(const std::string& path) {
    if (!fs::exists(path)) throw io_error("predictions file missing: " + path);
    std::ifstream in(path);
    std::vector<json> rows;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.empty()) continue;
        try {
            rows.push_back(json::parse(line));
        } catch (const json::exception& e) {
            throw validation_error("bad JSON at " + path + ":" + std::to_string(n) + ": " +
                                   e.what());
        }
    }
    return rows;
}

EvalReport report_from_rows(const std::vector<json>& rows,
                            const std::vector<ManipulationRecord>& records,
                            const std::set<int>& tables,
                            const std::vector<double>& align_thresholds,
                            const std::string& shift_json_path) {
    std::map<std::string, const ManipulationRecord*> by_query;
    for (const auto& r : records) by_query[r.query_id] = &r;

    EvalReport rep;
    if (tables.count(1)) {
        std::size_t r1 = 0, r5 = 0;
        for (const auto& row : rows) {
            auto rank = row.at("truth_rank").get<std::size_t>();
            r1 += rank == 1;
            r5 += rank >= 1 && rank <= 5;
        }
        rep.recall_at_1 = static_cast<double>(r1) / static_cast<double>(rows.size());
        rep.recall_at_5 = static_cast<double>(r5) / static_cast<double>(rows.size());
    }
    if (tables.count(2)) {
        std::vector<SegmentPrediction> preds;
        std::vector<SegmentTruth> truths;
        for (const auto& row : rows) {
            const auto& qid = row.at("query_id").get_ref<const std::string&>();
            auto it = by_query.find(qid);
            if (it == by_query.end())
                throw validation_error("predictions mention unknown query " + qid);
            const auto& rec = *it->second;
            truths.push_back({qid, rec.original_id, rec.gt_start_s, rec.gt_end_s});
            if (row.at("coarse_start_s").is_null()) continue;
            SegmentPrediction p;
            p.query_id = qid;
            p.video_id = row.at("rank1").get<std::string>();
            p.score = row.at("rank1_score").get<double>();
            p.start_s = row.at("coarse_start_s").get<double>();
            p.end_s = p.start_s + (rec.gt_end_s - rec.gt_start_s);
            preds.push_back(std::move(p));
        }
        rep.segment = max_segment_f1(preds, truths);
        rep.has_segment = true;
    }
    if (tables.count(3)) {
        std::vector<double> errors;
        for (const auto& row : rows) {
            if (row.at("align_offset_s").is_null()) continue;
            const auto& qid = row.at("query_id").get_ref<const std::string&>();
            auto it = by_query.find(qid);
            if (it == by_query.end())
                throw validation_error("predictions mention unknown query " + qid);
            errors.push_back(
                std::abs(row.at("align_offset_s").get<double>() - it->second->gt_start_s));
        }
        if (!errors.empty()) {
            rep.align_thresholds_s = align_thresholds;
            rep.align_accuracy = alignment_accuracy(errors, align_thresholds);
        }
    }
    if (tables.count(4) || tables.count(5)) {
        if (shift_json_path.empty())
            throw param_error("eval: tables 4/5 need --shift-json with detector shift stats");
        json rows4 = json::parse(io::read_text_file(shift_json_path));
        for (const auto& r : rows4) {
            ShiftRow sr;
            sr.shift = r.at("shift").get<int>();
            sr.iou = r.at("iou").get<double>();
            sr.grad = r.at("grad").get<double>();
            rep.shift_table.push_back(sr);
        }
    }
    rep.validate();
    return rep;
}

int cmd_eval(const std::string& predictions, const std::string& manifest_path,
             const std::string& tables_arg, const std::vector<double>& align_thresholds,
             const std::string& shift_json, const std::string& out_json,
             const std::string& out_csv) {
    auto rows = read_jsonl(predictions);
    if (rows.empty()) throw validation_error("predictions file has no rows");
    for (const auto& r : rows) validate_report_line(r);
    std::vector<ManipulationRecord> records;
    try {
        records = load_manifest(manifest_path);
    } catch (const validation_error& e) {
        throw cli_exit{3, e.what()};
    }
    std::set<int> tables;
    std::stringstream ss(tables_arg);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.empty()) continue;
        int t = std::stoi(tok);
        if (t < 1 || t > 5) throw param_error("eval: tables must be within 1..5");
        tables.insert(t);
    }
    if (tables.empty()) throw param_error("eval: no tables selected");
    auto rep = report_from_rows(rows, records, tables, align_thresholds, shift_json);
    std::string text = rep.to_json().dump(2) + "\n";
    if (!out_json.empty()) io::write_text_file(out_json, text);
    if (!out_csv.empty()) io::write_text_file(out_csv, rep.to_csv());
    std::cout << text;
    return 0;
}

int cmd_pipeline(const std::string& data_dir, std::string index_path, const std::string& out_dir,
                 bool force, const PipelineConfig& cfg) {
    fs::path data(data_dir);
    std::vector<ManipulationRecord> records;
    try {
        records = load_manifest((data / "manifest.json").string());
    } catch (const validation_error& e) {
        throw cli_exit{3, e.what()};
    } catch (const io_error& e) {
        throw cli_exit{3, e.what()};
    }
    if (records.empty()) throw cli_exit{3, "manifest has no entries"};

    if (index_path.empty()) index_path = (data / "index.vdri").string();
    if (!fs::exists(index_path)) throw cli_exit{2, "index file missing: " + index_path};
    auto stage = RetrievalStage::open(index_path, cfg);
    if (stage.index.config_hash != cfg.index_hash()) {
        std::string msg = "index was built under configuration " +
                          hash_hex(stage.index.config_hash) + " but this run resolves to " +
                          hash_hex(cfg.index_hash());
        if (!force) throw cli_exit{4, msg + " (pass --force to override)"};
        std::cerr << "warning: " << msg << "; continuing under --force\n";
    }

    std::optional<AlignModel<float>> align_model;
    if (!cfg.align_checkpoint.empty()) {
        if (!fs::exists(cfg.align_checkpoint))
            throw cli_exit{2, "alignment checkpoint missing: " + cfg.align_checkpoint};
        align_model.emplace(load_align<float>(cfg.align_checkpoint));
    }
    std::optional<ComparatorModel<float>> differ_model;
    if (!cfg.differ_checkpoint.empty()) {
        if (!fs::exists(cfg.differ_checkpoint))
            throw cli_exit{2, "differencing checkpoint missing: " + cfg.differ_checkpoint};
        differ_model.emplace(load_differ<float>(cfg.differ_checkpoint));
        differ_model->frozen_stats = true;
    }

    // frame features for the retrieved candidate: the corpus layout first,
    // then the manifest's own pointer when it matches the retrieved id
    auto candidate_frames = [&](const std::string& id,
                                const ManipulationRecord& rec) -> std::optional<VideoFeatures> {
        fs::path corpus_file = data / "corpus" / (id + ".frames.vdrf");
        if (fs::exists(corpus_file)) return load_descriptors(corpus_file.string());
        if (id == rec.original_id && !rec.original_frame_features.empty()) {
            fs::path p = data / rec.original_frame_features;
            if (fs::exists(p)) return load_descriptors(p.string());
        }
        return std::nullopt;
    };

    fs::create_directories(out_dir);
    std::vector<QueryOutcome> outcomes(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& rec = records[i];
        fs::path qpath = data / rec.query_features;
        auto q = load_features_checked(qpath.string());
        q.video_id = rec.query_id;
        auto out = stage.run(q, rec.original_id);

        if (align_model && out.coarse_valid && !out.ranking.empty() &&
            !rec.query_frame_features.empty()) {
            fs::path qf = data / rec.query_frame_features;
            if (fs::exists(qf)) {
                auto qframes = load_descriptors(qf.string());
                if (qframes.frame_features.dim != align_model->cfg.feat_dim)
                    throw cli_exit{4, rec.query_id + ": frame dimension " +
                                          std::to_string(qframes.frame_features.dim) +
                                          " does not match the alignment model's " +
                                          std::to_string(align_model->cfg.feat_dim)};
                auto cand = candidate_frames(out.ranking.front().video_id, rec);
                if (cand && cand->frame_features.size() >= align_model->cfg.window &&
                    qframes.frame_features.size() >= align_model->cfg.window) {
                    auto res = align_videos(*align_model, qframes, *cand, out.coarse_start_s,
                                            cfg.margin_s);
                    out.align_offset_s = res.offset_s;
                    out.align_valid = true;
                }
            }
        }

        if (differ_model && !rec.query_clip.empty() && !rec.original_clip.empty()) {
            auto qclip = load_clip((data / rec.query_clip).string());
            auto oclip = load_clip((data / rec.original_clip).string());
            if (qclip.c != differ_model->cfg.in_channels)
                throw cli_exit{4, rec.query_id + ": clip channels " + std::to_string(qclip.c) +
                                      " do not match the differencing model's " +
                                      std::to_string(differ_model->cfg.in_channels)};
            auto masks = diff_clip(*differ_model, qclip, oclip, 0, cfg.threshold);
            out.mask_frames_total = masks.frames;
            for (std::size_t t = 0; t < masks.frames; ++t) {
                const auto* p = masks.data.data() + t * masks.height * masks.width;
                for (std::size_t k = 0; k < masks.height * masks.width; ++k)
                    if (p[k]) {
                        ++out.masked_frames;
                        break;
                    }
            }
            io::write_grid_u8((fs::path(out_dir) / (rec.query_id + ".masks.vdrg")).string(),
                              masks);
            if (!rec.mask_path.empty()) {
                auto gt = io::read_grid_u8((data / rec.mask_path).string());
                out.mean_iou = mean_iou(masks, gt);
            }
        }
        outcomes[i] = std::move(out);
    }

    // fixed-order writer: rows land in manifest order
    std::uint64_t chash = cfg.hash();
    std::string jsonl;
    for (const auto& out : outcomes) {
        json row = outcome_to_json(out, chash);
        validate_report_line(row);
        jsonl += row.dump() + "\n";
    }
    io::write_text_file((fs::path(out_dir) / "report.jsonl").string(), jsonl);

    EvalReport rep;
    std::size_t r1 = 0, r5 = 0;
    std::vector<double> coarse_errs;
    std::vector<double> align_errs;
    std::map<std::string, const ManipulationRecord*> by_query;
    for (const auto& r : records) by_query[r.query_id] = &r;
    for (const auto& out : outcomes) {
        r1 += out.truth_rank == 1;
        r5 += out.truth_rank >= 1 && out.truth_rank <= 5;
        const auto& rec = *by_query.at(out.query_id);
        if (out.coarse_valid && out.truth_rank == 1)
            coarse_errs.push_back(std::abs(out.coarse_start_s - rec.gt_start_s));
        if (out.align_valid) align_errs.push_back(std::abs(out.align_offset_s - rec.gt_start_s));
    }
    rep.recall_at_1 = static_cast<double>(r1) / static_cast<double>(outcomes.size());
    rep.recall_at_5 = static_cast<double>(r5) / static_cast<double>(outcomes.size());
    if (!align_errs.empty()) {
        rep.align_thresholds_s = {0.5, 1.0, 3.0, 10.0};
        rep.align_accuracy = alignment_accuracy(align_errs, rep.align_thresholds_s);
    }
    rep.validate();
    io::write_text_file((fs::path(out_dir) / "report.json").string(),
                        rep.to_json().dump(2) + "\n");
    io::write_text_file((fs::path(out_dir) / "summary.csv").string(), rep.to_csv());

    double med_coarse = -1.0;
    if (!coarse_errs.empty()) {
        std::sort(coarse_errs.begin(), coarse_errs.end());
        std::size_t n = coarse_errs.size();
        med_coarse = n % 2 ? coarse_errs[n / 2]
                           : 0.5 * (coarse_errs[n / 2 - 1] + coarse_errs[n / 2]);
    }
    std::cout << "queries " << outcomes.size() << "  rank1 " << rep.recall_at_1 << "  rank5 "
              << rep.recall_at_5 << "  median_coarse_err_s "
              << (med_coarse < 0 ? std::string("n/a") : std::to_string(med_coarse))
              << "  config " << hash_hex(chash) << "\n";
    std::cout << "reports under " << out_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"video provenance: retrieval, alignment, and manipulation localization"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic corpus with query manifest");
    std::string synth_out = "data";
    SynthPlan plan;
    bool no_frames = false;
    synth->add_option("--out", synth_out, "output directory");
    synth->add_option("--videos", plan.videos, "corpus size");
    synth->add_option("--queries", plan.queries, "query count");
    synth->add_option("--chunks-min", plan.chunks_min, "");
    synth->add_option("--chunks-max", plan.chunks_max, "");
    synth->add_option("--dim", plan.dim, "chunk descriptor dimension");
    synth->add_option("--smoothness", plan.smoothness, "temporal correlation of the walk");
    synth->add_option("--frame-dim", plan.frame_dim, "frame descriptor dimension");
    synth->add_flag("--no-frames", no_frames, "skip frame-level descriptors");
    synth->add_option("--query-noise", plan.query_noise, "benign noise level on queries");
    synth->add_option("--query-min-s", plan.query_min_s, "");
    synth->add_option("--query-max-s", plan.query_max_s, "");
    synth->add_option("--seed", plan.seed, "");

    // build-index
    auto* build = app.add_subcommand("build-index", "chunk a corpus and build the search index");
    std::string build_data = "data", build_out;
    ConfigFlags build_cfg;
    build->add_option("--data", build_data, "dataset directory (holds corpus/)");
    build->add_option("--out", build_out, "index output path (default <data>/index.vdri)");
    build_cfg.attach(build, {"policy", "nlist", "m_sub", "bits", "seed"});

    // query
    auto* querycmd = app.add_subcommand("query", "rank corpus videos against one query");
    std::string q_index, q_features, q_truth;
    ConfigFlags query_cfg;
    querycmd->add_option("--index", q_index, "index file")->required();
    querycmd->add_option("--features", q_features, "query descriptor file")->required();
    querycmd->add_option("--truth", q_truth, "known source id, for rank reporting");
    query_cfg.attach(querycmd, {"r", "nprobe", "lambda", "mode", "exact"});

    // align
    auto* aligncmd = app.add_subcommand("align", "frame-level alignment of a query to a source");
    std::string a_ckpt, a_query, a_orig, a_out;
    double a_start = 0.0, a_margin = 15.0;
    aligncmd->add_option("--checkpoint", a_ckpt, "alignment model checkpoint")->required();
    aligncmd->add_option("--query", a_query, "query frame descriptors")->required();
    aligncmd->add_option("--original", a_orig, "candidate frame descriptors")->required();
    aligncmd->add_option("--start", a_start, "coarse start estimate in seconds");
    aligncmd->add_option("--margin-s", a_margin, "search margin around the estimate");
    aligncmd->add_option("--out", a_out, "write the report here as well");

    // diff
    auto* diffcmd = app.add_subcommand("diff", "localize manipulated regions between two clips");
    std::string d_ckpt, d_query, d_orig, d_mask, d_grid;
    double d_threshold = 0.5;
    std::size_t d_shift = 0;
    bool d_baseline = false;
    diffcmd->add_option("--checkpoint", d_ckpt, "differencing model checkpoint");
    diffcmd->add_option("--query", d_query, "query clip")->required();
    diffcmd->add_option("--original", d_orig, "reference clip")->required();
    diffcmd->add_option("--threshold", d_threshold, "binarization threshold in (0,1)");
    diffcmd->add_option("--shift", d_shift, "offset the reference by this many frames");
    diffcmd->add_option("--mask", d_mask, "ground-truth mask grid for scoring");
    diffcmd->add_option("--out-grid", d_grid, "write predicted masks here");
    diffcmd->add_flag("--baseline", d_baseline, "use the pixel-difference baseline");

    // eval
    auto* evalcmd = app.add_subcommand("eval", "aggregate a predictions file into a report");
    std::string e_pred, e_manifest, e_tables = "1,3", e_shift, e_json, e_csv;
    std::vector<double> e_thresholds = {0.5, 1.0, 3.0, 10.0};
    evalcmd->add_option("--predictions", e_pred, "report.jsonl from a pipeline run")->required();
    evalcmd->add_option("--manifest", e_manifest, "ground-truth manifest")->required();
    evalcmd->add_option("--tables", e_tables, "comma list of report sections (1..5)");
    evalcmd->add_option("--align-thresholds", e_thresholds, "accuracy thresholds in seconds");
    evalcmd->add_option("--shift-json", e_shift, "shift stats for sections 4/5");
    evalcmd->add_option("--out-json", e_json, "");
    evalcmd->add_option("--out-csv", e_csv, "");

    // pipeline
    auto* pipe = app.add_subcommand("pipeline", "retrieve, align, and diff every manifest query");
    std::string p_data = "data", p_index, p_out = "out";
    bool p_force = false;
    ConfigFlags pipe_cfg;
    pipe->add_option("--data", p_data, "dataset directory");
    pipe->add_option("--index", p_index, "index file (default <data>/index.vdri)");
    pipe->add_option("--out", p_out, "report directory");
    pipe->add_flag("--force", p_force, "run despite a configuration hash mismatch");
    pipe_cfg.attach(pipe, {"policy", "nlist", "m_sub", "bits", "seed", "r", "nprobe", "lambda",
                           "mode", "exact", "align_checkpoint", "margin_s", "differ_checkpoint",
                           "threshold"});

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) {
            plan.frame_features = !no_frames;
            return cmd_synth(synth_out, plan);
        }
        if (build->parsed()) {
            if (build_out.empty()) build_out = (fs::path(build_data) / "index.vdri").string();
            return cmd_build_index(build_data, build_out, build_cfg.resolve(build));
        }
        if (querycmd->parsed()) {
            if (!fs::exists(q_index)) throw cli_exit{2, "index file missing: " + q_index};
            return cmd_query(q_index, q_features, q_truth, query_cfg.resolve(querycmd));
        }
        if (aligncmd->parsed()) return cmd_align(a_ckpt, a_query, a_orig, a_start, a_margin, a_out);
        if (diffcmd->parsed())
            return cmd_diff(d_ckpt, d_query, d_orig, d_threshold, d_shift, d_mask, d_grid,
                            d_baseline);
        if (evalcmd->parsed())
            return cmd_eval(e_pred, e_manifest, e_tables, e_thresholds, e_shift, e_json, e_csv);
        if (pipe->parsed())
            return cmd_pipeline(p_data, p_index, p_out, p_force, pipe_cfg.resolve(pipe));
    } catch (const cli_exit& e) {
        std::cerr << "error: " << e.msg << "\n";
        return e.code;
    } catch (const mismatch_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
