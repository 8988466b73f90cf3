#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <unordered_map>
#include <vector>

#include "vader/chunking.hpp"
#include "vader/core.hpp"
#include "vader/io.hpp"
#include "vader/kmeans.hpp"

namespace vader {

// Search output: m query rows by r ranked hits. Rows shorter than r are
// padded with an empty video id and -inf similarity.
struct HitTables {
    std::size_t m = 0, r = 0;
    std::vector<std::string> ids;  // m*r, "" = not retrieved
    std::vector<float> sims;       // -inf padding
    std::vector<double> times;     // start_s of each hit

    const std::string& id(std::size_t i, std::size_t k) const { return ids[i * r + k]; }
    float sim(std::size_t i, std::size_t k) const { return sims[i * r + k]; }
    double time(std::size_t i, std::size_t k) const { return times[i * r + k]; }
};

inline constexpr float kNoHit = -std::numeric_limits<float>::infinity();

// Inverted-file index with product-quantized residuals. Raw vectors are kept
// alongside the codes so exact mode can serve as its own oracle.
class VIndex {
public:
    struct Config {
        std::size_t nlist = 64;
        std::size_t m_sub = 8;
        std::size_t bits = 8;
        std::uint64_t seed = 0;
    };

    void train(const Rowsf& sample, const Config& cfg) {
        if (sample.size() == 0) throw param_error("index train: empty sample");
        if (cfg.bits < 1 || cfg.bits > 8)
            throw param_error("index train: bits must be in [1,8]");
        if (cfg.nlist < 1) throw param_error("index train: nlist must be >= 1");
        if (cfg.m_sub < 1 || sample.dim % cfg.m_sub != 0)
            throw param_error("index train: dim must be divisible by m_sub");
        cfg_ = cfg;
        dim_ = sample.dim;
        dsub_ = dim_ / cfg.m_sub;
        ksub_ = std::size_t(1) << cfg.bits;
        small_sample_ = sample.size() < 39 * cfg.nlist || sample.size() < ksub_;

        Rng root(cfg.seed);
        coarse_ = kmeans(sample, cfg.nlist, root.derive(1).next_u64()).centroids;

        // residuals against the assigned coarse centroid
        Rowsf residuals(sample.size(), dim_);
        for (std::size_t i = 0; i < sample.size(); ++i) {
            std::uint32_t c = nearest_centroid(coarse_, sample[i], dim_);
            const float* cent = coarse_[c];
            const float* src = sample[i];
            float* dst = residuals[i];
            for (std::size_t j = 0; j < dim_; ++j) dst[j] = src[j] - cent[j];
        }
        pq_.assign(cfg.m_sub, Rowsf());
        Rowsf sub(residuals.size(), dsub_);
        for (std::size_t s = 0; s < cfg.m_sub; ++s) {
            for (std::size_t i = 0; i < residuals.size(); ++i)
                std::copy(residuals[i] + s * dsub_, residuals[i] + (s + 1) * dsub_, sub[i]);
            pq_[s] = kmeans(sub, ksub_, root.derive(100 + s).next_u64()).centroids;
        }
        lists_.assign(cfg.nlist, InvList{});
        raw_ = Rowsf();
        raw_.dim = dim_;
        ids_.clear();
        video_ord_.clear();
        durations_.clear();
        trained_ = true;
    }

    bool trained() const { return trained_; }
    std::size_t dim() const { return dim_; }
    std::size_t size() const { return raw_.size(); }
    const Config& config() const { return cfg_; }
    bool small_sample_warning() const { return small_sample_; }

    std::vector<std::size_t> list_sizes() const {
        std::vector<std::size_t> out;
        out.reserve(lists_.size());
        for (const auto& l : lists_) out.push_back(l.raw_row.size());
        return out;
    }

    std::size_t add(const ChunkedVideo& cv) {
        if (!trained_) throw validation_error("index add: not trained");
        if (cv.size() == 0) return 0;
        if (cv.descriptors.dim != dim_)
            throw mismatch_error("index add: descriptor dimension " +
                                 std::to_string(cv.descriptors.dim) + " != index dimension " +
                                 std::to_string(dim_));
        std::uint32_t ord = intern_video(cv.video_id);
        std::vector<float> residual(dim_);
        for (std::size_t e = 0; e < cv.size(); ++e) {
            const float* v = cv.descriptors[e];
            std::uint32_t c = nearest_centroid(coarse_, v, dim_);
            const float* cent = coarse_[c];
            for (std::size_t j = 0; j < dim_; ++j) residual[j] = v[j] - cent[j];
            InvList& list = lists_[c];
            list.video_ord.push_back(ord);
            list.entry_ord.push_back(static_cast<std::uint32_t>(e));
            list.start_s.push_back(cv.entries[e].start_s);
            list.end_s.push_back(cv.entries[e].end_s);
            list.raw_row.push_back(raw_.size());
            for (std::size_t s = 0; s < cfg_.m_sub; ++s)
                list.codes.push_back(static_cast<std::uint8_t>(
                    nearest_centroid(pq_[s], residual.data() + s * dsub_, dsub_)));
            raw_.push_row(v);
            durations_[ord] = std::max(durations_[ord], cv.entries[e].end_s);
        }
        return cv.size();
    }

    // Runs a vector through coarse assignment + PQ encode/decode. Exposes the
    // quantizer so reconstruction quality is measurable from outside.
    void encode_decode(const float* v, float* out) const {
        if (!trained_) throw validation_error("index: not trained");
        std::uint32_t c = nearest_centroid(coarse_, v, dim_);
        const float* cent = coarse_[c];
        std::vector<float> residual(dim_);
        for (std::size_t j = 0; j < dim_; ++j) residual[j] = v[j] - cent[j];
        for (std::size_t s = 0; s < cfg_.m_sub; ++s) {
            std::uint32_t code = nearest_centroid(pq_[s], residual.data() + s * dsub_, dsub_);
            const float* sub = pq_[s][code];
            for (std::size_t j = 0; j < dsub_; ++j) out[s * dsub_ + j] = cent[s * dsub_ + j] + sub[j];
        }
    }

    double duration(const std::string& video_id) const {
        auto it = video_ord_.find(video_id);
        if (it == video_ord_.end()) throw param_error("index: unknown video " + video_id);
        return durations_.at(it->second);
    }
    bool has_video(const std::string& video_id) const { return video_ord_.count(video_id) > 0; }

    HitTables search(const Rowsf& queries, std::size_t r, std::size_t nprobe, bool exact) const {
        if (!trained_ || raw_.size() == 0) throw validation_error("index search: index is empty");
        if (queries.dim != dim_)
            throw mismatch_error("index search: query dimension " + std::to_string(queries.dim) +
                                 " != index dimension " + std::to_string(dim_));
        if (r < 1) throw param_error("index search: r must be >= 1");
        if (nprobe < 1 || nprobe > cfg_.nlist)
            throw param_error("index search: nprobe must be in [1, nlist]");
        if (exact) nprobe = cfg_.nlist;

        HitTables out;
        out.m = queries.size();
        out.r = r;
        out.ids.assign(out.m * r, std::string());
        out.sims.assign(out.m * r, kNoHit);
        out.times.assign(out.m * r, 0.0);

        struct Hit {
            float sim;
            std::uint64_t raw_row;  // stable tie-break
            std::uint32_t list, pos;
        };
        std::vector<Hit> hits;
        std::vector<std::pair<float, std::uint32_t>> probe(cfg_.nlist);
        std::vector<float> lut(cfg_.m_sub * ksub_);

        for (std::size_t q = 0; q < queries.size(); ++q) {
            const float* qv = queries[q];
            for (std::size_t c = 0; c < cfg_.nlist; ++c)
                probe[c] = {l2_sq(coarse_[c], qv, dim_), static_cast<std::uint32_t>(c)};
            std::partial_sort(probe.begin(), probe.begin() + static_cast<std::ptrdiff_t>(nprobe),
                              probe.end());

            if (!exact)
                for (std::size_t s = 0; s < cfg_.m_sub; ++s)
                    for (std::size_t k = 0; k < ksub_; ++k)
                        lut[s * ksub_ + k] = dot(qv + s * dsub_, pq_[s][k], dsub_);

            hits.clear();
            for (std::size_t p = 0; p < nprobe; ++p) {
                std::uint32_t li = probe[p].second;
                const InvList& list = lists_[li];
                const std::size_t n = list.raw_row.size();
                if (n == 0) continue;
                if (exact) {
                    for (std::size_t e = 0; e < n; ++e)
                        hits.push_back({dot(qv, raw_[list.raw_row[e]], dim_), list.raw_row[e],
                                        li, static_cast<std::uint32_t>(e)});
                } else {
                    float base = dot(qv, coarse_[li], dim_);
                    const std::uint8_t* codes = list.codes.data();
                    for (std::size_t e = 0; e < n; ++e) {
                        float est = base;
                        const std::uint8_t* code = codes + e * cfg_.m_sub;
                        for (std::size_t s = 0; s < cfg_.m_sub; ++s)
                            est += lut[s * ksub_ + code[s]];
                        hits.push_back({est, list.raw_row[e], li, static_cast<std::uint32_t>(e)});
                    }
                }
            }
            std::size_t take = std::min(r, hits.size());
            std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(take),
                              hits.end(), [](const Hit& a, const Hit& b) {
                                  if (a.sim != b.sim) return a.sim > b.sim;
                                  return a.raw_row < b.raw_row;
                              });
            for (std::size_t k = 0; k < take; ++k) {
                const Hit& h = hits[k];
                const InvList& list = lists_[h.list];
                out.ids[q * r + k] = ids_[list.video_ord[h.pos]];
                out.sims[q * r + k] = h.sim;
                out.times[q * r + k] = list.start_s[h.pos];
            }
        }
        return out;
    }

    ChunkingPolicy policy;          // replayed on queries
    std::uint64_t config_hash = 0;  // pipeline configuration fingerprint

    void save(const std::string& path) const {
        if (!trained_) throw validation_error("index save: not trained");
        io::BinWriter w(path);
        w.magic("VDRI");
        w.u32(1);
        policy.serialize(w);
        w.u64(config_hash);
        w.u32(static_cast<std::uint32_t>(dim_));
        w.u32(static_cast<std::uint32_t>(cfg_.nlist));
        w.u32(static_cast<std::uint32_t>(cfg_.m_sub));
        w.u32(static_cast<std::uint32_t>(cfg_.bits));
        w.u64(cfg_.seed);
        w.u8(small_sample_ ? 1 : 0);
        w.span(coarse_.data.data(), coarse_.data.size());
        for (const auto& cb : pq_) w.span(cb.data.data(), cb.data.size());
        w.u64(ids_.size());
        for (const auto& id : ids_) w.str(id);
        for (const auto& [ord, dur] : sorted_durations()) {
            (void)ord;
            w.f64(dur);
        }
        w.u64(raw_.size());
        w.span(raw_.data.data(), raw_.data.size());
        for (const auto& list : lists_) {
            const std::size_t n = list.raw_row.size();
            w.u64(n);
            w.span(list.video_ord.data(), n);
            w.span(list.entry_ord.data(), n);
            w.span(list.start_s.data(), n);
            w.span(list.end_s.data(), n);
            w.span(list.raw_row.data(), n);
            w.span(list.codes.data(), n * cfg_.m_sub);
        }
        w.finish_with_crc();
    }

    static VIndex load(const std::string& path) {
        io::BinReader r(path);
        r.expect_magic("VDRI", "index file");
        if (r.u32() != 1) throw io_error("unsupported index version in " + path);
        VIndex ix;
        ix.policy = ChunkingPolicy::deserialize(r);
        ix.config_hash = r.u64();
        ix.dim_ = r.u32();
        ix.cfg_.nlist = r.u32();
        ix.cfg_.m_sub = r.u32();
        ix.cfg_.bits = r.u32();
        ix.cfg_.seed = r.u64();
        ix.small_sample_ = r.u8() != 0;
        ix.dsub_ = ix.dim_ / ix.cfg_.m_sub;
        ix.ksub_ = std::size_t(1) << ix.cfg_.bits;
        ix.coarse_ = Rowsf(ix.cfg_.nlist, ix.dim_);
        r.span(ix.coarse_.data.data(), ix.coarse_.data.size());
        ix.pq_.assign(ix.cfg_.m_sub, Rowsf());
        for (auto& cb : ix.pq_) {
            cb = Rowsf(ix.ksub_, ix.dsub_);
            r.span(cb.data.data(), cb.data.size());
        }
        std::uint64_t nvid = r.u64();
        ix.ids_.resize(nvid);
        for (auto& id : ix.ids_) id = r.str();
        for (std::uint32_t i = 0; i < nvid; ++i) {
            ix.durations_[i] = r.f64();
            ix.video_ord_[ix.ids_[i]] = i;
        }
        std::uint64_t nraw = r.u64();
        ix.raw_ = Rowsf(static_cast<std::size_t>(nraw), ix.dim_);
        r.span(ix.raw_.data.data(), ix.raw_.data.size());
        ix.lists_.assign(ix.cfg_.nlist, InvList{});
        for (auto& list : ix.lists_) {
            std::size_t n = static_cast<std::size_t>(r.u64());
            list.video_ord.resize(n);
            list.entry_ord.resize(n);
            list.start_s.resize(n);
            list.end_s.resize(n);
            list.raw_row.resize(n);
            list.codes.resize(n * ix.cfg_.m_sub);
            r.span(list.video_ord.data(), n);
            r.span(list.entry_ord.data(), n);
            r.span(list.start_s.data(), n);
            r.span(list.end_s.data(), n);
            r.span(list.raw_row.data(), n);
            r.span(list.codes.data(), n * ix.cfg_.m_sub);
        }
        r.verify_crc();
        ix.trained_ = true;
        return ix;
    }

private:
    struct InvList {
        std::vector<std::uint32_t> video_ord, entry_ord;
        std::vector<double> start_s, end_s;
        std::vector<std::uint64_t> raw_row;
        std::vector<std::uint8_t> codes;  // n * m_sub
    };

    std::uint32_t intern_video(const std::string& id) {
        auto it = video_ord_.find(id);
        if (it != video_ord_.end()) return it->second;
        std::uint32_t ord = static_cast<std::uint32_t>(ids_.size());
        ids_.push_back(id);
        video_ord_[id] = ord;
        durations_[ord] = 0.0;
        return ord;
    }

    std::vector<std::pair<std::uint32_t, double>> sorted_durations() const {
        std::vector<std::pair<std::uint32_t, double>> out;
        out.reserve(ids_.size());
        for (std::uint32_t i = 0; i < ids_.size(); ++i) out.emplace_back(i, durations_.at(i));
        return out;
    }

    Config cfg_;
    std::size_t dim_ = 0, dsub_ = 0, ksub_ = 0;
    bool trained_ = false, small_sample_ = false;
    Rowsf coarse_;
    std::vector<Rowsf> pq_;
    std::vector<InvList> lists_;
    Rowsf raw_;
    std::vector<std::string> ids_;
    std::unordered_map<std::string, std::uint32_t> video_ord_;
    std::unordered_map<std::uint32_t, double> durations_;
};

}  // namespace vader
