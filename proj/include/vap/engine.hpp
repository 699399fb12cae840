#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "vap/aggregation.hpp"
#include "vap/features.hpp"
#include "vap/model.hpp"
#include "vap/tensor.hpp"

namespace vap {

namespace detail {

struct LnRef {
    const float *g, *b;
};
struct AttnRef {
    const float *wq, *bq, *wk, *bk, *wv, *bv, *wo, *bo, *pos;
};
struct FfnRef {
    const float *w1, *b1, *w2, *b2;
};
struct GruRef {
    const float *wz, *uz, *bz, *wr, *ur, *br, *wh, *uh, *bh;
};
struct SelfLayerRef {
    LnRef ln1;
    AttnRef attn;
    LnRef ln2;
    FfnRef ffn;
};
struct CrossLayerRef {
    LnRef ln1;
    AttnRef self_attn;
    LnRef lnq, lnkv;
    AttnRef cross_attn;
    LnRef ln3;
    FfnRef ffn;
};
struct ChannelRef {
    std::vector<SelfLayerRef> self_layers;
    std::vector<CrossLayerRef> cross_layers;
    LnRef final_ln;
};
struct WeightsRef {
    GruRef enc;
    std::array<ChannelRef, 2> ch;
    const float *vap_w, *vap_b;
    std::array<const float*, 2> vad_w, vad_b;
};

inline LnRef bind_ln(const ModelWeights& w, const std::string& p) {
    return {w.ptr(p + "g"), w.ptr(p + "b")};
}
inline AttnRef bind_attn(const ModelWeights& w, const std::string& p) {
    return {w.ptr(p + "wq"), w.ptr(p + "bq"), w.ptr(p + "wk"), w.ptr(p + "bk"),
            w.ptr(p + "wv"), w.ptr(p + "bv"), w.ptr(p + "wo"), w.ptr(p + "bo"),
            w.ptr(p + "pos")};
}
inline FfnRef bind_ffn(const ModelWeights& w, const std::string& p) {
    return {w.ptr(p + "w1"), w.ptr(p + "b1"), w.ptr(p + "w2"), w.ptr(p + "b2")};
}

inline WeightsRef bind(const ModelWeights& w) {
    WeightsRef r;
    r.enc = {w.ptr("enc.wz"), w.ptr("enc.uz"), w.ptr("enc.bz"),
             w.ptr("enc.wr"), w.ptr("enc.ur"), w.ptr("enc.br"),
             w.ptr("enc.wh"), w.ptr("enc.uh"), w.ptr("enc.bh")};
    for (int c = 0; c < 2; ++c) {
        auto& ch = r.ch[c];
        for (int l = 0; l < w.config.n_self_layers; ++l) {
            const auto p = self_prefix(c, l);
            ch.self_layers.push_back({bind_ln(w, p + "ln1."), bind_attn(w, p + "attn."),
                                      bind_ln(w, p + "ln2."), bind_ffn(w, p + "ffn.")});
        }
        for (int l = 0; l < w.config.n_cross_layers; ++l) {
            const auto p = cross_prefix(c, l);
            ch.cross_layers.push_back(
                {bind_ln(w, p + "ln1."), bind_attn(w, p + "self."),
                 bind_ln(w, p + "lnq."), bind_ln(w, p + "lnkv."),
                 bind_attn(w, p + "cross."), bind_ln(w, p + "ln3."),
                 bind_ffn(w, p + "ffn.")});
        }
        ch.final_ln = bind_ln(w, "ch" + std::to_string(c) + ".final_ln.");
    }
    r.vap_w = w.ptr("head.vap.w");
    r.vap_b = w.ptr("head.vap.b");
    r.vad_w = {w.ptr("head.vad0.w"), w.ptr("head.vad1.w")};
    r.vad_b = {w.ptr("head.vad0.b"), w.ptr("head.vad1.b")};
    return r;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Activation tape for training. Appended frame by frame during forward; the
// backward pass walks it in reverse (attention softmax rows are recomputed
// rather than stored).
// ---------------------------------------------------------------------------

struct LnTape {
    std::vector<double> mean, rstd; // per frame
    std::vector<double> out;        // T x d
};
struct AttnSiteTape {
    std::vector<double> s_in; // residual-stream input, T x d
    LnTape ln;
    std::vector<double> q, k, v, m; // T x d each
};
struct CrossSiteTape {
    std::vector<double> s_in; // own channel's input (kv source is the peer's s_in)
    LnTape lnq, lnkv;
    std::vector<double> q, k, v, m;
};
struct FfnTape {
    std::vector<double> s_in;
    LnTape ln;
    std::vector<double> pre1; // T x ffn_dim, pre-activation
};
struct GruTape {
    std::vector<double> z, r, hh, h; // T x d each
};
struct ChannelTape {
    GruTape gru;
    std::vector<AttnSiteTape> self_attn; // n_self_layers
    std::vector<FfnTape> self_ffn;
    std::vector<AttnSiteTape> cross_self; // n_cross_layers
    std::vector<CrossSiteTape> cross;
    std::vector<FfnTape> cross_ffn;
    std::vector<double> final_in; // T x d
    LnTape final_ln;              // out rows are the per-channel y vectors
};
struct Tape {
    std::array<ChannelTape, 2> ch;
    std::vector<double> dist; // T x 256
    std::vector<double> vad;  // T x 2
    int n_frames = 0;
};

/// Model outputs over a frame sequence.
struct ForwardOutput {
    std::size_t n_frames = 0;
    std::vector<double> dist; // T x 256, each row a normalized distribution
    std::vector<double> vad;  // T x 2, per-channel voiced probability

    StateDistribution state_distribution(std::size_t t) const {
        StateDistribution d;
        for (int i = 0; i < kNumStates; ++i) d.probs[i] = dist[t * kNumStates + i];
        return d;
    }
};

/// Frame-at-a-time inference core. Holds the recurrent encoder state and one
/// key/value ring per attention site, sized to the context window, so memory
/// stays bounded no matter how long the stream runs. The batch forward() is
/// this same loop, which keeps streaming and whole-sequence outputs
/// bit-identical.
class InferenceEngine {
public:
    InferenceEngine(const ModelWeights& weights, int context_frames,
                    Tape* tape = nullptr)
        : cfg_(weights.config), ref_(detail::bind(weights)), ctx_(context_frames),
          tape_(tape) {
        cfg_.validate();
        weights.check_finite();
        if (context_frames < 1 || context_frames > cfg_.max_context_frames)
            throw DomainError("context_frames must be in [1, " +
                              std::to_string(cfg_.max_context_frames) + "], got " +
                              std::to_string(context_frames));
        const int d = cfg_.hidden_dim;
        for (int c = 0; c < 2; ++c) {
            h_[c].assign(d, 0.0);
            self_rings_[c].resize(cfg_.n_self_layers);
            cross_self_rings_[c].resize(cfg_.n_cross_layers);
            cross_rings_[c].resize(cfg_.n_cross_layers);
            for (auto& r : self_rings_[c]) r.alloc(ctx_, d);
            for (auto& r : cross_self_rings_[c]) r.alloc(ctx_, d);
            for (auto& r : cross_rings_[c]) r.alloc(ctx_, d);
            cur_[c].assign(d, 0.0);
            stage_a_[c].assign(d, 0.0);
            y_[c].assign(d, 0.0);
        }
        ln_buf_.assign(d, 0.0);
        q_buf_.assign(d, 0.0);
        k_buf_.assign(d, 0.0);
        v_buf_.assign(d, 0.0);
        m_buf_.assign(d, 0.0);
        o_buf_.assign(d, 0.0);
        gru_scratch_.assign(static_cast<std::size_t>(d) * 5, 0.0);
        ffn_buf_.assign(cfg_.ffn_dim(), 0.0);
        ffn_act_.assign(cfg_.ffn_dim(), 0.0);
        score_buf_.assign(ctx_, 0.0);
        concat_.assign(static_cast<std::size_t>(2) * d, 0.0);
        logits_.assign(kNumStates, 0.0);
        if (tape_) init_tape();
    }

    struct FrameOutput {
        std::array<double, kNumStates> dist;
        std::array<double, 2> vad;
    };

    /// Process one frame of per-channel features (feature_dim doubles each).
    FrameOutput step(const double* f0, const double* f1) {
        const double* feats[2] = {f0, f1};
        for (int c = 0; c < 2; ++c)
            for (int i = 0; i < cfg_.feature_dim; ++i)
                if (!std::isfinite(feats[c][i]))
                    throw DomainError("non-finite feature at frame " +
                                      std::to_string(t_));
        for (int c = 0; c < 2; ++c) gru_step(c, feats[c]);
        return attention_step();
    }

    /// Test hook: run only the attention stack on externally supplied encoder
    /// outputs (hidden_dim doubles per channel). Not usable while taping.
    FrameOutput step_encoded(const double* e0, const double* e1) {
        if (tape_) throw DomainError("step_encoded does not record a tape");
        const int d = cfg_.hidden_dim;
        for (int i = 0; i < d; ++i) {
            h_[0][i] = e0[i];
            h_[1][i] = e1[i];
        }
        return attention_step();
    }

    std::int64_t frames_seen() const { return t_; }
    int context_frames() const { return ctx_; }

    /// Frames of per-site history currently retained (bounded by the context).
    std::int64_t retained_frames() const { return std::min<std::int64_t>(t_, ctx_); }

    void reset() {
        for (int c = 0; c < 2; ++c) {
            std::fill(h_[c].begin(), h_[c].end(), 0.0);
            for (auto& r : self_rings_[c]) r.clear();
            for (auto& r : cross_self_rings_[c]) r.clear();
            for (auto& r : cross_rings_[c]) r.clear();
        }
        t_ = 0;
    }

private:
    struct Ring {
        std::vector<double> k, v;
        int d = 0;
        void alloc(int ctx, int dim) {
            d = dim;
            k.assign(static_cast<std::size_t>(ctx) * dim, 0.0);
            v.assign(static_cast<std::size_t>(ctx) * dim, 0.0);
        }
        void clear() {
            std::fill(k.begin(), k.end(), 0.0);
            std::fill(v.begin(), v.end(), 0.0);
        }
        double* k_row(std::int64_t frame, int ctx) {
            return k.data() + static_cast<std::size_t>(frame % ctx) * d;
        }
        double* v_row(std::int64_t frame, int ctx) {
            return v.data() + static_cast<std::size_t>(frame % ctx) * d;
        }
    };

    void init_tape() {
        for (int c = 0; c < 2; ++c) {
            tape_->ch[c].self_attn.resize(cfg_.n_self_layers);
            tape_->ch[c].self_ffn.resize(cfg_.n_self_layers);
            tape_->ch[c].cross_self.resize(cfg_.n_cross_layers);
            tape_->ch[c].cross.resize(cfg_.n_cross_layers);
            tape_->ch[c].cross_ffn.resize(cfg_.n_cross_layers);
        }
    }

    static void append(std::vector<double>& dst, const double* src, int n) {
        dst.insert(dst.end(), src, src + n);
    }

    void gru_step(int c, const double* x) {
        const int d = cfg_.hidden_dim;
        const int D = cfg_.feature_dim;
        double* az = gru_scratch_.data();
        double* ar = az + d;
        double* ah = ar + d;
        double* rh = ah + d;
        double* hn = rh + d;
        const auto& e = ref_.enc;
        auto& h = h_[c];

        nn::affine(e.wz, e.bz, d, D, x, az);
        nn::matvec_acc(e.uz, d, d, h.data(), az);
        nn::affine(e.wr, e.br, d, D, x, ar);
        nn::matvec_acc(e.ur, d, d, h.data(), ar);
        for (int i = 0; i < d; ++i) {
            az[i] = nn::sigmoid(az[i]);
            ar[i] = nn::sigmoid(ar[i]);
            rh[i] = ar[i] * h[i];
        }
        nn::affine(e.wh, e.bh, d, D, x, ah);
        nn::matvec_acc(e.uh, d, d, rh, ah);
        for (int i = 0; i < d; ++i) {
            ah[i] = std::tanh(ah[i]);
            hn[i] = (1.0 - az[i]) * h[i] + az[i] * ah[i];
        }
        if (tape_) {
            auto& g = tape_->ch[c].gru;
            append(g.z, az, d);
            append(g.r, ar, d);
            append(g.hh, ah, d);
            append(g.h, hn, d);
        }
        for (int i = 0; i < d; ++i) h[i] = hn[i];
    }

    /// Causal windowed attention with a learned key-side positional table
    /// indexed from the window's left edge. Query frame t attends to frames
    /// (t - ctx, t].
    void attend(const double* q, Ring& ring, const float* pos, double* m) {
        const int d = cfg_.hidden_dim;
        const int H = cfg_.n_heads;
        const int dh = cfg_.head_dim();
        const double inv_sqrt = 1.0 / std::sqrt(double(dh));
        const std::int64_t w = std::min<std::int64_t>(t_ + 1, ctx_);
        const std::int64_t left = t_ - w + 1;

        for (int i = 0; i < d; ++i) m[i] = 0.0;
        for (int h = 0; h < H; ++h) {
            const int off = h * dh;
            const double* qh = q + off;
            for (std::int64_t j = 0; j < w; ++j) {
                const double* kr = ring.k_row(left + j, ctx_) + off;
                const float* pr = pos + static_cast<std::size_t>(j) * d + off;
                double s = 0.0;
                for (int i = 0; i < dh; ++i) s += qh[i] * (kr[i] + double(pr[i]));
                score_buf_[j] = s * inv_sqrt;
            }
            nn::softmax_inplace(score_buf_.data(), static_cast<int>(w));
            for (std::int64_t j = 0; j < w; ++j) {
                const double* vr = ring.v_row(left + j, ctx_) + off;
                const double p = score_buf_[j];
                for (int i = 0; i < dh; ++i) m[off + i] += p * vr[i];
            }
        }
    }

    /// Pre-LN attention block with residual: x + Wo MHA(LN(x)).
    void attn_block(std::vector<double>& x, const detail::LnRef& ln,
                    const detail::AttnRef& a, Ring& ring, AttnSiteTape* tape) {
        const int d = cfg_.hidden_dim;
        double mean, rstd;
        nn::layer_norm(x.data(), d, ln.g, ln.b, ln_buf_.data(), &mean, &rstd);
        nn::affine(a.wk, a.bk, d, d, ln_buf_.data(), k_buf_.data());
        nn::affine(a.wv, a.bv, d, d, ln_buf_.data(), v_buf_.data());
        nn::affine(a.wq, a.bq, d, d, ln_buf_.data(), q_buf_.data());
        double* kr = ring.k_row(t_, ctx_);
        double* vr = ring.v_row(t_, ctx_);
        for (int i = 0; i < d; ++i) {
            kr[i] = k_buf_[i];
            vr[i] = v_buf_[i];
        }
        attend(q_buf_.data(), ring, a.pos, m_buf_.data());
        nn::affine(a.wo, a.bo, d, d, m_buf_.data(), o_buf_.data());
        if (tape) {
            append(tape->s_in, x.data(), d);
            tape->ln.mean.push_back(mean);
            tape->ln.rstd.push_back(rstd);
            append(tape->ln.out, ln_buf_.data(), d);
            append(tape->q, q_buf_.data(), d);
            append(tape->k, k_buf_.data(), d);
            append(tape->v, v_buf_.data(), d);
            append(tape->m, m_buf_.data(), d);
        }
        for (int i = 0; i < d; ++i) x[i] += o_buf_[i];
    }

    /// Pre-LN feed-forward block with residual: x + W2 gelu(W1 LN(x)).
    void ffn_block(std::vector<double>& x, const detail::LnRef& ln,
                   const detail::FfnRef& f, FfnTape* tape) {
        const int d = cfg_.hidden_dim;
        const int fd = cfg_.ffn_dim();
        double mean, rstd;
        nn::layer_norm(x.data(), d, ln.g, ln.b, ln_buf_.data(), &mean, &rstd);
        nn::affine(f.w1, f.b1, fd, d, ln_buf_.data(), ffn_buf_.data());
        for (int i = 0; i < fd; ++i) ffn_act_[i] = nn::gelu(ffn_buf_[i]);
        nn::affine(f.w2, f.b2, d, fd, ffn_act_.data(), o_buf_.data());
        if (tape) {
            append(tape->s_in, x.data(), d);
            tape->ln.mean.push_back(mean);
            tape->ln.rstd.push_back(rstd);
            append(tape->ln.out, ln_buf_.data(), d);
            append(tape->pre1, ffn_buf_.data(), fd);
        }
        for (int i = 0; i < d; ++i) x[i] += o_buf_[i];
    }

    FrameOutput attention_step() {
        const int d = cfg_.hidden_dim;
        for (int c = 0; c < 2; ++c)
            for (int i = 0; i < d; ++i) cur_[c][i] = h_[c][i];

        for (int l = 0; l < cfg_.n_self_layers; ++l) {
            for (int c = 0; c < 2; ++c) {
                auto& lw = ref_.ch[c].self_layers[l];
                auto* ct = tape_ ? &tape_->ch[c] : nullptr;
                attn_block(cur_[c], lw.ln1, lw.attn, self_rings_[c][l],
                           ct ? &ct->self_attn[l] : nullptr);
                ffn_block(cur_[c], lw.ln2, lw.ffn, ct ? &ct->self_ffn[l] : nullptr);
            }
        }

        for (int l = 0; l < cfg_.n_cross_layers; ++l) {
            // Self-attention stage for both channels first; the cross stage
            // reads both channels' post-self states symmetrically.
            for (int c = 0; c < 2; ++c) {
                auto& lw = ref_.ch[c].cross_layers[l];
                auto* ct = tape_ ? &tape_->ch[c] : nullptr;
                attn_block(cur_[c], lw.ln1, lw.self_attn, cross_self_rings_[c][l],
                           ct ? &ct->cross_self[l] : nullptr);
                for (int i = 0; i < d; ++i) stage_a_[c][i] = cur_[c][i];
            }
            // Push this frame's keys/values: channel c attends to the peer
            // channel's states through its own kv layer norm.
            for (int c = 0; c < 2; ++c) {
                auto& lw = ref_.ch[c].cross_layers[l];
                double mean, rstd;
                nn::layer_norm(stage_a_[1 - c].data(), d, lw.lnkv.g, lw.lnkv.b,
                               ln_buf_.data(), &mean, &rstd);
                Ring& ring = cross_rings_[c][l];
                nn::affine(lw.cross_attn.wk, lw.cross_attn.bk, d, d, ln_buf_.data(),
                           ring.k_row(t_, ctx_));
                nn::affine(lw.cross_attn.wv, lw.cross_attn.bv, d, d, ln_buf_.data(),
                           ring.v_row(t_, ctx_));
                if (tape_) {
                    auto& st = tape_->ch[c].cross[l];
                    st.lnkv.mean.push_back(mean);
                    st.lnkv.rstd.push_back(rstd);
                    append(st.lnkv.out, ln_buf_.data(), d);
                    append(st.k, ring.k_row(t_, ctx_), d);
                    append(st.v, ring.v_row(t_, ctx_), d);
                }
            }
            for (int c = 0; c < 2; ++c) {
                auto& lw = ref_.ch[c].cross_layers[l];
                double mean, rstd;
                nn::layer_norm(stage_a_[c].data(), d, lw.lnq.g, lw.lnq.b,
                               ln_buf_.data(), &mean, &rstd);
                nn::affine(lw.cross_attn.wq, lw.cross_attn.bq, d, d, ln_buf_.data(),
                           q_buf_.data());
                attend(q_buf_.data(), cross_rings_[c][l], lw.cross_attn.pos,
                       m_buf_.data());
                nn::affine(lw.cross_attn.wo, lw.cross_attn.bo, d, d, m_buf_.data(),
                           o_buf_.data());
                if (tape_) {
                    auto& st = tape_->ch[c].cross[l];
                    append(st.s_in, stage_a_[c].data(), d);
                    st.lnq.mean.push_back(mean);
                    st.lnq.rstd.push_back(rstd);
                    append(st.lnq.out, ln_buf_.data(), d);
                    append(st.q, q_buf_.data(), d);
                    append(st.m, m_buf_.data(), d);
                }
                for (int i = 0; i < d; ++i) cur_[c][i] = stage_a_[c][i] + o_buf_[i];
            }
            for (int c = 0; c < 2; ++c) {
                auto& lw = ref_.ch[c].cross_layers[l];
                ffn_block(cur_[c], lw.ln3, lw.ffn,
                          tape_ ? &tape_->ch[c].cross_ffn[l] : nullptr);
            }
        }

        FrameOutput out;
        for (int c = 0; c < 2; ++c) {
            double mean, rstd;
            nn::layer_norm(cur_[c].data(), d, ref_.ch[c].final_ln.g,
                           ref_.ch[c].final_ln.b, y_[c].data(), &mean, &rstd);
            if (tape_) {
                auto& ct = tape_->ch[c];
                append(ct.final_in, cur_[c].data(), d);
                ct.final_ln.mean.push_back(mean);
                ct.final_ln.rstd.push_back(rstd);
                append(ct.final_ln.out, y_[c].data(), d);
            }
            for (int i = 0; i < d; ++i) concat_[c * d + i] = y_[c][i];
        }

        nn::affine(ref_.vap_w, ref_.vap_b, kNumStates, 2 * d, concat_.data(),
                   logits_.data());
        nn::softmax_inplace(logits_.data(), kNumStates);
        for (int i = 0; i < kNumStates; ++i) out.dist[i] = logits_[i];
        for (int c = 0; c < 2; ++c) {
            double a = double(ref_.vad_b[c][0]);
            const float* wrow = ref_.vad_w[c];
            for (int i = 0; i < d; ++i) a += double(wrow[i]) * y_[c][i];
            out.vad[c] = nn::sigmoid(a);
        }
        if (tape_) {
            append(tape_->dist, out.dist.data(), kNumStates);
            append(tape_->vad, out.vad.data(), 2);
            tape_->n_frames = static_cast<int>(t_) + 1;
        }
        ++t_;
        return out;
    }

    ModelConfig cfg_;
    detail::WeightsRef ref_;
    int ctx_;
    Tape* tape_;
    std::int64_t t_ = 0;

    std::array<std::vector<double>, 2> h_;
    std::array<std::vector<Ring>, 2> self_rings_, cross_self_rings_, cross_rings_;
    std::array<std::vector<double>, 2> cur_, stage_a_, y_;
    std::vector<double> ln_buf_, q_buf_, k_buf_, v_buf_, m_buf_, o_buf_;
    std::vector<double> gru_scratch_, ffn_buf_, ffn_act_, score_buf_, concat_, logits_;
};

/// Whole-sequence forward pass: the streaming engine run over every frame.
inline ForwardOutput forward(const ModelWeights& weights, const FrameFeatures& features,
                             int context_frames, Tape* tape = nullptr) {
    if (features.dim() != weights.config.feature_dim)
        throw DomainError("feature dim " + std::to_string(features.dim()) +
                          " != model feature_dim " +
                          std::to_string(weights.config.feature_dim));
    InferenceEngine engine(weights, context_frames, tape);
    ForwardOutput out;
    out.n_frames = features.n_frames;
    out.dist.reserve(features.n_frames * kNumStates);
    out.vad.reserve(features.n_frames * 2);
    for (std::size_t t = 0; t < features.n_frames; ++t) {
        auto fo = engine.step(features.at(0, t), features.at(1, t));
        out.dist.insert(out.dist.end(), fo.dist.begin(), fo.dist.end());
        out.vad.insert(out.vad.end(), fo.vad.begin(), fo.vad.end());
    }
    return out;
}

} // namespace vap
