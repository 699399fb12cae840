#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "vap/engine.hpp"
#include "vap/features.hpp"
#include "vap/model.hpp"
#include "vap/vap_state.hpp"

namespace vap {

/// Probability clamp inside both loss terms; keeps gradients finite.
inline constexpr double kProbClamp = 1e-7;

struct LossBreakdown {
    double total = 0.0;
    double vap_term = 0.0;
    double vad_term = 0.0;
};

/// Multitask loss: mean cross-entropy of the VAP head over labeled frames
/// plus lambda times the mean binary cross-entropy of the VAD heads over all
/// (frame, channel) pairs.
inline LossBreakdown loss(const ForwardOutput& out, const std::vector<VapState>& labels,
                          const VadFrameTrack& targets, double lambda) {
    const std::size_t T = out.n_frames;
    if (targets.frames() != T)
        throw DomainError("vad target length " + std::to_string(targets.frames()) +
                          " != output frames " + std::to_string(T));
    if (labels.size() > T)
        throw DomainError("more labels (" + std::to_string(labels.size()) +
                          ") than output frames (" + std::to_string(T) + ")");

    LossBreakdown lb;
    const std::size_t L = labels.size();
    for (std::size_t t = 0; t < L; ++t) {
        const double p = out.dist[t * kNumStates + labels[t].index()];
        lb.vap_term += -std::log(p > kProbClamp ? p : kProbClamp);
    }
    if (L > 0) lb.vap_term /= static_cast<double>(L);

    for (std::size_t t = 0; t < T; ++t) {
        for (int c = 0; c < 2; ++c) {
            const double p = out.vad[t * 2 + c];
            const double y = targets.speaker[c][t] ? 1.0 : 0.0;
            lb.vad_term += -(y * std::log(p > kProbClamp ? p : kProbClamp) +
                             (1.0 - y) * std::log(1.0 - p > kProbClamp ? 1.0 - p
                                                                       : kProbClamp));
        }
    }
    if (T > 0) lb.vad_term /= static_cast<double>(2 * T);

    lb.total = lb.vap_term + lambda * lb.vad_term;
    return lb;
}

/// Gradients, one double buffer per parameter tensor (same order and shapes).
struct GradientSet {
    std::vector<std::vector<double>> grads;

    static GradientSet zeros_like(const ModelWeights& w) {
        GradientSet g;
        g.grads.reserve(w.tensors.size());
        for (const auto& t : w.tensors) g.grads.emplace_back(t.numel(), 0.0);
        return g;
    }

    double global_norm() const {
        double sq = 0.0;
        for (const auto& t : grads)
            for (double v : t) sq += v * v;
        return std::sqrt(sq);
    }

    void scale(double s) {
        for (auto& t : grads)
            for (double& v : t) v *= s;
    }

    bool all_finite() const {
        for (const auto& t : grads)
            for (double v : t)
                if (!std::isfinite(v)) return false;
        return true;
    }
};

namespace detail {

struct LnGrad {
    double *g, *b;
};
struct AttnGrad {
    double *wq, *bq, *wk, *bk, *wv, *bv, *wo, *bo, *pos;
};
struct FfnGrad {
    double *w1, *b1, *w2, *b2;
};
struct GruGrad {
    double *wz, *uz, *bz, *wr, *ur, *br, *wh, *uh, *bh;
};
struct SelfLayerGrad {
    LnGrad ln1;
    AttnGrad attn;
    LnGrad ln2;
    FfnGrad ffn;
};
struct CrossLayerGrad {
    LnGrad ln1;
    AttnGrad self_attn;
    LnGrad lnq, lnkv;
    AttnGrad cross_attn;
    LnGrad ln3;
    FfnGrad ffn;
};
struct ChannelGrad {
    std::vector<SelfLayerGrad> self_layers;
    std::vector<CrossLayerGrad> cross_layers;
    LnGrad final_ln;
};
struct GradsRef {
    GruGrad enc;
    std::array<ChannelGrad, 2> ch;
    double *vap_w, *vap_b;
    std::array<double*, 2> vad_w, vad_b;
};

inline GradsRef bind_grads(const ModelWeights& w, GradientSet& g) {
    auto p = [&](const std::string& name) { return g.grads[w.index_of(name)].data(); };
    auto ln = [&](const std::string& pre) { return LnGrad{p(pre + "g"), p(pre + "b")}; };
    auto attn = [&](const std::string& pre) {
        return AttnGrad{p(pre + "wq"), p(pre + "bq"), p(pre + "wk"),
                        p(pre + "bk"), p(pre + "wv"), p(pre + "bv"),
                        p(pre + "wo"), p(pre + "bo"), p(pre + "pos")};
    };
    auto ffn = [&](const std::string& pre) {
        return FfnGrad{p(pre + "w1"), p(pre + "b1"), p(pre + "w2"), p(pre + "b2")};
    };

    GradsRef r;
    r.enc = {p("enc.wz"), p("enc.uz"), p("enc.bz"), p("enc.wr"), p("enc.ur"),
             p("enc.br"), p("enc.wh"), p("enc.uh"), p("enc.bh")};
    for (int c = 0; c < 2; ++c) {
        for (int l = 0; l < w.config.n_self_layers; ++l) {
            const auto pre = self_prefix(c, l);
            r.ch[c].self_layers.push_back({ln(pre + "ln1."), attn(pre + "attn."),
                                           ln(pre + "ln2."), ffn(pre + "ffn.")});
        }
        for (int l = 0; l < w.config.n_cross_layers; ++l) {
            const auto pre = cross_prefix(c, l);
            r.ch[c].cross_layers.push_back({ln(pre + "ln1."), attn(pre + "self."),
                                            ln(pre + "lnq."), ln(pre + "lnkv."),
                                            attn(pre + "cross."), ln(pre + "ln3."),
                                            ffn(pre + "ffn.")});
        }
        r.ch[c].final_ln = ln("ch" + std::to_string(c) + ".final_ln.");
    }
    r.vap_w = p("head.vap.w");
    r.vap_b = p("head.vap.b");
    r.vad_w = {p("head.vad0.w"), p("head.vad1.w")};
    r.vad_b = {p("head.vad0.b"), p("head.vad1.b")};
    return r;
}

/// Per-frame layer-norm backward over a sequence; accumulates into dX.
inline void ln_backward_seq(const std::vector<double>& x_seq, const LnTape& tape,
                            const LnRef& wref, const std::vector<double>& dy,
                            std::vector<double>& dx, const LnGrad& g, int T, int d) {
    for (int t = 0; t < T; ++t)
        nn::layer_norm_backward(x_seq.data() + std::size_t(t) * d, d, wref.g,
                                tape.mean[t], tape.rstd[t],
                                dy.data() + std::size_t(t) * d,
                                dx.data() + std::size_t(t) * d, g.g, g.b);
}

/// Attention-core backward shared by self and cross sites: from the gradient
/// at the site's projected output, recompute each query row's softmax and
/// accumulate dQ/dK/dV plus Wo, bo, and positional-table gradients.
inline void attn_core_backward(const ModelConfig& cfg, int T, int ctx,
                               const AttnRef& aw, const AttnGrad& ag,
                               const std::vector<double>& Q,
                               const std::vector<double>& K,
                               const std::vector<double>& V,
                               const std::vector<double>& M,
                               const std::vector<double>& dOut,
                               std::vector<double>& dQ, std::vector<double>& dK,
                               std::vector<double>& dV) {
    const int d = cfg.hidden_dim;
    const int H = cfg.n_heads;
    const int dh = cfg.head_dim();
    const double inv_sqrt = 1.0 / std::sqrt(double(dh));

    std::vector<double> dm(d), score(ctx), dp(ctx);
    for (int t = 0; t < T; ++t) {
        const double* dout = dOut.data() + std::size_t(t) * d;
        nn::outer_acc(ag.wo, d, d, dout, M.data() + std::size_t(t) * d);
        nn::acc(ag.bo, dout, d);
        std::fill(dm.begin(), dm.end(), 0.0);
        nn::matvec_transpose_acc(aw.wo, d, d, dout, dm.data());

        const std::int64_t w = std::min<std::int64_t>(t + 1, ctx);
        const std::int64_t left = t - w + 1;
        for (int h = 0; h < H; ++h) {
            const int off = h * dh;
            const double* qh = Q.data() + std::size_t(t) * d + off;
            // Identical arithmetic to the forward pass, so the recomputed
            // softmax matches it bit for bit.
            for (std::int64_t j = 0; j < w; ++j) {
                const double* kr = K.data() + std::size_t(left + j) * d + off;
                const float* pr = aw.pos + std::size_t(j) * d + off;
                double s = 0.0;
                for (int i = 0; i < dh; ++i) s += qh[i] * (kr[i] + double(pr[i]));
                score[j] = s * inv_sqrt;
            }
            nn::softmax_inplace(score.data(), static_cast<int>(w));

            for (std::int64_t j = 0; j < w; ++j) {
                const double* vr = V.data() + std::size_t(left + j) * d + off;
                double acc = 0.0;
                for (int i = 0; i < dh; ++i) acc += dm[off + i] * vr[i];
                dp[j] = acc;
            }
            double sdot = 0.0;
            for (std::int64_t j = 0; j < w; ++j) sdot += dp[j] * score[j];

            for (std::int64_t j = 0; j < w; ++j) {
                const double ds = score[j] * (dp[j] - sdot);
                const double qs = ds * inv_sqrt;
                const std::size_t f = std::size_t(left + j);
                double* dv = dV.data() + f * d + off;
                double* dk = dK.data() + f * d + off;
                double* gp = ag.pos + std::size_t(j) * d + off;
                const double* kr = K.data() + f * d + off;
                const float* pr = aw.pos + std::size_t(j) * d + off;
                double* dq = dQ.data() + std::size_t(t) * d + off;
                const double pj = score[j];
                for (int i = 0; i < dh; ++i) {
                    dv[i] += pj * dm[off + i];
                    dk[i] += qs * qh[i];
                    gp[i] += qs * qh[i];
                    dq[i] += qs * (kr[i] + double(pr[i]));
                }
            }
        }
    }
}

/// Backward through a full self-attention block (LN -> QKV -> attend -> Wo,
/// residual). Returns the gradient with respect to the block input.
inline std::vector<double> self_site_backward(const ModelConfig& cfg, int T, int ctx,
                                              const LnRef& lnw, const AttnRef& aw,
                                              const LnGrad& lng, const AttnGrad& ag,
                                              const AttnSiteTape& tape,
                                              const std::vector<double>& dOut) {
    const int d = cfg.hidden_dim;
    std::vector<double> dIn = dOut; // residual path
    std::vector<double> dQ(dOut.size(), 0.0), dK(dOut.size(), 0.0), dV(dOut.size(), 0.0);
    attn_core_backward(cfg, T, ctx, aw, ag, tape.q, tape.k, tape.v, tape.m, dOut,
                       dQ, dK, dV);

    std::vector<double> dLn(dOut.size(), 0.0);
    for (int t = 0; t < T; ++t) {
        const std::size_t o = std::size_t(t) * d;
        const double* lnrow = tape.ln.out.data() + o;
        nn::outer_acc(ag.wq, d, d, dQ.data() + o, lnrow);
        nn::acc(ag.bq, dQ.data() + o, d);
        nn::matvec_transpose_acc(aw.wq, d, d, dQ.data() + o, dLn.data() + o);
        nn::outer_acc(ag.wk, d, d, dK.data() + o, lnrow);
        nn::acc(ag.bk, dK.data() + o, d);
        nn::matvec_transpose_acc(aw.wk, d, d, dK.data() + o, dLn.data() + o);
        nn::outer_acc(ag.wv, d, d, dV.data() + o, lnrow);
        nn::acc(ag.bv, dV.data() + o, d);
        nn::matvec_transpose_acc(aw.wv, d, d, dV.data() + o, dLn.data() + o);
    }
    ln_backward_seq(tape.s_in, tape.ln, lnw, dLn, dIn, lng, T, d);
    return dIn;
}

/// Backward through a cross-attention block. Accumulates into the gradient of
/// the own channel's post-self state (query + residual paths) and the peer
/// channel's post-self state (key/value path).
inline void cross_site_backward(const ModelConfig& cfg, int T, int ctx,
                                const CrossLayerRef& lw, const CrossLayerGrad& lg,
                                const CrossSiteTape& tape,
                                const std::vector<double>& peer_s_in,
                                const std::vector<double>& dOut,
                                std::vector<double>& dAown,
                                std::vector<double>& dAother) {
    const int d = cfg.hidden_dim;
    for (std::size_t i = 0; i < dOut.size(); ++i) dAown[i] += dOut[i]; // residual

    std::vector<double> dQ(dOut.size(), 0.0), dK(dOut.size(), 0.0), dV(dOut.size(), 0.0);
    attn_core_backward(cfg, T, ctx, lw.cross_attn, lg.cross_attn, tape.q, tape.k,
                       tape.v, tape.m, dOut, dQ, dK, dV);

    std::vector<double> dLnQ(dOut.size(), 0.0), dLnKV(dOut.size(), 0.0);
    for (int t = 0; t < T; ++t) {
        const std::size_t o = std::size_t(t) * d;
        nn::outer_acc(lg.cross_attn.wq, d, d, dQ.data() + o, tape.lnq.out.data() + o);
        nn::acc(lg.cross_attn.bq, dQ.data() + o, d);
        nn::matvec_transpose_acc(lw.cross_attn.wq, d, d, dQ.data() + o, dLnQ.data() + o);

        const double* lnkv_row = tape.lnkv.out.data() + o;
        nn::outer_acc(lg.cross_attn.wk, d, d, dK.data() + o, lnkv_row);
        nn::acc(lg.cross_attn.bk, dK.data() + o, d);
        nn::matvec_transpose_acc(lw.cross_attn.wk, d, d, dK.data() + o, dLnKV.data() + o);
        nn::outer_acc(lg.cross_attn.wv, d, d, dV.data() + o, lnkv_row);
        nn::acc(lg.cross_attn.bv, dV.data() + o, d);
        nn::matvec_transpose_acc(lw.cross_attn.wv, d, d, dV.data() + o, dLnKV.data() + o);
    }
    ln_backward_seq(tape.s_in, tape.lnq, lw.lnq, dLnQ, dAown, lg.lnq, T, d);
    ln_backward_seq(peer_s_in, tape.lnkv, lw.lnkv, dLnKV, dAother, lg.lnkv, T, d);
}

/// Backward through a feed-forward block; returns the block-input gradient.
inline std::vector<double> ffn_backward_seq(const ModelConfig& cfg, int T,
                                            const LnRef& lnw, const FfnRef& fw,
                                            const LnGrad& lng, const FfnGrad& fg,
                                            const FfnTape& tape,
                                            const std::vector<double>& dOut) {
    const int d = cfg.hidden_dim;
    const int fd = cfg.ffn_dim();
    std::vector<double> dIn = dOut;
    std::vector<double> dLn(dOut.size(), 0.0);
    std::vector<double> a1(fd), da1(fd), dp1(fd);
    for (int t = 0; t < T; ++t) {
        const std::size_t o = std::size_t(t) * d;
        const double* pre = tape.pre1.data() + std::size_t(t) * fd;
        for (int i = 0; i < fd; ++i) a1[i] = nn::gelu(pre[i]);
        const double* dout = dOut.data() + o;
        nn::outer_acc(fg.w2, d, fd, dout, a1.data());
        nn::acc(fg.b2, dout, d);
        std::fill(da1.begin(), da1.end(), 0.0);
        nn::matvec_transpose_acc(fw.w2, d, fd, dout, da1.data());
        for (int i = 0; i < fd; ++i) dp1[i] = da1[i] * nn::gelu_grad(pre[i]);
        nn::outer_acc(fg.w1, fd, d, dp1.data(), tape.ln.out.data() + o);
        nn::acc(fg.b1, dp1.data(), fd);
        nn::matvec_transpose_acc(fw.w1, fd, d, dp1.data(), dLn.data() + o);
    }
    ln_backward_seq(tape.s_in, tape.ln, lnw, dLn, dIn, lng, T, d);
    return dIn;
}

/// BPTT through one channel's pass of the shared recurrent encoder.
inline void gru_backward(const ModelConfig& cfg, int T, const GruRef& ew,
                         const GruGrad& eg, const GruTape& tape,
                         const FrameFeatures& features, int channel,
                         const std::vector<double>& dH) {
    const int d = cfg.hidden_dim;
    std::vector<double> dh(d), carry(d, 0.0), next_carry(d);
    std::vector<double> dah(d), daz(d), dar(d), dr(d), q(d), rh(d);
    std::vector<double> zeros(d, 0.0);

    for (int t = T - 1; t >= 0; --t) {
        const std::size_t o = std::size_t(t) * d;
        const double* z = tape.z.data() + o;
        const double* r = tape.r.data() + o;
        const double* hh = tape.hh.data() + o;
        const double* hprev = t > 0 ? tape.h.data() + o - d : zeros.data();
        const double* x = features.at(channel, std::size_t(t));

        for (int i = 0; i < d; ++i) dh[i] = dH[o + i] + carry[i];
        for (int i = 0; i < d; ++i) {
            const double dz = dh[i] * (hh[i] - hprev[i]);
            const double dhh = dh[i] * z[i];
            next_carry[i] = dh[i] * (1.0 - z[i]);
            dah[i] = dhh * (1.0 - hh[i] * hh[i]);
            daz[i] = dz * z[i] * (1.0 - z[i]);
            rh[i] = r[i] * hprev[i];
        }
        nn::outer_acc(eg.wh, d, cfg.feature_dim, dah.data(), x);
        nn::acc(eg.bh, dah.data(), d);
        nn::outer_acc(eg.uh, d, d, dah.data(), rh.data());
        std::fill(q.begin(), q.end(), 0.0);
        nn::matvec_transpose_acc(ew.uh, d, d, dah.data(), q.data());
        for (int i = 0; i < d; ++i) {
            dr[i] = q[i] * hprev[i];
            next_carry[i] += q[i] * r[i];
            dar[i] = dr[i] * r[i] * (1.0 - r[i]);
        }
        nn::outer_acc(eg.wz, d, cfg.feature_dim, daz.data(), x);
        nn::outer_acc(eg.uz, d, d, daz.data(), hprev);
        nn::acc(eg.bz, daz.data(), d);
        nn::outer_acc(eg.wr, d, cfg.feature_dim, dar.data(), x);
        nn::outer_acc(eg.ur, d, d, dar.data(), hprev);
        nn::acc(eg.br, dar.data(), d);
        nn::matvec_transpose_acc(ew.uz, d, d, daz.data(), next_carry.data());
        nn::matvec_transpose_acc(ew.ur, d, d, dar.data(), next_carry.data());
        std::swap(carry, next_carry);
    }
}

} // namespace detail

/// Exact reverse-mode gradient of loss() with respect to every parameter.
inline GradientSet backward(const ModelWeights& w, const FrameFeatures& features,
                            const std::vector<VapState>& labels,
                            const VadFrameTrack& targets, double lambda,
                            int context_frames, LossBreakdown* loss_out = nullptr) {
    Tape tape;
    const ForwardOutput out = forward(w, features, context_frames, &tape);
    const LossBreakdown lb = loss(out, labels, targets, lambda);
    if (loss_out) *loss_out = lb;

    const auto& cfg = w.config;
    const int T = static_cast<int>(out.n_frames);
    const int d = cfg.hidden_dim;
    const int ctx = context_frames;
    GradientSet G = GradientSet::zeros_like(w);
    auto gr = detail::bind_grads(w, G);
    auto ref = detail::bind(w);

    // Heads.
    std::array<std::vector<double>, 2> dY;
    for (auto& v : dY) v.assign(std::size_t(T) * d, 0.0);
    const std::size_t L = labels.size();
    const double inv_L = L > 0 ? 1.0 / double(L) : 0.0;
    const double inv_2T = T > 0 ? 1.0 / double(2 * T) : 0.0;
    std::vector<double> dlogit(kNumStates), concat(std::size_t(2) * d), dz(std::size_t(2) * d);
    for (int t = 0; t < T; ++t) {
        if (std::size_t(t) < L) {
            const int y = labels[t].index();
            const double* p = tape.dist.data() + std::size_t(t) * kNumStates;
            if (p[y] > kProbClamp) {
                for (int i = 0; i < kNumStates; ++i)
                    dlogit[i] = (p[i] - (i == y ? 1.0 : 0.0)) * inv_L;
                for (int c = 0; c < 2; ++c) {
                    const double* yrow = tape.ch[c].final_ln.out.data() + std::size_t(t) * d;
                    for (int i = 0; i < d; ++i) concat[std::size_t(c) * d + i] = yrow[i];
                }
                nn::outer_acc(gr.vap_w, kNumStates, 2 * d, dlogit.data(), concat.data());
                nn::acc(gr.vap_b, dlogit.data(), kNumStates);
                std::fill(dz.begin(), dz.end(), 0.0);
                nn::matvec_transpose_acc(ref.vap_w, kNumStates, 2 * d, dlogit.data(),
                                         dz.data());
                for (int c = 0; c < 2; ++c)
                    for (int i = 0; i < d; ++i)
                        dY[c][std::size_t(t) * d + i] += dz[std::size_t(c) * d + i];
            }
        }
        for (int c = 0; c < 2; ++c) {
            const double p = tape.vad[std::size_t(t) * 2 + c];
            const double yv = targets.speaker[c][std::size_t(t)] ? 1.0 : 0.0;
            double dp = 0.0;
            if (p > kProbClamp) dp -= yv / p;
            if (1.0 - p > kProbClamp) dp += (1.0 - yv) / (1.0 - p);
            const double da = lambda * inv_2T * dp * p * (1.0 - p);
            if (da != 0.0) {
                const double* yrow = tape.ch[c].final_ln.out.data() + std::size_t(t) * d;
                for (int i = 0; i < d; ++i) gr.vad_w[c][i] += da * yrow[i];
                gr.vad_b[c][0] += da;
                for (int i = 0; i < d; ++i)
                    dY[c][std::size_t(t) * d + i] += da * double(ref.vad_w[c][i]);
            }
        }
    }

    // Final layer norms.
    std::array<std::vector<double>, 2> dCur;
    for (int c = 0; c < 2; ++c) {
        dCur[c].assign(std::size_t(T) * d, 0.0);
        detail::ln_backward_seq(tape.ch[c].final_in, tape.ch[c].final_ln,
                                ref.ch[c].final_ln, dY[c], dCur[c],
                                gr.ch[c].final_ln, T, d);
    }

    // Cross stack, last layer first.
    for (int l = cfg.n_cross_layers - 1; l >= 0; --l) {
        std::array<std::vector<double>, 2> dB;
        for (int c = 0; c < 2; ++c)
            dB[c] = detail::ffn_backward_seq(cfg, T, ref.ch[c].cross_layers[l].ln3,
                                             ref.ch[c].cross_layers[l].ffn,
                                             gr.ch[c].cross_layers[l].ln3,
                                             gr.ch[c].cross_layers[l].ffn,
                                             tape.ch[c].cross_ffn[l], dCur[c]);
        std::array<std::vector<double>, 2> dA;
        for (auto& v : dA) v.assign(std::size_t(T) * d, 0.0);
        for (int c = 0; c < 2; ++c)
            detail::cross_site_backward(cfg, T, ctx, ref.ch[c].cross_layers[l],
                                        gr.ch[c].cross_layers[l], tape.ch[c].cross[l],
                                        tape.ch[1 - c].cross[l].s_in, dB[c], dA[c],
                                        dA[1 - c]);
        for (int c = 0; c < 2; ++c)
            dCur[c] = detail::self_site_backward(cfg, T, ctx,
                                                 ref.ch[c].cross_layers[l].ln1,
                                                 ref.ch[c].cross_layers[l].self_attn,
                                                 gr.ch[c].cross_layers[l].ln1,
                                                 gr.ch[c].cross_layers[l].self_attn,
                                                 tape.ch[c].cross_self[l], dA[c]);
    }

    // Per-channel self layers.
    for (int l = cfg.n_self_layers - 1; l >= 0; --l) {
        for (int c = 0; c < 2; ++c) {
            auto dX = detail::ffn_backward_seq(cfg, T, ref.ch[c].self_layers[l].ln2,
                                               ref.ch[c].self_layers[l].ffn,
                                               gr.ch[c].self_layers[l].ln2,
                                               gr.ch[c].self_layers[l].ffn,
                                               tape.ch[c].self_ffn[l], dCur[c]);
            dCur[c] = detail::self_site_backward(cfg, T, ctx,
                                                 ref.ch[c].self_layers[l].ln1,
                                                 ref.ch[c].self_layers[l].attn,
                                                 gr.ch[c].self_layers[l].ln1,
                                                 gr.ch[c].self_layers[l].attn,
                                                 tape.ch[c].self_attn[l], dCur[c]);
        }
    }

    // Shared encoder (gradients accumulate across both channels).
    for (int c = 0; c < 2; ++c)
        detail::gru_backward(cfg, T, ref.enc, gr.enc, tape.ch[c].gru, features, c,
                             dCur[c]);

    return G;
}

/// One training dialogue: precomputed features plus its ground-truth frame
/// activity (labels are derived internally).
struct TrainExample {
    FrameFeatures features;
    VadFrameTrack vad;
};

struct TrainOptions {
    int epochs = 10;
    double learning_rate = 0.1;
    int context_frames = 100;
    double clip_norm = 1.0;
    double label_threshold = 0.5;
    BinBoundaries boundaries{};
    std::function<void(int epoch, double mean_loss)> on_epoch;
};

struct TrainResult {
    ModelWeights weights;
    std::vector<double> epoch_loss;
    bool diverged = false;
    std::string message;
};

/// Plain gradient descent, one dialogue per step, gradient-norm clipping at
/// clip_norm. Deterministic given the initial weights and corpus order. On a
/// non-finite loss the last finite weights are returned with diverged set.
inline TrainResult train(const ModelWeights& start,
                         const std::vector<TrainExample>& corpus,
                         const TrainOptions& opt) {
    if (corpus.empty()) throw DomainError("training corpus is empty");
    if (opt.epochs < 1) throw DomainError("epochs must be >= 1");
    const int window = opt.boundaries.window_frames();
    std::vector<std::vector<VapState>> labels;
    labels.reserve(corpus.size());
    for (const auto& ex : corpus) {
        if (ex.features.n_frames != ex.vad.frames())
            throw DomainError("features and vad disagree on frame count");
        if (ex.features.n_frames < std::size_t(window) + 1)
            throw DomainError("dialogue too short to derive labels: " +
                              std::to_string(ex.features.n_frames) + " frames");
        labels.push_back(label_sequence(ex.vad, opt.boundaries, opt.label_threshold));
    }

    TrainResult res;
    res.weights = start;
    const double lambda = start.config.vad_loss_weight;
    for (int epoch = 0; epoch < opt.epochs; ++epoch) {
        double sum = 0.0;
        for (std::size_t i = 0; i < corpus.size(); ++i) {
            LossBreakdown lb;
            GradientSet g = backward(res.weights, corpus[i].features, labels[i],
                                     corpus[i].vad, lambda, opt.context_frames, &lb);
            if (!std::isfinite(lb.total)) {
                res.diverged = true;
                res.message = "non-finite loss at epoch " + std::to_string(epoch) +
                              ", dialogue " + std::to_string(i);
                return res;
            }
            sum += lb.total;
            const double norm = g.global_norm();
            if (!std::isfinite(norm)) {
                res.diverged = true;
                res.message = "non-finite gradient at epoch " + std::to_string(epoch) +
                              ", dialogue " + std::to_string(i);
                return res;
            }
            if (norm > opt.clip_norm && norm > 0.0) g.scale(opt.clip_norm / norm);
            for (std::size_t ti = 0; ti < res.weights.tensors.size(); ++ti) {
                auto& data = res.weights.tensors[ti].data;
                const auto& gd = g.grads[ti];
                for (std::size_t j = 0; j < data.size(); ++j)
                    data[j] = static_cast<float>(double(data[j]) -
                                                 opt.learning_rate * gd[j]);
            }
        }
        res.epoch_loss.push_back(sum / double(corpus.size()));
        if (opt.on_epoch) opt.on_epoch(epoch, res.epoch_loss.back());
    }
    return res;
}

} // namespace vap
