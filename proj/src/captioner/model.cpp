#include "spass/captioner/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace spass::captioner {

using text::Vocabulary;

void FeatureMap::validate(std::size_t expect_locations, std::size_t expect_dim) const {
    if (annotations.rows != expect_locations || annotations.cols != expect_dim ||
        annotations.data.size() != expect_locations * expect_dim) {
        throw ShapeError("feature map is " + std::to_string(annotations.rows) + "x" +
                         std::to_string(annotations.cols) + ", expected " + std::to_string(expect_locations) +
                         "x" + std::to_string(expect_dim));
    }
    if (!all_finite(annotations.data)) throw NumericError("feature map contains non-finite values");
}

namespace {

void check_token(TokenId y, const ModelWeights& w) {
    if (y >= w.dims.vocab) {
        throw text::OutOfRangeError("token index " + std::to_string(y) + " >= K=" + std::to_string(w.dims.vocab));
    }
}

Vector embed(TokenId y, const ModelWeights& w) {
    Vector x(w.dims.embed);
    for (std::size_t r = 0; r < w.dims.embed; ++r) x[r] = w.embedding(r, y);
    return x;
}

// Rows W_a a_i + b, fixed for an image across decode steps.
Matrix project_features(const FeatureMap& f, const ModelWeights& w) {
    const std::size_t A = w.dims.attention;
    Matrix p(f.locations(), A);
    for (std::size_t i = 0; i < f.locations(); ++i) {
        auto row = p.row(i);
        for (std::size_t k = 0; k < A; ++k) row[k] = w.att_bias.data[k];
        gemv_add(w.att_feature, f.annotations.row(i), row);
    }
    return p;
}

// `hidden_act` receives tanh(W_a a_i + W_h h + b) per location when given.
void attend_projected(const FeatureMap& f, const Matrix& projected, std::span<const double> h_prev,
                      const ModelWeights& w, AttentionState& out, Matrix* hidden_act) {
    const std::size_t L = f.locations(), A = w.dims.attention, D = f.dim();
    Vector pre_h(A, 0.0);
    gemv_add(w.att_hidden, h_prev, pre_h);
    out.logits.assign(L, 0.0);
    Vector u(A);
    if (hidden_act) *hidden_act = Matrix(L, A);
    for (std::size_t i = 0; i < L; ++i) {
        auto prow = projected.row(i);
        for (std::size_t k = 0; k < A; ++k) u[k] = std::tanh(prow[k] + pre_h[k]);
        out.logits[i] = dot(w.att_score.data, u);
        if (hidden_act) std::copy(u.begin(), u.end(), hidden_act->row(i).begin());
    }
    out.weights = out.logits;
    softmax_inplace(out.weights);
    out.context.assign(D, 0.0);
    for (std::size_t i = 0; i < L; ++i) {
        const double a = out.weights[i];
        auto row = f.annotations.row(i);
        for (std::size_t d = 0; d < D; ++d) out.context[d] += a * row[d];
    }
}

Vector mean_annotation(const FeatureMap& f) {
    Vector mean(f.dim(), 0.0);
    for (std::size_t i = 0; i < f.locations(); ++i) {
        auto row = f.annotations.row(i);
        for (std::size_t d = 0; d < f.dim(); ++d) mean[d] += row[d];
    }
    for (double& x : mean) x /= static_cast<double>(f.locations());
    return mean;
}

// Returns (hidden layer, output) of a tanh-tanh init network.
std::pair<Vector, Vector> init_net_forward(const InitNetWeights& net, std::span<const double> in) {
    Vector hid(net.b1.data);
    gemv_add(net.W1, in, hid);
    for (double& x : hid) x = std::tanh(x);
    Vector out(net.b2.data);
    gemv_add(net.W2, hid, out);
    for (double& x : out) x = std::tanh(x);
    return {hid, out};
}

void lstm_forward(std::span<const double> x, std::span<const double> h_prev, std::span<const double> c_prev,
                  std::span<const double> z, const ModelWeights& w, LstmState& s) {
    const std::size_t n = w.dims.hidden;
    std::array<Vector, 4> pre;
    for (std::size_t g = 0; g < 4; ++g) {
        const auto& gw = w.gates[g];
        pre[g] = gw.b.data;
        gemv_add(gw.W, x, pre[g]);
        gemv_add(gw.U, h_prev, pre[g]);
        gemv_add(gw.Z, z, pre[g]);
    }
    s.input.resize(n);
    s.forget.resize(n);
    s.output.resize(n);
    s.candidate.resize(n);
    s.c.resize(n);
    s.h.resize(n);
    for (std::size_t j = 0; j < n; ++j) {
        s.input[j] = sigmoid(pre[kInputGate][j]);
        s.forget[j] = sigmoid(pre[kForgetGate][j]);
        s.candidate[j] = std::tanh(pre[kCellGate][j]);
        s.output[j] = sigmoid(pre[kOutputGate][j]);
        s.c[j] = s.forget[j] * c_prev[j] + s.input[j] * s.candidate[j];
        s.h[j] = s.output[j] * std::tanh(s.c[j]);
    }
}

// q = E y + L_h h + L_z z; returns logits L_o q.
Vector output_logits(std::span<const double> x, std::span<const double> h, std::span<const double> z,
                     const ModelWeights& w, Vector* q_out) {
    Vector q(x.begin(), x.end());
    gemv_add(w.out_hidden, h, q);
    gemv_add(w.out_context, z, q);
    Vector logits(w.dims.vocab, 0.0);
    gemv_add(w.out_vocab, q, logits);
    if (q_out) *q_out = std::move(q);
    return logits;
}

void check_features(const FeatureMap& f, const ModelWeights& w) {
    f.validate(w.dims.locations, w.dims.feature);
}

}  // namespace

AttentionState attend(const FeatureMap& features, std::span<const double> h_prev, const ModelWeights& w) {
    check_features(features, w);
    if (h_prev.size() != w.dims.hidden) throw ShapeError("attend: hidden state has wrong length");
    if (!all_finite(h_prev)) throw NumericError("attend: non-finite hidden state");
    AttentionState out;
    attend_projected(features, project_features(features, w), h_prev, w, out, nullptr);
    if (!all_finite(out.context)) throw NumericError("attend: non-finite context");
    return out;
}

std::pair<Vector, Vector> init_state(const FeatureMap& features, const ModelWeights& w) {
    check_features(features, w);
    const Vector mean = mean_annotation(features);
    return {init_net_forward(w.init_h, mean).second, init_net_forward(w.init_c, mean).second};
}

LstmState lstm_step(TokenId y_prev, std::span<const double> h_prev, std::span<const double> c_prev,
                    std::span<const double> context, const ModelWeights& w) {
    check_token(y_prev, w);
    if (h_prev.size() != w.dims.hidden || c_prev.size() != w.dims.hidden || context.size() != w.dims.feature) {
        throw ShapeError("lstm_step: state or context has wrong length");
    }
    LstmState s;
    lstm_forward(embed(y_prev, w), h_prev, c_prev, context, w, s);
    return s;
}

Vector word_distribution(TokenId y_prev, std::span<const double> h, std::span<const double> context,
                         const ModelWeights& w) {
    check_token(y_prev, w);
    if (h.size() != w.dims.hidden || context.size() != w.dims.feature) {
        throw ShapeError("word_distribution: state or context has wrong length");
    }
    Vector p = output_logits(embed(y_prev, w), h, context, w, nullptr);
    softmax_inplace(p);
    return p;
}

namespace {

struct Beam {
    std::vector<TokenId> seq;  // emitted tokens; END last when finished
    double log_prob = 0.0;
    Vector h, c;
    bool finished = false;
};

bool beam_before(const Beam& a, const Beam& b) {
    if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
    return std::lexicographical_compare(a.seq.begin(), a.seq.end(), b.seq.begin(), b.seq.end());
}

bool emittable(TokenId k) { return k != Vocabulary::kStart && k != Vocabulary::kPad; }

GeneratedCaption finish(const Beam& b) {
    GeneratedCaption out;
    out.log_prob = b.log_prob;
    for (TokenId t : b.seq) {
        if (t != Vocabulary::kEnd) out.caption.ids.push_back(t);
    }
    out.degenerate = out.caption.ids.empty();
    return out;
}

GeneratedCaption greedy(const FeatureMap& f, const Matrix& projected, const ModelWeights& w,
                        std::size_t max_len, DecodeTrace* trace) {
    auto [h, c] = init_state(f, w);
    Beam b;
    b.h = std::move(h);
    b.c = std::move(c);
    TokenId prev = Vocabulary::kStart;
    AttentionState att;
    for (std::size_t step = 0; step < max_len; ++step) {
        attend_projected(f, projected, b.h, w, att, nullptr);
        if (trace) trace->attention.push_back(att.weights);
        LstmState s;
        lstm_forward(embed(prev, w), b.h, b.c, att.context, w, s);
        const Vector p = word_distribution(prev, w.options.output_uses_prev_hidden ? b.h : s.h, att.context, w);
        TokenId best = Vocabulary::kEnd;
        for (TokenId k = 0; k < p.size(); ++k) {
            if (emittable(k) && p[k] > p[best]) best = k;
        }
        b.log_prob += std::log(p[best]);
        b.seq.push_back(best);
        b.h = std::move(s.h);
        b.c = std::move(s.c);
        if (best == Vocabulary::kEnd) break;
        prev = best;
    }
    return finish(b);
}

GeneratedCaption beam_search(const FeatureMap& f, const Matrix& projected, const ModelWeights& w,
                             std::size_t width, std::size_t max_len, DecodeTrace* trace) {
    auto [h0, c0] = init_state(f, w);
    std::vector<Beam> active(1);
    active[0].h = std::move(h0);
    active[0].c = std::move(c0);
    std::vector<Beam> finished;

    AttentionState att;
    for (std::size_t step = 0; step < max_len && !active.empty(); ++step) {
        std::vector<Beam> candidates;
        for (const Beam& b : active) {
            const TokenId prev = b.seq.empty() ? Vocabulary::kStart : b.seq.back();
            attend_projected(f, projected, b.h, w, att, nullptr);
            if (trace) trace->attention.push_back(att.weights);
            LstmState s;
            lstm_forward(embed(prev, w), b.h, b.c, att.context, w, s);
            const Vector p =
                word_distribution(prev, w.options.output_uses_prev_hidden ? b.h : s.h, att.context, w);
            for (TokenId k = 0; k < p.size(); ++k) {
                if (!emittable(k)) continue;
                Beam nb;
                nb.seq = b.seq;
                nb.seq.push_back(k);
                nb.log_prob = b.log_prob + std::log(p[k]);
                nb.finished = k == Vocabulary::kEnd;
                if (!nb.finished) {
                    nb.h = s.h;
                    nb.c = s.c;
                }
                candidates.push_back(std::move(nb));
            }
        }
        const std::size_t keep = std::min(width, candidates.size());
        std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep),
                          candidates.end(), beam_before);
        candidates.resize(keep);
        active.clear();
        for (auto& cand : candidates) {
            if (cand.finished) finished.push_back(std::move(cand));
            else active.push_back(std::move(cand));
        }
        // log-probabilities only decrease, so no active beam can overtake
        // the best finished one
        if (!finished.empty() && !active.empty()) {
            const auto best_f = *std::min_element(finished.begin(), finished.end(), beam_before);
            const auto best_a = *std::min_element(active.begin(), active.end(), beam_before);
            if (best_f.log_prob >= best_a.log_prob) active.clear();
        }
    }
    for (auto& b : active) finished.push_back(std::move(b));
    return finish(*std::min_element(finished.begin(), finished.end(), beam_before));
}

}  // namespace

GeneratedCaption generate(const FeatureMap& features, const ModelWeights& w, const DecodeOptions& opts,
                          DecodeTrace* trace) {
    check_features(features, w);
    if (opts.max_len < 1) throw text::ParameterError("max_len must be >= 1");
    const Matrix projected = project_features(features, w);
    if (opts.mode == DecodeMode::kGreedy) return greedy(features, projected, w, opts.max_len, trace);
    if (opts.beam_width < 1) throw text::ParameterError("beam width must be >= 1");
    return beam_search(features, projected, w, opts.beam_width, opts.max_len, trace);
}

namespace {

struct StepCache {
    TokenId y_prev = 0;
    TokenId target = 0;
    Vector h_prev, c_prev;
    AttentionState att;
    Matrix att_hidden;  // L x A
    LstmState lstm;
    Vector keep_scale;  // dropout scale per hidden unit
    Vector h_dropped;
    Vector q;
    Vector probs;
};

struct SampleCache {
    Vector mean;
    Vector init_h_hidden, init_c_hidden;
    Vector h0, c0;
    std::vector<StepCache> steps;
};

void forward_sample(const TrainingSample& s, const Matrix& projected, const ModelWeights& w, double dropout,
                    Rng& rng, SampleCache& cache, double& loss_sum) {
    const auto& f = s.features;
    cache.mean = mean_annotation(f);
    std::tie(cache.init_h_hidden, cache.h0) = init_net_forward(w.init_h, cache.mean);
    std::tie(cache.init_c_hidden, cache.c0) = init_net_forward(w.init_c, cache.mean);

    const std::size_t T = s.caption.ids.size() + 1;
    const std::size_t n = w.dims.hidden;
    cache.steps.assign(T, {});
    Vector h = cache.h0, c = cache.c0;
    for (std::size_t t = 0; t < T; ++t) {
        StepCache& st = cache.steps[t];
        st.y_prev = t == 0 ? Vocabulary::kStart : s.caption.ids[t - 1];
        st.target = t < s.caption.ids.size() ? s.caption.ids[t] : Vocabulary::kEnd;
        st.h_prev = h;
        st.c_prev = c;
        attend_projected(f, projected, h, w, st.att, &st.att_hidden);
        const Vector x = embed(st.y_prev, w);
        lstm_forward(x, h, c, st.att.context, w, st.lstm);

        const Vector& h_out = w.options.output_uses_prev_hidden ? st.h_prev : st.lstm.h;
        st.keep_scale.assign(n, 1.0);
        if (dropout > 0.0) {
            for (double& k : st.keep_scale) k = rng.uniform() < dropout ? 0.0 : 1.0 / (1.0 - dropout);
        }
        st.h_dropped.resize(n);
        for (std::size_t j = 0; j < n; ++j) st.h_dropped[j] = h_out[j] * st.keep_scale[j];
        st.probs = output_logits(x, st.h_dropped, st.att.context, w, &st.q);
        softmax_inplace(st.probs);
        loss_sum -= std::log(std::max(st.probs[st.target], 1e-300));
        h = st.lstm.h;
        c = st.lstm.c;
    }
}

void add_to_column(Matrix& m, std::size_t col, std::span<const double> v) {
    for (std::size_t r = 0; r < m.rows; ++r) m(r, col) += v[r];
}

void backward_sample(const TrainingSample& s, const SampleCache& cache, const ModelWeights& w, double scale,
                     ModelWeights& g) {
    const auto& f = s.features;
    const std::size_t n = w.dims.hidden, m = w.dims.embed, D = w.dims.feature, L = f.locations(),
                      A = w.dims.attention, K = w.dims.vocab;
    const bool prev_hidden_out = w.options.output_uses_prev_hidden;

    Vector dh_next(n, 0.0), dc_next(n, 0.0);
    // gradient w.r.t. the pre-activation of the attention hidden layer,
    // summed over steps per location (a_i is constant across steps)
    Matrix d_att_pre_sum(L, A);

    Vector dlogits(K), dq(m), dh_out(n), dz(D), dx(m), dh(n), dc(n), dh_prev(n), dc_prev(n);
    std::array<Vector, 4> dpre;
    for (auto& v : dpre) v.assign(n, 0.0);
    Vector dalpha(L), de(L), dpre_att(A), dpre_att_total(A);

    for (std::size_t t = cache.steps.size(); t-- > 0;) {
        const StepCache& st = cache.steps[t];
        const auto& ls = st.lstm;

        for (std::size_t k = 0; k < K; ++k) dlogits[k] = st.probs[k] * scale;
        dlogits[st.target] -= scale;

        outer_add(g.out_vocab, dlogits, st.q);
        std::fill(dq.begin(), dq.end(), 0.0);
        gemv_t_add(w.out_vocab, dlogits, dq);

        std::fill(dx.begin(), dx.end(), 0.0);
        for (std::size_t r = 0; r < m; ++r) dx[r] = dq[r];

        outer_add(g.out_hidden, dq, st.h_dropped);
        std::fill(dh_out.begin(), dh_out.end(), 0.0);
        gemv_t_add(w.out_hidden, dq, dh_out);
        for (std::size_t j = 0; j < n; ++j) dh_out[j] *= st.keep_scale[j];

        outer_add(g.out_context, dq, st.att.context);
        std::fill(dz.begin(), dz.end(), 0.0);
        gemv_t_add(w.out_context, dq, dz);

        std::fill(dh_prev.begin(), dh_prev.end(), 0.0);
        for (std::size_t j = 0; j < n; ++j) {
            dh[j] = dh_next[j] + (prev_hidden_out ? 0.0 : dh_out[j]);
            if (prev_hidden_out) dh_prev[j] += dh_out[j];
        }

        for (std::size_t j = 0; j < n; ++j) {
            const double tc = std::tanh(ls.c[j]);
            const double d_o = dh[j] * tc;
            dc[j] = dc_next[j] + dh[j] * ls.output[j] * (1.0 - tc * tc);
            const double d_i = dc[j] * ls.candidate[j];
            const double d_g = dc[j] * ls.input[j];
            const double d_f = dc[j] * st.c_prev[j];
            dc_prev[j] = dc[j] * ls.forget[j];
            dpre[kInputGate][j] = d_i * ls.input[j] * (1.0 - ls.input[j]);
            dpre[kForgetGate][j] = d_f * ls.forget[j] * (1.0 - ls.forget[j]);
            dpre[kCellGate][j] = d_g * (1.0 - ls.candidate[j] * ls.candidate[j]);
            dpre[kOutputGate][j] = d_o * ls.output[j] * (1.0 - ls.output[j]);
        }

        const Vector x = embed(st.y_prev, w);
        for (std::size_t gi = 0; gi < 4; ++gi) {
            auto& gg = g.gates[gi];
            const auto& gw = w.gates[gi];
            outer_add(gg.W, dpre[gi], x);
            outer_add(gg.U, dpre[gi], st.h_prev);
            outer_add(gg.Z, dpre[gi], st.att.context);
            for (std::size_t j = 0; j < n; ++j) gg.b.data[j] += dpre[gi][j];
            gemv_t_add(gw.W, dpre[gi], dx);
            gemv_t_add(gw.U, dpre[gi], dh_prev);
            gemv_t_add(gw.Z, dpre[gi], dz);
        }
        add_to_column(g.embedding, st.y_prev, dx);

        // attention: z = sum_i alpha_i a_i, alpha = softmax(e)
        double weighted = 0.0;
        for (std::size_t i = 0; i < L; ++i) {
            dalpha[i] = dot(dz, f.annotations.row(i));
            weighted += st.att.weights[i] * dalpha[i];
        }
        std::fill(dpre_att_total.begin(), dpre_att_total.end(), 0.0);
        for (std::size_t i = 0; i < L; ++i) {
            de[i] = st.att.weights[i] * (dalpha[i] - weighted);
            auto u = st.att_hidden.row(i);
            auto acc = d_att_pre_sum.row(i);
            for (std::size_t k = 0; k < A; ++k) {
                g.att_score.data[k] += de[i] * u[k];
                const double dp = de[i] * w.att_score.data[k] * (1.0 - u[k] * u[k]);
                acc[k] += dp;
                dpre_att_total[k] += dp;
            }
        }
        outer_add(g.att_hidden, dpre_att_total, st.h_prev);
        gemv_t_add(w.att_hidden, dpre_att_total, dh_prev);

        dh_next = dh_prev;
        dc_next = dc_prev;
    }

    for (std::size_t i = 0; i < L; ++i) {
        auto acc = d_att_pre_sum.row(i);
        outer_add(g.att_feature, acc, f.annotations.row(i));
        for (std::size_t k = 0; k < A; ++k) g.att_bias.data[k] += acc[k];
    }

    auto init_backward = [&](const InitNetWeights& net, InitNetWeights& gnet, const Vector& hidden,
                             const Vector& out, const Vector& dout) {
        Vector dpre2(n), dhid(n, 0.0);
        for (std::size_t j = 0; j < n; ++j) dpre2[j] = dout[j] * (1.0 - out[j] * out[j]);
        outer_add(gnet.W2, dpre2, hidden);
        for (std::size_t j = 0; j < n; ++j) gnet.b2.data[j] += dpre2[j];
        gemv_t_add(net.W2, dpre2, dhid);
        for (std::size_t j = 0; j < n; ++j) dhid[j] *= 1.0 - hidden[j] * hidden[j];
        outer_add(gnet.W1, dhid, cache.mean);
        for (std::size_t j = 0; j < n; ++j) gnet.b1.data[j] += dhid[j];
    };
    init_backward(w.init_h, g.init_h, cache.init_h_hidden, cache.h0, dh_next);
    init_backward(w.init_c, g.init_c, cache.init_c_hidden, cache.c0, dc_next);
}

}  // namespace

LossAndGradients loss_and_gradients(std::span<const TrainingSample* const> batch, const ModelWeights& w,
                                    double dropout_rate, std::uint64_t seed) {
    if (batch.empty()) throw text::ParameterError("loss_and_gradients: empty batch");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw text::ParameterError("dropout rate must be in [0, 1)");
    std::size_t tokens = 0;
    for (const auto* s : batch) {
        check_features(s->features, w);
        for (TokenId id : s->caption.ids) check_token(id, w);
        tokens += s->caption.ids.size() + 1;
    }

    LossAndGradients out;
    out.gradients = ModelWeights::zeros(w.dims, w.options);
    out.tokens = tokens;
    const double scale = 1.0 / static_cast<double>(tokens);
    Rng rng(seed);
    double loss_sum = 0.0;
    SampleCache cache;
    for (const auto* s : batch) {
        const Matrix projected = project_features(s->features, w);
        forward_sample(*s, projected, w, dropout_rate, rng, cache, loss_sum);
        backward_sample(*s, cache, w, scale, out.gradients);
    }
    out.loss = loss_sum * scale;
    return out;
}

LossAndGradients loss_and_gradients(std::span<const TrainingSample> batch, const ModelWeights& w,
                                    double dropout_rate, std::uint64_t seed) {
    std::vector<const TrainingSample*> ptrs;
    ptrs.reserve(batch.size());
    for (const auto& s : batch) ptrs.push_back(&s);
    return loss_and_gradients(std::span<const TrainingSample* const>(ptrs), w, dropout_rate, seed);
}

}  // namespace spass::captioner
