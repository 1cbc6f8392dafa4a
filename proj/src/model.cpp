#include "seednorm/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "seednorm/norm_grad.hpp"

namespace seednorm {

namespace {

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluK = 0.044715;
constexpr double kEmbeddingStd = 0.02;

// ---- dense helpers -------------------------------------------------------

// C = A * B
Matrix matmul(const Matrix& a, const Matrix& b) {
    Matrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto ci = c.row(i);
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            const auto bk = b.row(k);
            for (std::size_t j = 0; j < ci.size(); ++j) ci[j] += aik * bk[j];
        }
    }
    return c;
}

// C += A^T * B
void add_matmul_at_b(Matrix& c, const Matrix& a, const Matrix& b) {
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const auto bi = b.row(i);
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            auto ck = c.row(k);
            for (std::size_t j = 0; j < ck.size(); ++j) ck[j] += aik * bi[j];
        }
    }
}

// C = A * B^T
Matrix matmul_a_bt(const Matrix& a, const Matrix& b) {
    Matrix c(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t k = 0; k < b.rows(); ++k) c(i, k) = dot(a.row(i), b.row(k));
    }
    return c;
}

void add_into(Matrix& dst, const Matrix& src) {
    auto& d = dst.data();
    const auto& s = src.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

void add_into(Vector& dst, const Vector& src) {
    if (dst.size() != src.size()) throw DimensionError("gradient slot size mismatch");
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

double gelu(double x) {
    return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluK * x * x * x)));
}

double gelu_derivative(double x) {
    const double inner = kGeluC * (x + kGeluK * x * x * x);
    const double t = std::tanh(inner);
    const double sech2 = 1.0 / (std::cosh(inner) * std::cosh(inner));
    return 0.5 * (1.0 + t) + 0.5 * x * sech2 * kGeluC * (1.0 + 3.0 * kGeluK * x * x);
}

// ---- norm slots ----------------------------------------------------------

NormSlot make_slot(const ModelConfig& cfg, std::size_t dim) {
    NormSlot s;
    switch (cfg.norm) {
        case NormKind::rmsnorm: s.params = NormParams::rms(dim, cfg.eps); break;
        case NormKind::layernorm:
            s.params = NormParams::rms(dim, cfg.eps);
            s.shift.assign(dim, 0.0);
            break;
        case NormKind::dyt:
            s.params = NormParams::rms(dim, cfg.eps);
            s.params.alpha = {cfg.dyt_alpha_init};
            s.shift.assign(dim, 0.0);
            break;
        case NormKind::seednorm: s.params = NormParams::dynamic(dim, cfg.alpha_init, 1, cfg.eps); break;
        case NormKind::mh_seednorm:
            s.params = NormParams::dynamic(dim, cfg.alpha_init, cfg.norm_heads, cfg.eps);
            break;
        case NormKind::ada_seednorm:
            throw std::invalid_argument("model: ada_seednorm needs a condition input");
    }
    return s;
}

void slot_layout(std::vector<TensorInfo>& out, const ModelConfig& cfg, const std::string& prefix,
                 std::size_t dim) {
    out.push_back({prefix + ".gamma", 1, dim, TensorRole::gamma});
    switch (cfg.norm) {
        case NormKind::dyt:
            out.push_back({prefix + ".alpha", 1, 1, TensorRole::dyt_alpha});
            out.push_back({prefix + ".shift", 1, dim, TensorRole::shift});
            break;
        case NormKind::layernorm: out.push_back({prefix + ".shift", 1, dim, TensorRole::shift}); break;
        case NormKind::seednorm:
        case NormKind::mh_seednorm:
            out.push_back({prefix + ".alpha", 1, dim, TensorRole::alpha});
            out.push_back({prefix + ".beta", 1, dim, TensorRole::beta});
            break;
        default: break;
    }
}

template <typename SlotT, typename F>
void visit_slot(SlotT& s, F&& f) {
    f(std::span(s.params.gamma));
    if (!s.params.alpha.empty()) f(std::span(s.params.alpha));
    if (!s.params.beta.empty()) f(std::span(s.params.beta));
    if (!s.shift.empty()) f(std::span(s.shift));
}

template <typename ModelT, typename F>
void visit_tensors(ModelT& m, F&& f) {
    f(std::span(m.tok_emb.data()));
    f(std::span(m.pos_emb.data()));
    for (auto& b : m.blocks) {
        visit_slot(b.attn_norm, f);
        f(std::span(b.wq.data()));
        f(std::span(b.wk.data()));
        f(std::span(b.wv.data()));
        visit_slot(b.q_norm, f);
        visit_slot(b.k_norm, f);
        f(std::span(b.wo.data()));
        visit_slot(b.ffn_norm, f);
        f(std::span(b.w1.data()));
        f(std::span(b.w2.data()));
    }
    visit_slot(m.final_norm, f);
    f(std::span(m.lm_head.data()));
}

ForwardResult slot_forward(NormKind kind, const NormSlot& s, const Matrix& x) {
    switch (kind) {
        case NormKind::rmsnorm: return rmsnorm_forward(x, s.params);
        case NormKind::layernorm: return layernorm_forward(x, s.params, s.shift);
        case NormKind::dyt: return dyt_forward(x, s.params.alpha[0], s.params.gamma, s.shift);
        case NormKind::seednorm: return seednorm_forward(x, s.params);
        case NormKind::mh_seednorm: return mh_seednorm_forward(x, s.params);
        case NormKind::ada_seednorm: break;
    }
    throw std::invalid_argument("model: unsupported norm kind");
}

// Accumulates parameter gradients into g and returns dL/dx.
Matrix slot_backward(NormKind kind, const NormSlot& s, const ForwardCache& cache, const Matrix& u,
                     NormSlot& g) {
    GradBundle b;
    switch (kind) {
        case NormKind::rmsnorm: b = rmsnorm_backward(cache, s.params, u); break;
        case NormKind::layernorm: b = layernorm_backward(cache, s.params, u); break;
        case NormKind::dyt: b = dyt_backward(cache, s.params.alpha[0], s.params.gamma, u); break;
        case NormKind::seednorm: b = seednorm_backward(cache, s.params, u); break;
        case NormKind::mh_seednorm: b = mh_seednorm_backward(cache, s.params, u); break;
        case NormKind::ada_seednorm: throw std::invalid_argument("model: unsupported norm kind");
    }
    add_into(g.params.gamma, b.d_gamma);
    if (!g.params.alpha.empty()) add_into(g.params.alpha, b.d_alpha);
    if (!g.params.beta.empty()) add_into(g.params.beta, b.d_beta);
    if (!g.shift.empty()) add_into(g.shift, b.d_shift);
    return std::move(b.d_x);
}

// ---- forward state -------------------------------------------------------

struct BlockCache {
    Matrix x_in;
    ForwardResult attn_norm;
    Matrix q, k, v;
    ForwardResult q_norm, k_norm;
    /// Softmax probabilities per (sequence, head), length x length.
    std::vector<Matrix> probs;
    Matrix heads_out;
    Matrix x_mid;
    ForwardResult ffn_norm;
    Matrix pre_act;
    Matrix act;
};

struct ForwardState {
    std::vector<BlockCache> blocks;
    Matrix x_final;
    ForwardResult final_norm;
    Matrix logits;
    std::size_t loss_count = 0;
    LossResult result;
};

void note_stage(ForwardState& st, const Matrix& m, const std::string& stage) {
    if (st.result.first_nonfinite.empty() && !m.all_finite()) st.result.first_nonfinite = stage;
}

// Q/K norm input: per-head rows of width hidden / attn_heads, or full rows.
Matrix qk_view(const ModelConfig& cfg, const Matrix& m) {
    return m.reshaped(m.rows() * m.cols() / cfg.qk_norm_dim(), cfg.qk_norm_dim());
}

void attention_forward(const ModelConfig& cfg, const Batch& b, BlockCache& c, const Matrix& qn,
                       const Matrix& kn) {
    const std::size_t heads = cfg.attn_heads, hd = cfg.head_dim(), len = b.length;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    c.heads_out = Matrix(qn.rows(), qn.cols());
    c.probs.assign(b.batch * heads, Matrix(len, len));
    for (std::size_t s = 0; s < b.batch; ++s) {
        for (std::size_t h = 0; h < heads; ++h) {
            Matrix& p = c.probs[s * heads + h];
            const std::size_t off = h * hd;
            for (std::size_t t = 0; t < len; ++t) {
                const auto qt = qn.row(s * len + t).subspan(off, hd);
                double mx = -INFINITY;
                for (std::size_t u = 0; u <= t; ++u) {
                    p(t, u) = scale * dot(qt, kn.row(s * len + u).subspan(off, hd));
                    mx = std::max(mx, p(t, u));
                }
                double z = 0.0;
                for (std::size_t u = 0; u <= t; ++u) {
                    p(t, u) = std::exp(p(t, u) - mx);
                    z += p(t, u);
                }
                auto ot = c.heads_out.row(s * len + t).subspan(off, hd);
                for (std::size_t u = 0; u <= t; ++u) {
                    p(t, u) /= z;
                    const auto vu = c.v.row(s * len + u).subspan(off, hd);
                    for (std::size_t e = 0; e < hd; ++e) ot[e] += p(t, u) * vu[e];
                }
            }
        }
    }
}

ForwardState run_forward(const Model& m, const Batch& b) {
    const ModelConfig& cfg = m.cfg;
    if (b.length == 0 || b.length > cfg.context) {
        throw std::invalid_argument("model: sequence length must be in [1, context]");
    }
    const std::size_t rows = b.batch * b.length;
    if (b.inputs.size() != rows || b.targets.size() != rows || b.loss_mask.size() != rows) {
        throw DimensionError("model: batch arrays do not match batch x length");
    }

    ForwardState st;
    Matrix x(rows, cfg.hidden);
    for (std::size_t i = 0; i < rows; ++i) {
        if (b.inputs[i] >= cfg.vocab || b.targets[i] >= cfg.vocab) {
            throw std::invalid_argument("model: token id out of vocabulary");
        }
        const auto te = m.tok_emb.row(b.inputs[i]);
        const auto pe = m.pos_emb.row(i % b.length);
        auto xi = x.row(i);
        for (std::size_t j = 0; j < cfg.hidden; ++j) xi[j] = te[j] + pe[j];
    }
    note_stage(st, x, "embeddings");

    st.blocks.resize(m.blocks.size());
    for (std::size_t l = 0; l < m.blocks.size(); ++l) {
        const Block& blk = m.blocks[l];
        BlockCache& c = st.blocks[l];
        const std::string tag = "block " + std::to_string(l);
        c.x_in = std::move(x);

        c.attn_norm = slot_forward(cfg.norm, blk.attn_norm, c.x_in);
        note_stage(st, c.attn_norm.output, tag + " attn_norm");
        const Matrix& a = c.attn_norm.output;
        c.q = matmul(a, blk.wq);
        c.k = matmul(a, blk.wk);
        c.v = matmul(a, blk.wv);
        c.q_norm = slot_forward(cfg.norm, blk.q_norm, qk_view(cfg, c.q));
        c.k_norm = slot_forward(cfg.norm, blk.k_norm, qk_view(cfg, c.k));
        note_stage(st, c.q_norm.output, tag + " q_norm");
        note_stage(st, c.k_norm.output, tag + " k_norm");
        attention_forward(cfg, b, c, c.q_norm.output.reshaped(rows, cfg.hidden),
                          c.k_norm.output.reshaped(rows, cfg.hidden));
        c.x_mid = matmul(c.heads_out, blk.wo);
        add_into(c.x_mid, c.x_in);
        note_stage(st, c.x_mid, tag + " attention");

        c.ffn_norm = slot_forward(cfg.norm, blk.ffn_norm, c.x_mid);
        note_stage(st, c.ffn_norm.output, tag + " ffn_norm");
        c.pre_act = matmul(c.ffn_norm.output, blk.w1);
        c.act = c.pre_act;
        for (double& v : c.act.data()) v = gelu(v);
        x = matmul(c.act, blk.w2);
        add_into(x, c.x_mid);
        note_stage(st, x, tag + " ffn");
    }

    st.x_final = std::move(x);
    st.final_norm = slot_forward(cfg.norm, m.final_norm, st.x_final);
    note_stage(st, st.final_norm.output, "final_norm");
    st.logits = matmul(st.final_norm.output, m.lm_head);
    note_stage(st, st.logits, "logits");

    double total = 0.0;
    for (std::size_t i = 0; i < rows; ++i) {
        if (!b.loss_mask[i]) continue;
        const auto li = st.logits.row(i);
        const double mx = *std::max_element(li.begin(), li.end());
        double z = 0.0;
        for (double v : li) z += std::exp(v - mx);
        total += mx + std::log(z) - li[b.targets[i]];
        ++st.loss_count;
    }
    if (st.loss_count == 0) throw std::invalid_argument("model: batch has no loss positions");
    st.result.loss = total / static_cast<double>(st.loss_count);
    if (!std::isfinite(st.result.loss) && st.result.first_nonfinite.empty()) {
        st.result.first_nonfinite = "loss";
    }
    return st;
}

void attention_backward(const ModelConfig& cfg, const Batch& b, const BlockCache& c,
                        const Matrix& qn, const Matrix& kn, const Matrix& d_out, Matrix& d_qn,
                        Matrix& d_kn, Matrix& d_v) {
    const std::size_t heads = cfg.attn_heads, hd = cfg.head_dim(), len = b.length;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    Vector dp(len);
    for (std::size_t s = 0; s < b.batch; ++s) {
        for (std::size_t h = 0; h < heads; ++h) {
            const Matrix& p = c.probs[s * heads + h];
            const std::size_t off = h * hd;
            for (std::size_t t = 0; t < len; ++t) {
                const auto dot_t = d_out.row(s * len + t).subspan(off, hd);
                double weighted = 0.0;
                for (std::size_t u = 0; u <= t; ++u) {
                    dp[u] = dot(dot_t, c.v.row(s * len + u).subspan(off, hd));
                    weighted += p(t, u) * dp[u];
                    auto dvu = d_v.row(s * len + u).subspan(off, hd);
                    for (std::size_t e = 0; e < hd; ++e) dvu[e] += p(t, u) * dot_t[e];
                }
                const auto qt = qn.row(s * len + t).subspan(off, hd);
                auto dqt = d_qn.row(s * len + t).subspan(off, hd);
                for (std::size_t u = 0; u <= t; ++u) {
                    const double ds = scale * p(t, u) * (dp[u] - weighted);
                    const auto ku = kn.row(s * len + u).subspan(off, hd);
                    auto dku = d_kn.row(s * len + u).subspan(off, hd);
                    for (std::size_t e = 0; e < hd; ++e) {
                        dqt[e] += ds * ku[e];
                        dku[e] += ds * qt[e];
                    }
                }
            }
        }
    }
}

}  // namespace

std::string_view to_string(TensorRole role) {
    switch (role) {
        case TensorRole::embedding: return "embedding";
        case TensorRole::matrix: return "matrix";
        case TensorRole::gamma: return "gamma";
        case TensorRole::alpha: return "alpha";
        case TensorRole::beta: return "beta";
        case TensorRole::shift: return "shift";
        case TensorRole::dyt_alpha: return "dyt_alpha";
    }
    return "unknown";
}

void validate(const ModelConfig& cfg) {
    auto fail = [](const std::string& msg) { throw std::invalid_argument("model config: " + msg); };
    if (cfg.layers == 0) fail("layers must be >= 1");
    if (cfg.hidden == 0) fail("hidden must be >= 1");
    if (cfg.attn_heads == 0 || cfg.hidden % cfg.attn_heads != 0) {
        fail("hidden must be divisible by attn_heads");
    }
    if (cfg.vocab < 2) fail("vocab must be >= 2");
    if (cfg.context == 0) fail("context must be >= 1");
    if (cfg.norm == NormKind::ada_seednorm) fail("ada_seednorm is not a model norm");
    if (cfg.norm_heads == 0 || cfg.hidden % cfg.norm_heads != 0) {
        fail("hidden must be divisible by norm_heads");
    }
    if (cfg.norm == NormKind::mh_seednorm && cfg.qk_norm_dim() % cfg.norm_heads != 0) {
        fail("Q/K norm width must be divisible by norm_heads");
    }
    if (!(cfg.eps >= 0.0)) fail("eps must be >= 0");
}

std::vector<TensorInfo> parameter_layout(const ModelConfig& cfg) {
    validate(cfg);
    const std::size_t d = cfg.hidden, f = cfg.ffn_width();
    std::vector<TensorInfo> out;
    out.push_back({"tok_emb", cfg.vocab, d, TensorRole::embedding});
    out.push_back({"pos_emb", cfg.context, d, TensorRole::embedding});
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        const std::string p = "blocks." + std::to_string(l) + ".";
        slot_layout(out, cfg, p + "attn_norm", d);
        out.push_back({p + "wq", d, d, TensorRole::matrix});
        out.push_back({p + "wk", d, d, TensorRole::matrix});
        out.push_back({p + "wv", d, d, TensorRole::matrix});
        slot_layout(out, cfg, p + "q_norm", cfg.qk_norm_dim());
        slot_layout(out, cfg, p + "k_norm", cfg.qk_norm_dim());
        out.push_back({p + "wo", d, d, TensorRole::matrix});
        slot_layout(out, cfg, p + "ffn_norm", d);
        out.push_back({p + "w1", d, f, TensorRole::matrix});
        out.push_back({p + "w2", f, d, TensorRole::matrix});
    }
    slot_layout(out, cfg, "final_norm", d);
    out.push_back({"lm_head", d, cfg.vocab, TensorRole::matrix});
    return out;
}

std::size_t parameter_count(const ModelConfig& cfg) {
    std::size_t n = 0;
    for (const auto& t : parameter_layout(cfg)) n += t.size();
    return n;
}

Model build_model(const ModelConfig& cfg, Rng& rng) {
    const auto layout = parameter_layout(cfg);
    const std::size_t d = cfg.hidden, f = cfg.ffn_width();
    const double in_std = 1.0 / std::sqrt(static_cast<double>(d));
    const double out_scale = 1.0 / std::sqrt(2.0 * static_cast<double>(cfg.layers));

    Model m;
    m.cfg = cfg;
    m.tok_emb = rng.normal_matrix(cfg.vocab, d, 0.0, kEmbeddingStd);
    m.pos_emb = rng.normal_matrix(cfg.context, d, 0.0, kEmbeddingStd);
    m.blocks.resize(cfg.layers);
    for (Block& b : m.blocks) {
        b.attn_norm = make_slot(cfg, d);
        b.q_norm = make_slot(cfg, cfg.qk_norm_dim());
        b.k_norm = make_slot(cfg, cfg.qk_norm_dim());
        b.ffn_norm = make_slot(cfg, d);
        b.wq = rng.normal_matrix(d, d, 0.0, in_std);
        b.wk = rng.normal_matrix(d, d, 0.0, in_std);
        b.wv = rng.normal_matrix(d, d, 0.0, in_std);
        b.wo = rng.normal_matrix(d, d, 0.0, in_std * out_scale);
        b.w1 = rng.normal_matrix(d, f, 0.0, in_std);
        b.w2 = rng.normal_matrix(f, d, 0.0, out_scale / std::sqrt(static_cast<double>(f)));
    }
    m.final_norm = make_slot(cfg, d);
    m.lm_head = rng.normal_matrix(d, cfg.vocab, 0.0, in_std);

    const auto views = tensor_views(std::as_const(m));
    if (views.size() != layout.size()) throw std::logic_error("model: layout/tensor count mismatch");
    for (std::size_t i = 0; i < views.size(); ++i) {
        if (views[i].size() != layout[i].size()) {
            throw std::logic_error("model: layout mismatch at " + layout[i].name);
        }
    }
    return m;
}

Model zeros_like(const Model& m) {
    Model z = m;
    for (auto v : tensor_views(z)) std::fill(v.begin(), v.end(), 0.0);
    return z;
}

std::vector<std::span<double>> tensor_views(Model& m) {
    std::vector<std::span<double>> out;
    visit_tensors(m, [&](std::span<double> s) { out.push_back(s); });
    return out;
}

std::vector<std::span<const double>> tensor_views(const Model& m) {
    std::vector<std::span<const double>> out;
    visit_tensors(m, [&](std::span<const double> s) { out.push_back(s); });
    return out;
}

std::size_t parameter_count(const Model& m) {
    std::size_t n = 0;
    for (auto v : tensor_views(m)) n += v.size();
    return n;
}

LossResult evaluate_loss(const Model& m, const Batch& b) { return run_forward(m, b).result; }

LossResult loss_and_gradients(const Model& m, const Batch& b, Model& grads) {
    ForwardState st = run_forward(m, b);
    grads = zeros_like(m);
    if (!st.result.first_nonfinite.empty()) return st.result;

    const ModelConfig& cfg = m.cfg;
    const std::size_t rows = b.batch * b.length;

    Matrix d_logits(rows, cfg.vocab);
    const double inv_count = 1.0 / static_cast<double>(st.loss_count);
    for (std::size_t i = 0; i < rows; ++i) {
        if (!b.loss_mask[i]) continue;
        const auto li = st.logits.row(i);
        const double mx = *std::max_element(li.begin(), li.end());
        double z = 0.0;
        for (double v : li) z += std::exp(v - mx);
        auto di = d_logits.row(i);
        for (std::size_t j = 0; j < cfg.vocab; ++j) di[j] = std::exp(li[j] - mx) / z * inv_count;
        di[b.targets[i]] -= inv_count;
    }

    add_matmul_at_b(grads.lm_head, st.final_norm.output, d_logits);
    Matrix dx = matmul_a_bt(d_logits, m.lm_head);
    dx = slot_backward(cfg.norm, m.final_norm, st.final_norm.cache, dx, grads.final_norm);

    for (std::size_t l = m.blocks.size(); l-- > 0;) {
        const Block& blk = m.blocks[l];
        const BlockCache& c = st.blocks[l];
        Block& g = grads.blocks[l];

        // FFN branch; dx is the gradient of the block output.
        add_matmul_at_b(g.w2, c.act, dx);
        Matrix d_pre = matmul_a_bt(dx, blk.w2);
        for (std::size_t i = 0; i < d_pre.size(); ++i) {
            d_pre.data()[i] *= gelu_derivative(c.pre_act.data()[i]);
        }
        add_matmul_at_b(g.w1, c.ffn_norm.output, d_pre);
        Matrix d_mid = slot_backward(cfg.norm, blk.ffn_norm, c.ffn_norm.cache,
                                     matmul_a_bt(d_pre, blk.w1), g.ffn_norm);
        add_into(d_mid, dx);

        // Attention branch.
        add_matmul_at_b(g.wo, c.heads_out, d_mid);
        const Matrix d_heads = matmul_a_bt(d_mid, blk.wo);
        const Matrix qn = c.q_norm.output.reshaped(rows, cfg.hidden);
        const Matrix kn = c.k_norm.output.reshaped(rows, cfg.hidden);
        Matrix d_qn(rows, cfg.hidden), d_kn(rows, cfg.hidden), d_v(rows, cfg.hidden);
        attention_backward(cfg, b, c, qn, kn, d_heads, d_qn, d_kn, d_v);
        const Matrix d_q = slot_backward(cfg.norm, blk.q_norm, c.q_norm.cache, qk_view(cfg, d_qn),
                                         g.q_norm)
                               .reshaped(rows, cfg.hidden);
        const Matrix d_k = slot_backward(cfg.norm, blk.k_norm, c.k_norm.cache, qk_view(cfg, d_kn),
                                         g.k_norm)
                               .reshaped(rows, cfg.hidden);

        const Matrix& a = c.attn_norm.output;
        add_matmul_at_b(g.wq, a, d_q);
        add_matmul_at_b(g.wk, a, d_k);
        add_matmul_at_b(g.wv, a, d_v);
        Matrix d_a = matmul_a_bt(d_q, blk.wq);
        add_into(d_a, matmul_a_bt(d_k, blk.wk));
        add_into(d_a, matmul_a_bt(d_v, blk.wv));
        dx = slot_backward(cfg.norm, blk.attn_norm, c.attn_norm.cache, d_a, g.attn_norm);
        add_into(dx, d_mid);
    }

    for (std::size_t i = 0; i < rows; ++i) {
        const auto di = dx.row(i);
        auto te = grads.tok_emb.row(b.inputs[i]);
        auto pe = grads.pos_emb.row(i % b.length);
        for (std::size_t j = 0; j < cfg.hidden; ++j) {
            te[j] += di[j];
            pe[j] += di[j];
        }
    }
    return st.result;
}

}  // namespace seednorm
