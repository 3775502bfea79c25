#include "sevad/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <json.hpp>

#include "sevad/error.hpp"
#include "sevad/kernels.hpp"

namespace sevad {

using nlohmann::json;

void ModelConfig::validate() const {
    if (n_mels < 1 || d_enc < 1 || d_model < 1 || d_hidden < 1 || d_ff < 1)
        throw config_error("ModelConfig: dimensions must be positive");
    if (conv_kernel < 1) throw config_error("ModelConfig: conv_kernel must be >= 1");
    if (concat_k < 1) throw config_error("ModelConfig: concat_k must be >= 1");
    if (n_heads < 1 || d_model % n_heads != 0)
        throw config_error("ModelConfig: d_model must be a multiple of n_heads");
    if (n_layers < 1) throw config_error("ModelConfig: n_layers must be >= 1");
    if (prompt_len < 1) throw config_error("ModelConfig: prompt_len must be >= 1");
    if (max_seq < prompt_len + 3)
        throw config_error("ModelConfig: max_seq too small for prompt plus decode tokens");
}

std::string ModelConfig::to_json() const {
    json j;
    j["n_mels"] = n_mels;
    j["d_enc"] = d_enc;
    j["conv_kernel"] = conv_kernel;
    j["concat_k"] = concat_k;
    j["d_hidden"] = d_hidden;
    j["d_model"] = d_model;
    j["n_heads"] = n_heads;
    j["n_layers"] = n_layers;
    j["d_ff"] = d_ff;
    j["prompt_len"] = prompt_len;
    j["max_seq"] = max_seq;
    j["input_shift"] = input_shift;
    j["input_scale"] = input_scale;
    return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
    json j = json::parse(text);
    ModelConfig c;
    c.n_mels = j.at("n_mels");
    c.d_enc = j.at("d_enc");
    c.conv_kernel = j.at("conv_kernel");
    c.concat_k = j.at("concat_k");
    c.d_hidden = j.at("d_hidden");
    c.d_model = j.at("d_model");
    c.n_heads = j.at("n_heads");
    c.n_layers = j.at("n_layers");
    c.d_ff = j.at("d_ff");
    c.prompt_len = j.at("prompt_len");
    c.max_seq = j.at("max_seq");
    c.input_shift = j.at("input_shift");
    c.input_scale = j.at("input_scale");
    c.validate();
    return c;
}

double uniform_loss_reference() { return 2.0 * std::log(3.0); }

std::vector<float> pad_frames(const float* frames, int64_t len, int n_mels,
                              int64_t min_frames) {
    if (len <= 0) throw degenerate_input_error("pad_frames: empty window");
    std::vector<float> out(static_cast<size_t>(std::max(len, min_frames)) * n_mels);
    std::copy(frames, frames + len * n_mels, out.begin());
    for (int64_t i = len; i < min_frames; ++i)
        std::copy(frames + (len - 1) * n_mels, frames + len * n_mels,
                  out.begin() + i * n_mels);
    return out;
}

template <typename T>
TensorT<T> downsample_concat(const TensorT<T>& a, int k) {
    if (k < 1) throw config_error("downsample_concat: k must be >= 1");
    const int n = a.rows(), d = a.cols();
    const int np = n / k;
    TensorT<T> out({np, k * d});
    for (int i = 0; i < np; ++i)
        std::copy(a.row(i * k), a.row(i * k) + static_cast<size_t>(k) * d, out.row(i));
    return out;
}

template TensorT<float> downsample_concat<float>(const TensorT<float>&, int);
template TensorT<double> downsample_concat<double>(const TensorT<double>&, int);

namespace {

template <typename T>
TensorT<T> linear_forward(const LinearT<T>& lin, const TensorT<T>& x) {
    if (x.cols() != lin.w.cols())
        throw config_error("linear: input width " + std::to_string(x.cols()) +
                           " does not match weight width " + std::to_string(lin.w.cols()));
    TensorT<T> y({x.rows(), lin.w.rows()});
    kernels::matmul_nt(x.ptr(), lin.w.ptr(), y.ptr(), x.rows(), x.cols(), lin.w.rows());
    kernels::add_bias_rows(y.ptr(), lin.b.ptr(), y.rows(), y.cols());
    return y;
}

// Returns dX; accumulates dW and db.
template <typename T>
TensorT<T> linear_backward(const LinearT<T>& lin, const TensorT<T>& x,
                           const TensorT<T>& dy, LinearT<T>& g) {
    kernels::matmul_tn(dy.ptr(), x.ptr(), g.w.ptr(), lin.w.rows(), x.rows(), x.cols(), true);
    for (int i = 0; i < dy.rows(); ++i) {
        const T* row = dy.row(i);
        for (int j = 0; j < dy.cols(); ++j)
            g.b.data[j] = static_cast<T>(static_cast<double>(g.b.data[j]) +
                                         static_cast<double>(row[j]));
    }
    TensorT<T> dx({x.rows(), x.cols()});
    kernels::matmul_nn(dy.ptr(), lin.w.ptr(), dx.ptr(), dy.rows(), dy.cols(), x.cols());
    return dx;
}

template <typename T>
struct LnCache {
    TensorT<T> xhat;
    std::vector<double> istd;
};

constexpr double kLnEps = 1e-5;

template <typename T>
TensorT<T> ln_forward(const LayerNormT<T>& ln, const TensorT<T>& x, LnCache<T>& c) {
    const int n = x.rows(), d = x.cols();
    c.xhat = TensorT<T>({n, d});
    c.istd.resize(n);
    TensorT<T> y({n, d});
    for (int i = 0; i < n; ++i) {
        const T* row = x.row(i);
        double mu = 0.0;
        for (int j = 0; j < d; ++j) mu += static_cast<double>(row[j]);
        mu /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) {
            const double dev = static_cast<double>(row[j]) - mu;
            var += dev * dev;
        }
        var /= d;
        const double istd = 1.0 / std::sqrt(var + kLnEps);
        c.istd[i] = istd;
        T* xh = c.xhat.row(i);
        T* yr = y.row(i);
        for (int j = 0; j < d; ++j) {
            const double xhat = (static_cast<double>(row[j]) - mu) * istd;
            xh[j] = static_cast<T>(xhat);
            yr[j] = static_cast<T>(xhat * static_cast<double>(ln.gamma.data[j]) +
                                   static_cast<double>(ln.beta.data[j]));
        }
    }
    return y;
}

template <typename T>
TensorT<T> ln_backward(const LayerNormT<T>& ln, const LnCache<T>& c, const TensorT<T>& dy,
                       LayerNormT<T>& g) {
    const int n = dy.rows(), d = dy.cols();
    TensorT<T> dx({n, d});
    for (int i = 0; i < n; ++i) {
        const T* dyr = dy.row(i);
        const T* xh = c.xhat.row(i);
        double m1 = 0.0, m2 = 0.0;
        for (int j = 0; j < d; ++j) {
            const double dxh = static_cast<double>(dyr[j]) * static_cast<double>(ln.gamma.data[j]);
            m1 += dxh;
            m2 += dxh * static_cast<double>(xh[j]);
            g.gamma.data[j] = static_cast<T>(static_cast<double>(g.gamma.data[j]) +
                                             static_cast<double>(dyr[j]) *
                                                 static_cast<double>(xh[j]));
            g.beta.data[j] = static_cast<T>(static_cast<double>(g.beta.data[j]) +
                                            static_cast<double>(dyr[j]));
        }
        m1 /= d;
        m2 /= d;
        T* dxr = dx.row(i);
        for (int j = 0; j < d; ++j) {
            const double dxh = static_cast<double>(dyr[j]) * static_cast<double>(ln.gamma.data[j]);
            dxr[j] = static_cast<T>(c.istd[i] *
                                    (dxh - m1 - static_cast<double>(xh[j]) * m2));
        }
    }
    return dx;
}

template <typename T>
struct BlockCache {
    TensorT<T> x_in;
    LnCache<T> ln1c;
    TensorT<T> a1;
    TensorT<T> q, k, v;
    std::vector<TensorT<T>> probs;  // per head, [n x n], zero above the diagonal
    TensorT<T> ctx;
    TensorT<T> x_mid;
    LnCache<T> ln2c;
    TensorT<T> a2;
    TensorT<T> f1_pre, f1;
};

template <typename T>
struct FwdCache {
    std::vector<T> norm_in;  // normalized window [len x n_mels]
    int64_t len = 0;
    TensorT<T> h1_pre, h1;
    TensorT<T> a_pre, a;
    TensorT<T> a_i;
    TensorT<T> ad1_pre, ad1;
    TensorT<T> a_p;
    std::vector<int> tokens;
    TensorT<T> x0;
    std::vector<BlockCache<T>> blocks;
    LnCache<T> lnfc;
    TensorT<T> xf;
    TensorT<T> logits;
};

template <typename T>
TensorT<T> attention_forward(const BlockT<T>& blk, const TensorT<T>& a1, int n_heads,
                             BlockCache<T>& c) {
    const int n = a1.rows(), d = a1.cols();
    const int dh = d / n_heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    c.q = linear_forward(blk.wq, a1);
    c.k = linear_forward(blk.wk, a1);
    c.v = linear_forward(blk.wv, a1);
    c.probs.assign(n_heads, TensorT<T>({n, n}));
    c.ctx = TensorT<T>({n, d});

    for (int h = 0; h < n_heads; ++h) {
        const int off = h * dh;
        TensorT<T>& p = c.probs[h];
        for (int i = 0; i < n; ++i) {
            // Causal scores for row i over keys j <= i.
            std::vector<double> s(i + 1);
            double mx = -1e300;
            for (int j = 0; j <= i; ++j) {
                double acc = 0.0;
                const T* qi = c.q.row(i) + off;
                const T* kj = c.k.row(j) + off;
                for (int t = 0; t < dh; ++t)
                    acc += static_cast<double>(qi[t]) * static_cast<double>(kj[t]);
                s[j] = acc * scale;
                mx = std::max(mx, s[j]);
            }
            double sum = 0.0;
            for (int j = 0; j <= i; ++j) {
                s[j] = std::exp(s[j] - mx);
                sum += s[j];
            }
            T* prow = p.row(i);
            for (int j = 0; j <= i; ++j) prow[j] = static_cast<T>(s[j] / sum);

            T* ctx_row = c.ctx.row(i) + off;
            for (int t = 0; t < dh; ++t) {
                double acc = 0.0;
                for (int j = 0; j <= i; ++j)
                    acc += static_cast<double>(prow[j]) *
                           static_cast<double>(c.v.row(j)[off + t]);
                ctx_row[t] = static_cast<T>(acc);
            }
        }
    }
    return linear_forward(blk.wo, c.ctx);
}

// Input gradient w.r.t. a1; accumulates all attention parameter gradients.
template <typename T>
TensorT<T> attention_backward(const BlockT<T>& blk, const BlockCache<T>& c, int n_heads,
                              const TensorT<T>& d_out, BlockT<T>& g) {
    const int n = c.q.rows(), d = c.q.cols();
    const int dh = d / n_heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    TensorT<T> d_ctx = linear_backward(blk.wo, c.ctx, d_out, g.wo);
    TensorT<T> dq({n, d}), dk({n, d}), dv({n, d});

    for (int h = 0; h < n_heads; ++h) {
        const int off = h * dh;
        const TensorT<T>& p = c.probs[h];
        for (int i = 0; i < n; ++i) {
            const T* prow = p.row(i);
            const T* dctx_row = d_ctx.row(i) + off;
            // dP[i][j] = <dCtx_i, V_j>; dV_j += P[i][j] * dCtx_i
            std::vector<double> dp(i + 1);
            for (int j = 0; j <= i; ++j) {
                double acc = 0.0;
                const T* vj = c.v.row(j) + off;
                T* dvj = dv.row(j) + off;
                const double pij = static_cast<double>(prow[j]);
                for (int t = 0; t < dh; ++t) {
                    acc += static_cast<double>(dctx_row[t]) * static_cast<double>(vj[t]);
                    dvj[t] = static_cast<T>(static_cast<double>(dvj[t]) +
                                            pij * static_cast<double>(dctx_row[t]));
                }
                dp[j] = acc;
            }
            // Softmax backward over the causal row.
            double inner = 0.0;
            for (int j = 0; j <= i; ++j) inner += dp[j] * static_cast<double>(prow[j]);
            for (int j = 0; j <= i; ++j) {
                const double ds = scale * static_cast<double>(prow[j]) * (dp[j] - inner);
                const T* kj = c.k.row(j) + off;
                const T* qi = c.q.row(i) + off;
                T* dqi = dq.row(i) + off;
                T* dkj = dk.row(j) + off;
                for (int t = 0; t < dh; ++t) {
                    dqi[t] = static_cast<T>(static_cast<double>(dqi[t]) +
                                            ds * static_cast<double>(kj[t]));
                    dkj[t] = static_cast<T>(static_cast<double>(dkj[t]) +
                                            ds * static_cast<double>(qi[t]));
                }
            }
        }
    }

    TensorT<T> da1 = linear_backward(blk.wq, c.a1, dq, g.wq);
    TensorT<T> da_k = linear_backward(blk.wk, c.a1, dk, g.wk);
    TensorT<T> da_v = linear_backward(blk.wv, c.a1, dv, g.wv);
    for (int64_t i = 0; i < da1.numel(); ++i)
        da1.data[i] = static_cast<T>(static_cast<double>(da1.data[i]) +
                                     static_cast<double>(da_k.data[i]) +
                                     static_cast<double>(da_v.data[i]));
    return da1;
}

template <typename T>
double cross_entropy_row(const T* logits, int n, int target, T* d_row) {
    double mx = static_cast<double>(logits[0]);
    for (int j = 1; j < n; ++j) mx = std::max(mx, static_cast<double>(logits[j]));
    double sum = 0.0;
    for (int j = 0; j < n; ++j) sum += std::exp(static_cast<double>(logits[j]) - mx);
    const double log_z = mx + std::log(sum);
    if (d_row) {
        for (int j = 0; j < n; ++j) {
            const double p = std::exp(static_cast<double>(logits[j]) - log_z);
            d_row[j] = static_cast<T>(p - (j == target ? 1.0 : 0.0));
        }
    }
    return log_z - static_cast<double>(logits[target]);
}

}  // namespace

template <typename T>
ModelT<T> ModelT<T>::init(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    ModelT<T> m;
    m.cfg = cfg;
    m.conv1_w = TensorT<T>({cfg.d_enc, cfg.n_mels, cfg.conv_kernel});
    m.conv1_b = TensorT<T>({cfg.d_enc});
    m.conv2_w = TensorT<T>({cfg.d_enc, cfg.d_enc, cfg.conv_kernel});
    m.conv2_b = TensorT<T>({cfg.d_enc});
    m.adapter1 = {TensorT<T>({cfg.d_hidden, cfg.concat_k * cfg.d_enc}),
                  TensorT<T>({cfg.d_hidden})};
    m.adapter2 = {TensorT<T>({cfg.d_model, cfg.d_hidden}), TensorT<T>({cfg.d_model})};
    m.tok_emb = TensorT<T>({kVocab, cfg.d_model});
    m.pos_emb = TensorT<T>({cfg.max_seq, cfg.d_model});
    m.prompt = TensorT<T>({cfg.prompt_len, cfg.d_model});
    m.blocks.resize(cfg.n_layers);
    for (auto& b : m.blocks) {
        b.ln1 = {TensorT<T>({cfg.d_model}), TensorT<T>({cfg.d_model})};
        b.wq = {TensorT<T>({cfg.d_model, cfg.d_model}), TensorT<T>({cfg.d_model})};
        b.wk = {TensorT<T>({cfg.d_model, cfg.d_model}), TensorT<T>({cfg.d_model})};
        b.wv = {TensorT<T>({cfg.d_model, cfg.d_model}), TensorT<T>({cfg.d_model})};
        b.wo = {TensorT<T>({cfg.d_model, cfg.d_model}), TensorT<T>({cfg.d_model})};
        b.ln2 = {TensorT<T>({cfg.d_model}), TensorT<T>({cfg.d_model})};
        b.ff1 = {TensorT<T>({cfg.d_ff, cfg.d_model}), TensorT<T>({cfg.d_ff})};
        b.ff2 = {TensorT<T>({cfg.d_model, cfg.d_ff}), TensorT<T>({cfg.d_model})};
    }
    m.final_ln = {TensorT<T>({cfg.d_model}), TensorT<T>({cfg.d_model})};
    m.head = {TensorT<T>({kVocab, cfg.d_model}), TensorT<T>({kVocab})};

    std::mt19937_64 rng(seed);
    auto fill_normal = [&rng](TensorT<T>& t, double stddev) {
        std::normal_distribution<double> dist(0.0, stddev);
        for (auto& v : t.data) v = static_cast<T>(dist(rng));
    };
    auto fan_in_std = [](int fan_in) { return std::sqrt(1.0 / fan_in); };

    fill_normal(m.conv1_w, fan_in_std(cfg.n_mels * cfg.conv_kernel));
    fill_normal(m.conv2_w, fan_in_std(cfg.d_enc * cfg.conv_kernel));
    fill_normal(m.adapter1.w, fan_in_std(cfg.concat_k * cfg.d_enc));
    fill_normal(m.adapter2.w, fan_in_std(cfg.d_hidden));
    fill_normal(m.tok_emb, 0.02);
    fill_normal(m.pos_emb, 0.02);
    fill_normal(m.prompt, 0.02);
    for (auto& b : m.blocks) {
        b.ln1.gamma.fill(T(1));
        b.ln2.gamma.fill(T(1));
        fill_normal(b.wq.w, fan_in_std(cfg.d_model));
        fill_normal(b.wk.w, fan_in_std(cfg.d_model));
        fill_normal(b.wv.w, fan_in_std(cfg.d_model));
        fill_normal(b.wo.w, fan_in_std(cfg.d_model));
        fill_normal(b.ff1.w, fan_in_std(cfg.d_model));
        fill_normal(b.ff2.w, fan_in_std(cfg.d_ff));
    }
    m.final_ln.gamma.fill(T(1));
    fill_normal(m.head.w, fan_in_std(cfg.d_model));
    return m;
}

template <typename T>
ModelT<T> ModelT<T>::zeros_like(const ModelT<T>& src) {
    ModelT<T> m = src;
    for (auto& [name, t] : m.param_registry()) {
        (void)name;
        t->fill(T(0));
    }
    return m;
}

template <typename T>
std::vector<std::pair<std::string, TensorT<T>*>> ModelT<T>::param_registry() {
    std::vector<std::pair<std::string, TensorT<T>*>> out;
    out.emplace_back("encoder.conv1.w", &conv1_w);
    out.emplace_back("encoder.conv1.b", &conv1_b);
    out.emplace_back("encoder.conv2.w", &conv2_w);
    out.emplace_back("encoder.conv2.b", &conv2_b);
    out.emplace_back("adapter.fc1.w", &adapter1.w);
    out.emplace_back("adapter.fc1.b", &adapter1.b);
    out.emplace_back("adapter.fc2.w", &adapter2.w);
    out.emplace_back("adapter.fc2.b", &adapter2.b);
    out.emplace_back("embed.token", &tok_emb);
    out.emplace_back("embed.position", &pos_emb);
    out.emplace_back("prompt", &prompt);
    for (size_t i = 0; i < blocks.size(); ++i) {
        const std::string p = "block" + std::to_string(i) + ".";
        auto& b = blocks[i];
        out.emplace_back(p + "ln1.gamma", &b.ln1.gamma);
        out.emplace_back(p + "ln1.beta", &b.ln1.beta);
        out.emplace_back(p + "attn.wq.w", &b.wq.w);
        out.emplace_back(p + "attn.wq.b", &b.wq.b);
        out.emplace_back(p + "attn.wk.w", &b.wk.w);
        out.emplace_back(p + "attn.wk.b", &b.wk.b);
        out.emplace_back(p + "attn.wv.w", &b.wv.w);
        out.emplace_back(p + "attn.wv.b", &b.wv.b);
        out.emplace_back(p + "attn.wo.w", &b.wo.w);
        out.emplace_back(p + "attn.wo.b", &b.wo.b);
        out.emplace_back(p + "ln2.gamma", &b.ln2.gamma);
        out.emplace_back(p + "ln2.beta", &b.ln2.beta);
        out.emplace_back(p + "ffn.fc1.w", &b.ff1.w);
        out.emplace_back(p + "ffn.fc1.b", &b.ff1.b);
        out.emplace_back(p + "ffn.fc2.w", &b.ff2.w);
        out.emplace_back(p + "ffn.fc2.b", &b.ff2.b);
    }
    out.emplace_back("final_ln.gamma", &final_ln.gamma);
    out.emplace_back("final_ln.beta", &final_ln.beta);
    out.emplace_back("head.w", &head.w);
    out.emplace_back("head.b", &head.b);
    return out;
}

template <typename T>
std::vector<std::pair<std::string, const TensorT<T>*>> ModelT<T>::param_registry() const {
    auto mut = const_cast<ModelT<T>*>(this)->param_registry();
    std::vector<std::pair<std::string, const TensorT<T>*>> out;
    out.reserve(mut.size());
    for (auto& [name, t] : mut) out.emplace_back(name, t);
    return out;
}

template <typename T>
void check_finite_or_throw(const ModelT<T>& m, const TensorT<T>& logits) {
    if (logits.all_finite()) return;
    for (const auto& [name, t] : m.param_registry()) {
        if (!t->all_finite())
            throw numeric_error("non-finite logits traced to parameter " + name, name);
    }
    throw numeric_error("non-finite logits produced by intermediate activations",
                        "activations");
}

template void check_finite_or_throw<float>(const ModelT<float>&, const TensorT<float>&);
template void check_finite_or_throw<double>(const ModelT<double>&, const TensorT<double>&);

namespace {

// Encoder forward with cache. Input window is normalized by the config's
// fixed affine before the convolutions.
template <typename T>
TensorT<T> encode_cached(const ModelT<T>& m, const float* frames, int64_t len,
                         FwdCache<T>* c) {
    const ModelConfig& cfg = m.cfg;
    if (len < 4)
        throw degenerate_input_error("encode: window of " + std::to_string(len) +
                                     " frames is below the 4x downsampling factor");
    std::vector<T> norm(static_cast<size_t>(len) * cfg.n_mels);
    for (size_t i = 0; i < norm.size(); ++i)
        norm[i] = static_cast<T>((frames[i] - cfg.input_shift) * cfg.input_scale);

    const int n1 = static_cast<int>(len) / 2;
    TensorT<T> h1({n1, cfg.d_enc});
    kernels::conv1d_causal(norm.data(), static_cast<int>(len), cfg.n_mels, m.conv1_w.ptr(),
                           m.conv1_b.ptr(), cfg.d_enc, cfg.conv_kernel, 2, h1.ptr());
    TensorT<T> h1_post = h1;
    kernels::relu(h1_post.ptr(), h1_post.numel());

    const int n2 = n1 / 2;
    TensorT<T> a({n2, cfg.d_enc});
    kernels::conv1d_causal(h1_post.ptr(), n1, cfg.d_enc, m.conv2_w.ptr(), m.conv2_b.ptr(),
                           cfg.d_enc, cfg.conv_kernel, 2, a.ptr());
    TensorT<T> a_post = a;
    kernels::relu(a_post.ptr(), a_post.numel());

    if (c) {
        c->norm_in = std::move(norm);
        c->len = len;
        c->h1_pre = std::move(h1);
        c->h1 = h1_post;
        c->a_pre = std::move(a);
        c->a = a_post;
    }
    return a_post;
}

template <typename T>
TensorT<T> adapter_cached(const ModelT<T>& m, const TensorT<T>& a_i, FwdCache<T>* c) {
    if (a_i.cols() != m.cfg.concat_k * m.cfg.d_enc)
        throw config_error("adapter: expected " +
                           std::to_string(m.cfg.concat_k * m.cfg.d_enc) +
                           " input columns, got " + std::to_string(a_i.cols()));
    TensorT<T> pre = linear_forward(m.adapter1, a_i);
    TensorT<T> post = pre;
    kernels::relu(post.ptr(), post.numel());
    TensorT<T> out = linear_forward(m.adapter2, post);
    if (c) {
        c->ad1_pre = std::move(pre);
        c->ad1 = std::move(post);
    }
    return out;
}

template <typename T>
TensorT<T> backbone_forward(const ModelT<T>& m, const TensorT<T>& a_p,
                            const std::vector<int>& tokens, FwdCache<T>& c) {
    const ModelConfig& cfg = m.cfg;
    if (a_p.rows() == 0) throw config_error("backbone: empty adapted feature sequence");
    const int n = a_p.rows() + cfg.prompt_len + static_cast<int>(tokens.size());
    if (n > cfg.max_seq)
        throw config_error("backbone: sequence length " + std::to_string(n) +
                           " exceeds max_seq " + std::to_string(cfg.max_seq));

    c.tokens = tokens;
    c.x0 = TensorT<T>({n, cfg.d_model});
    for (int i = 0; i < a_p.rows(); ++i)
        std::copy(a_p.row(i), a_p.row(i) + cfg.d_model, c.x0.row(i));
    for (int i = 0; i < cfg.prompt_len; ++i)
        std::copy(m.prompt.row(i), m.prompt.row(i) + cfg.d_model,
                  c.x0.row(a_p.rows() + i));
    for (size_t i = 0; i < tokens.size(); ++i)
        std::copy(m.tok_emb.row(tokens[i]), m.tok_emb.row(tokens[i]) + cfg.d_model,
                  c.x0.row(a_p.rows() + cfg.prompt_len + static_cast<int>(i)));
    for (int i = 0; i < n; ++i) {
        T* row = c.x0.row(i);
        const T* pe = m.pos_emb.row(i);
        for (int j = 0; j < cfg.d_model; ++j) row[j] += pe[j];
    }

    c.blocks.assign(cfg.n_layers, BlockCache<T>{});
    TensorT<T> x = c.x0;
    for (int l = 0; l < cfg.n_layers; ++l) {
        BlockCache<T>& bc = c.blocks[l];
        const BlockT<T>& blk = m.blocks[l];
        bc.x_in = x;
        bc.a1 = ln_forward(blk.ln1, x, bc.ln1c);
        TensorT<T> attn = attention_forward(blk, bc.a1, cfg.n_heads, bc);
        bc.x_mid = x;
        for (int64_t i = 0; i < x.numel(); ++i)
            bc.x_mid.data[i] = static_cast<T>(static_cast<double>(x.data[i]) +
                                              static_cast<double>(attn.data[i]));
        bc.a2 = ln_forward(blk.ln2, bc.x_mid, bc.ln2c);
        bc.f1_pre = linear_forward(blk.ff1, bc.a2);
        bc.f1 = bc.f1_pre;
        kernels::relu(bc.f1.ptr(), bc.f1.numel());
        TensorT<T> f2 = linear_forward(blk.ff2, bc.f1);
        x = bc.x_mid;
        for (int64_t i = 0; i < x.numel(); ++i)
            x.data[i] = static_cast<T>(static_cast<double>(x.data[i]) +
                                       static_cast<double>(f2.data[i]));
    }
    c.xf = ln_forward(m.final_ln, x, c.lnfc);
    c.logits = linear_forward(m.head, c.xf);
    return c.logits;
}

// Backward from d_logits all the way to the parameters. Mirrors
// backbone_forward + adapter + encoder.
template <typename T>
void full_backward(const ModelT<T>& m, const FwdCache<T>& c, const TensorT<T>& d_logits,
                   ModelT<T>& g) {
    const ModelConfig& cfg = m.cfg;

    TensorT<T> dxf = linear_backward(m.head, c.xf, d_logits, g.head);
    TensorT<T> dx = ln_backward(m.final_ln, c.lnfc, dxf, g.final_ln);

    for (int l = cfg.n_layers - 1; l >= 0; --l) {
        const BlockCache<T>& bc = c.blocks[l];
        const BlockT<T>& blk = m.blocks[l];
        BlockT<T>& gb = g.blocks[l];

        // FFN residual: x_out = x_mid + ff2(relu(ff1(ln2(x_mid))))
        TensorT<T> df1 = linear_backward(blk.ff2, bc.f1, dx, gb.ff2);
        kernels::relu_backward(bc.f1_pre.ptr(), df1.ptr(), df1.numel());
        TensorT<T> da2 = linear_backward(blk.ff1, bc.a2, df1, gb.ff1);
        TensorT<T> dx_mid = ln_backward(blk.ln2, bc.ln2c, da2, gb.ln2);
        for (int64_t i = 0; i < dx.numel(); ++i)
            dx_mid.data[i] = static_cast<T>(static_cast<double>(dx_mid.data[i]) +
                                            static_cast<double>(dx.data[i]));

        // Attention residual: x_mid = x_in + attn(ln1(x_in))
        TensorT<T> da1 = attention_backward(blk, bc, cfg.n_heads, dx_mid, gb);
        TensorT<T> dx_in = ln_backward(blk.ln1, bc.ln1c, da1, gb.ln1);
        for (int64_t i = 0; i < dx_in.numel(); ++i)
            dx_in.data[i] = static_cast<T>(static_cast<double>(dx_in.data[i]) +
                                           static_cast<double>(dx_mid.data[i]));
        dx = std::move(dx_in);
    }

    // Split the sequence gradient into its embedding sources.
    const int np = c.a_p.rows();
    const int n = dx.rows();
    for (int i = 0; i < n; ++i) {
        const T* row = dx.row(i);
        T* pe = g.pos_emb.row(i);
        for (int j = 0; j < cfg.d_model; ++j)
            pe[j] = static_cast<T>(static_cast<double>(pe[j]) + static_cast<double>(row[j]));
    }
    for (int i = 0; i < cfg.prompt_len; ++i) {
        const T* row = dx.row(np + i);
        T* pr = g.prompt.row(i);
        for (int j = 0; j < cfg.d_model; ++j)
            pr[j] = static_cast<T>(static_cast<double>(pr[j]) + static_cast<double>(row[j]));
    }
    for (size_t i = 0; i < c.tokens.size(); ++i) {
        const T* row = dx.row(np + cfg.prompt_len + static_cast<int>(i));
        T* te = g.tok_emb.row(c.tokens[i]);
        for (int j = 0; j < cfg.d_model; ++j)
            te[j] = static_cast<T>(static_cast<double>(te[j]) + static_cast<double>(row[j]));
    }

    // Adapter backward over the audio rows.
    TensorT<T> d_ap({np, cfg.d_model});
    for (int i = 0; i < np; ++i)
        std::copy(dx.row(i), dx.row(i) + cfg.d_model, d_ap.row(i));
    TensorT<T> dad1 = linear_backward(m.adapter2, c.ad1, d_ap, g.adapter2);
    kernels::relu_backward(c.ad1_pre.ptr(), dad1.ptr(), dad1.numel());
    TensorT<T> d_ai = linear_backward(m.adapter1, c.a_i, dad1, g.adapter1);

    if (m.frozen_encoder) return;

    // Un-concatenate: rows beyond np * k were dropped and get zero gradient.
    TensorT<T> da({c.a.rows(), cfg.d_enc});
    for (int i = 0; i < np; ++i)
        std::copy(d_ai.row(i), d_ai.row(i) + static_cast<size_t>(cfg.concat_k) * cfg.d_enc,
                  da.row(i * cfg.concat_k));

    kernels::relu_backward(c.a_pre.ptr(), da.ptr(), da.numel());
    TensorT<T> dh1({c.h1.rows(), cfg.d_enc});
    kernels::conv1d_causal_backward(c.h1.ptr(), c.h1.rows(), cfg.d_enc, m.conv2_w.ptr(),
                                    cfg.d_enc, cfg.conv_kernel, 2, da.ptr(), dh1.ptr(),
                                    g.conv2_w.ptr(), g.conv2_b.ptr());
    kernels::relu_backward(c.h1_pre.ptr(), dh1.ptr(), dh1.numel());
    kernels::conv1d_causal_backward(c.norm_in.data(), static_cast<int>(c.len), cfg.n_mels,
                                    m.conv1_w.ptr(), cfg.d_enc, cfg.conv_kernel, 2,
                                    dh1.ptr(), nullptr, g.conv1_w.ptr(), g.conv1_b.ptr());
}

}  // namespace

template <typename T>
TensorT<T> ModelT<T>::encode(const float* frames, int64_t len) const {
    return encode_cached(*this, frames, len, static_cast<FwdCache<T>*>(nullptr));
}

template <typename T>
TensorT<T> ModelT<T>::adapter_forward(const TensorT<T>& a_i) const {
    return adapter_cached(*this, a_i, static_cast<FwdCache<T>*>(nullptr));
}

template <typename T>
DecisionT<T> ModelT<T>::classify_window(const float* frames, int64_t len) const {
    const int64_t min_frames = std::max<int64_t>(4, 4LL * cfg.concat_k);
    const float* eff = frames;
    std::vector<float> padded;
    if (len < min_frames) {
        padded = pad_frames(frames, len, cfg.n_mels, min_frames);
        eff = padded.data();
        len = min_frames;
    }

    FwdCache<T> c;
    TensorT<T> a = encode_cached(*this, eff, len, &c);
    c.a_i = downsample_concat(a, cfg.concat_k);
    c.a_p = adapter_cached(*this, c.a_i, &c);

    TensorT<T> logits = backbone_forward(*this, c.a_p, {}, c);
    const int p1 = logits.rows() - 1;
    check_finite_or_throw(*this, logits);

    DecisionT<T> out;
    out.logits = TensorT<T>({2, kVocab});
    std::copy(logits.row(p1), logits.row(p1) + kVocab, out.logits.row(0));
    // EOS is masked at the first decoded position; ties resolve to the
    // lowest token id, i.e. Continue.
    out.y = static_cast<double>(logits.row(p1)[kStop]) >
                    static_cast<double>(logits.row(p1)[kContinue])
                ? kStop
                : kContinue;

    TensorT<T> probs = out.logits;
    kernels::softmax_rows(probs.ptr(), 1, kVocab);
    out.confidence = probs.row(0)[out.y];

    FwdCache<T> c2;
    TensorT<T> logits2 = backbone_forward(*this, c.a_p, {out.y}, c2);
    check_finite_or_throw(*this, logits2);
    std::copy(logits2.row(logits2.rows() - 1), logits2.row(logits2.rows() - 1) + kVocab,
              out.logits.row(1));
    return out;
}

template <typename T>
DecisionT<T> ModelT<T>::classify_chunk(const ChunkView& chunk) const {
    return classify_window(chunk.frames, chunk.length());
}

template <typename T>
T ModelT<T>::compute_loss(const float* frames, int64_t len, int label,
                          ModelT<T>* grads) const {
    if (label != kContinue && label != kStop)
        throw config_error("compute_loss: label must be 0 or 1, got " +
                           std::to_string(label));
    const int64_t min_frames = std::max<int64_t>(4, 4LL * cfg.concat_k);
    const float* eff = frames;
    std::vector<float> padded;
    if (len < min_frames) {
        padded = pad_frames(frames, len, cfg.n_mels, min_frames);
        eff = padded.data();
        len = min_frames;
    }

    FwdCache<T> c;
    TensorT<T> a = encode_cached(*this, eff, len, &c);
    c.a_i = downsample_concat(a, cfg.concat_k);
    c.a_p = adapter_cached(*this, c.a_i, &c);
    TensorT<T> logits = backbone_forward(*this, c.a_p, {label}, c);

    const int p2 = logits.rows() - 1;  // predicts <eos> after the state token
    const int p1 = p2 - 1;             // predicts the state token

    TensorT<T> d_logits({logits.rows(), kVocab});
    const double l1 = cross_entropy_row(logits.row(p1), kVocab, label,
                                        grads ? d_logits.row(p1) : nullptr);
    const double l2 = cross_entropy_row(logits.row(p2), kVocab, kEos,
                                        grads ? d_logits.row(p2) : nullptr);
    if (grads) full_backward(*this, c, d_logits, *grads);
    return static_cast<T>(l1 + l2);
}

template struct ModelT<float>;
template struct ModelT<double>;

}  // namespace sevad
