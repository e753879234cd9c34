#pragma once

#include <string>
#include <utility>
#include <vector>

#include "ddlm/ops.hpp"
#include "ddlm/random.hpp"
#include "ddlm/tensor.hpp"

namespace ddlm {

enum class AttentionMode { causal, full };

inline std::string to_string(AttentionMode m) { return m == AttentionMode::causal ? "causal" : "full"; }

inline AttentionMode attention_mode_from_string(const std::string& s) {
    if (s == "causal") return AttentionMode::causal;
    if (s == "full") return AttentionMode::full;
    throw UsageError("unknown attention mode '" + s + "' (expected causal|full)");
}

struct TransformerConfig {
    int vocab_size = 100;
    int d_model = 128;
    int n_heads = 4;
    int n_layers = 4;
    int d_ff = 256;
    int max_seq_len = 256;
    AttentionMode attention_mode = AttentionMode::full;
    double rope_base = 10000.0;
    int bos_id = 0;
    int eos_id = 1;
    int pad_id = 2;
    int mask_id = 3;

    void validate() const {
        if (d_model <= 0 || n_heads <= 0 || n_layers <= 0 || d_ff <= 0 || max_seq_len <= 0)
            throw UsageError("TransformerConfig: extents must be positive");
        if (d_model % n_heads != 0)
            throw UsageError("TransformerConfig: d_model " + std::to_string(d_model) +
                             " not divisible by n_heads " + std::to_string(n_heads));
        if ((d_model / n_heads) % 2 != 0)
            throw UsageError("TransformerConfig: head dim must be even for rotary encoding");
        const int ids[4] = {bos_id, eos_id, pad_id, mask_id};
        for (int i = 0; i < 4; ++i) {
            if (ids[i] < 0 || ids[i] >= vocab_size)
                throw UsageError("TransformerConfig: special id out of vocab range");
            for (int j = i + 1; j < 4; ++j)
                if (ids[i] == ids[j]) throw UsageError("TransformerConfig: special ids must be distinct");
        }
    }
};

struct LayerParams {
    Tensor attn_norm_gain;  // [d_model]
    Tensor wq, wk, wv, wo;  // [d_model, d_model]
    Tensor ffn_norm_gain;   // [d_model]
    Tensor w_gate, w_up;    // [d_model, d_ff]
    Tensor w_down;          // [d_ff, d_model]
};

// The mask predictor's weights. One parameter set serves both attention
// modes; the mode lives in the config, not here.
struct ModelParams {
    Tensor embedding;  // [vocab, d_model]
    std::vector<LayerParams> layers;
    Tensor final_norm_gain;  // [d_model]
    Tensor lm_head;          // [d_model, vocab]

    std::vector<std::pair<std::string, Tensor>> named() const {
        std::vector<std::pair<std::string, Tensor>> out;
        out.emplace_back("embedding", embedding);
        for (size_t i = 0; i < layers.size(); ++i) {
            const std::string p = "layers." + std::to_string(i) + ".";
            out.emplace_back(p + "attn_norm_gain", layers[i].attn_norm_gain);
            out.emplace_back(p + "wq", layers[i].wq);
            out.emplace_back(p + "wk", layers[i].wk);
            out.emplace_back(p + "wv", layers[i].wv);
            out.emplace_back(p + "wo", layers[i].wo);
            out.emplace_back(p + "ffn_norm_gain", layers[i].ffn_norm_gain);
            out.emplace_back(p + "w_gate", layers[i].w_gate);
            out.emplace_back(p + "w_up", layers[i].w_up);
            out.emplace_back(p + "w_down", layers[i].w_down);
        }
        out.emplace_back("final_norm_gain", final_norm_gain);
        out.emplace_back("lm_head", lm_head);
        return out;
    }

    size_t count() const {
        size_t n = 0;
        for (const auto& [name, t] : named()) n += t.numel();
        return n;
    }

    void zero_grad() const {
        for (auto& [name, t] : named()) const_cast<Tensor&>(t).zero_grad();
    }
};

namespace detail {

inline Tensor init_projection(Shape shape, RandomStream& rng, double std_dev = 0.02) {
    Tensor t = Tensor::zeros(std::move(shape), /*requires_grad=*/true);
    for (auto& v : t.data()) v = Real(rng.truncated_normal(std_dev));
    return t;
}

inline Tensor init_gain(int d) {
    Tensor t = Tensor::full({d}, Real(1));
    t.set_requires_grad(true);
    return t;
}

}  // namespace detail

// Truncated-normal init (std 0.02) for projections, unit gains for norms.
// Deterministic in (config, seed): each tensor draws from its own forked
// stream keyed by parameter name.
inline ModelParams init_params(const TransformerConfig& cfg, uint64_t seed) {
    cfg.validate();
    RandomStream root(seed);
    ModelParams p;
    {
        auto r = root.fork("embedding");
        p.embedding = detail::init_projection({cfg.vocab_size, cfg.d_model}, r);
    }
    p.layers.resize(size_t(cfg.n_layers));
    for (int i = 0; i < cfg.n_layers; ++i) {
        LayerParams& L = p.layers[size_t(i)];
        auto lr = root.fork("layer").fork(uint64_t(i));
        L.attn_norm_gain = detail::init_gain(cfg.d_model);
        {
            auto r = lr.fork("wq");
            L.wq = detail::init_projection({cfg.d_model, cfg.d_model}, r);
        }
        {
            auto r = lr.fork("wk");
            L.wk = detail::init_projection({cfg.d_model, cfg.d_model}, r);
        }
        {
            auto r = lr.fork("wv");
            L.wv = detail::init_projection({cfg.d_model, cfg.d_model}, r);
        }
        {
            auto r = lr.fork("wo");
            L.wo = detail::init_projection({cfg.d_model, cfg.d_model}, r);
        }
        L.ffn_norm_gain = detail::init_gain(cfg.d_model);
        {
            auto r = lr.fork("w_gate");
            L.w_gate = detail::init_projection({cfg.d_model, cfg.d_ff}, r);
        }
        {
            auto r = lr.fork("w_up");
            L.w_up = detail::init_projection({cfg.d_model, cfg.d_ff}, r);
        }
        {
            auto r = lr.fork("w_down");
            L.w_down = detail::init_projection({cfg.d_ff, cfg.d_model}, r);
        }
    }
    p.final_norm_gain = detail::init_gain(cfg.d_model);
    {
        auto r = root.fork("lm_head");
        p.lm_head = detail::init_projection({cfg.d_model, cfg.vocab_size}, r);
    }
    return p;
}

// Forward pass: tokens [B,L] -> logits [B,L,V]. The prediction head is
// shifted: logits at position i are the model's distribution for the token
// at position i+1, in both attention modes.
inline Tensor forward(const ModelParams& params, const TransformerConfig& cfg,
                      const std::vector<int>& tokens, int batch, int length, AttentionMode mode) {
    if (length > cfg.max_seq_len)
        throw CapacityError("forward: sequence length " + std::to_string(length) + " exceeds max_seq_len " +
                            std::to_string(cfg.max_seq_len));
    if (tokens.size() != size_t(batch) * size_t(length))
        throw ShapeError("forward: tokens size " + std::to_string(tokens.size()) + " != batch*length");
    const int heads = cfg.n_heads;
    const double att_scale = 1.0 / std::sqrt(double(cfg.d_model / heads));

    Tensor h = embedding(params.embedding, tokens, batch, length);
    for (const LayerParams& L : params.layers) {
        Tensor a = rmsnorm(h, L.attn_norm_gain);
        Tensor q = rope(split_heads(matmul(a, L.wq), heads), cfg.rope_base);
        Tensor k = rope(split_heads(matmul(a, L.wk), heads), cfg.rope_base);
        Tensor v = split_heads(matmul(a, L.wv), heads);
        Tensor scores = scale(matmul(q, transpose_last2(k)), att_scale);
        if (mode == AttentionMode::causal) scores = add_causal_mask(scores);
        Tensor att = softmax_lastdim(scores);
        Tensor ctx = merge_heads(matmul(att, v));
        h = add(h, matmul(ctx, L.wo));

        Tensor f = rmsnorm(h, L.ffn_norm_gain);
        Tensor gated = mul(silu(matmul(f, L.w_gate)), matmul(f, L.w_up));
        h = add(h, matmul(gated, L.w_down));
    }
    return matmul(rmsnorm(h, params.final_norm_gain), params.lm_head);
}

inline Tensor forward(const ModelParams& params, const TransformerConfig& cfg,
                      const std::vector<int>& tokens, int batch, int length) {
    return forward(params, cfg, tokens, batch, length, cfg.attention_mode);
}

// AR -> diffusion initialization: parameters are copied verbatim, only the
// attention mode flips from causal to full.
inline std::pair<ModelParams, TransformerConfig> to_diffusion_init(const ModelParams& ar_params,
                                                                   const TransformerConfig& ar_config) {
    if (ar_config.attention_mode != AttentionMode::causal)
        throw UsageError("to_diffusion_init: source config must be causal");
    TransformerConfig cfg = ar_config;
    cfg.attention_mode = AttentionMode::full;

    auto copy_tensor = [](const Tensor& t) {
        Tensor c = Tensor::from_data(t.shape(), t.data(), /*requires_grad=*/true);
        return c;
    };
    ModelParams p;
    p.embedding = copy_tensor(ar_params.embedding);
    p.layers.reserve(ar_params.layers.size());
    for (const LayerParams& L : ar_params.layers) {
        LayerParams c;
        c.attn_norm_gain = copy_tensor(L.attn_norm_gain);
        c.wq = copy_tensor(L.wq);
        c.wk = copy_tensor(L.wk);
        c.wv = copy_tensor(L.wv);
        c.wo = copy_tensor(L.wo);
        c.ffn_norm_gain = copy_tensor(L.ffn_norm_gain);
        c.w_gate = copy_tensor(L.w_gate);
        c.w_up = copy_tensor(L.w_up);
        c.w_down = copy_tensor(L.w_down);
        p.layers.push_back(std::move(c));
    }
    p.final_norm_gain = copy_tensor(ar_params.final_norm_gain);
    p.lm_head = copy_tensor(ar_params.lm_head);
    return {std::move(p), cfg};
}

}  // namespace ddlm
