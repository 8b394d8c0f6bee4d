#pragma once

#include "btk/backbone.hpp"

namespace btk {

struct EncoderConfig {
    int64_t d_model = 256;
    int64_t d_ffn = 1024;
    int64_t n_layers = 4;
    int64_t n_heads = 8;
    int64_t seq_len = 768;  // L = H * W of the backbone output grid
};

// 1x1 projection to the encoder width followed by a row-major spatial
// flatten: grid cell (i, j) becomes token i*W + j.
template <class T>
Tensor<T> project_and_flatten(const Tensor<T>& x, const Conv2dLayer<T>& proj) {
    Tensor<T> p = proj.forward(x);
    int64_t N = p.dim(0), d = p.dim(1), L = p.dim(2) * p.dim(3);
    return permute(reshape(p, {N, d, L}), {0, 2, 1});
}

// One post-norm encoder layer: x = LN(x + MHA(x)); x = LN(x + FFN(x)).
template <class T>
struct EncoderLayer {
    LinearLayer<T> wq, wk, wv, wo, ffn1, ffn2;
    LayerNormLayer<T> ln1, ln2;
    int64_t heads = 8;

    EncoderLayer() = default;
    EncoderLayer(int64_t d_model, int64_t d_ffn, int64_t heads_, Rng& rng)
        : wq(d_model, d_model, rng),
          wk(d_model, d_model, rng),
          wv(d_model, d_model, rng),
          wo(d_model, d_model, rng),
          ffn1(d_model, d_ffn, rng),
          ffn2(d_ffn, d_model, rng),
          ln1(d_model),
          ln2(d_model),
          heads(heads_) {
        check<ValueError>(d_model % heads_ == 0, "encoder: d_model ", d_model,
                          " not divisible by heads ", heads_);
    }

    Tensor<T> forward(const Tensor<T>& x, AttentionRecord<T>* rec) const {
        int64_t N = x.dim(0), L = x.dim(1), d = x.dim(2);
        int64_t dh = d / heads;
        Tensor<T> q = permute(reshape(wq.forward(x), {N, L, heads, dh}), {0, 2, 1, 3});
        Tensor<T> kT = permute(reshape(wk.forward(x), {N, L, heads, dh}), {0, 2, 3, 1});
        Tensor<T> v = permute(reshape(wv.forward(x), {N, L, heads, dh}), {0, 2, 1, 3});
        Tensor<T> attn =
            attention_probs<T>(q, kT, T(1.0 / std::sqrt(double(dh))), nullptr, nullptr, 0, 0);
        if (rec) detail::retain_attention<T>(rec->encoder, attn);
        Tensor<T> ctx = reshape(permute(matmul(attn, v), {0, 2, 1, 3}), {N, L, d});
        Tensor<T> h = ln1.forward(add(x, wo.forward(ctx)));
        Tensor<T> f = ffn2.forward(relu(ffn1.forward(h)));
        return ln2.forward(add(h, f));
    }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        wq.collect(prefix + ".wq", out);
        wk.collect(prefix + ".wk", out);
        wv.collect(prefix + ".wv", out);
        wo.collect(prefix + ".wo", out);
        ln1.collect(prefix + ".ln1", out);
        ffn1.collect(prefix + ".ffn1", out);
        ffn2.collect(prefix + ".ffn2", out);
        ln2.collect(prefix + ".ln2", out);
    }
};

// Encoder stack over the flattened feature sequence. A learnable position
// embedding [L x d] is added once before the first layer.
template <class T>
struct TransformerEncoder {
    EncoderConfig cfg;
    Tensor<T> pos_embedding;
    std::vector<EncoderLayer<T>> layers;

    TransformerEncoder() = default;
    TransformerEncoder(const EncoderConfig& cfg_, Rng& rng) : cfg(cfg_) {
        pos_embedding = Tensor<T>::randn({cfg.seq_len, cfg.d_model}, rng, T(0.02));
        pos_embedding.set_requires_grad(true);
        for (int64_t i = 0; i < cfg.n_layers; ++i)
            layers.emplace_back(cfg.d_model, cfg.d_ffn, cfg.n_heads, rng);
    }

    Tensor<T> forward(const Tensor<T>& seq, AttentionRecord<T>* rec) {
        check<ShapeError>(seq.rank() == 3 && seq.dim(1) == cfg.seq_len &&
                              seq.dim(2) == cfg.d_model,
                          "encoder: expected [N x ", cfg.seq_len, " x ", cfg.d_model, "], got ",
                          shape_str(seq.shape()));
        Tensor<T> x = add(seq, pos_embedding);
        for (auto& layer : layers) x = layer.forward(x, rec);
        return x;
    }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        out.add(prefix + ".pos_embedding", pos_embedding);
        for (size_t i = 0; i < layers.size(); ++i)
            layers[i].collect(prefix + ".layer" + std::to_string(i), out);
    }
};

}  // namespace btk
