#pragma once

#include <vector>

#include "mvdetr/camera.hpp"
#include "mvdetr/nn.hpp"

namespace mvdetr {

struct VisualEncoderConfig {
    int width1 = 8;    // stage-1 channels
    int width2 = 16;   // stage-2 channels, equals the geometry d
    int heads = 2;
    // two stride-2 stages -> total stride 4
};

template <class T>
struct FeatureMapT {
    TensorT<T> features;  // (H'*W') x C, row-major over the grid
    int height = 0, width = 0;
    int stride = 1;
};

// ReLU linear attention for one head: out_i = phi(q_i)(phi(K)^T V) /
// (phi(q_i) . phi(K)^T 1 + eps). Linear in the token count.
template <class T>
TensorT<T> relu_linear_attention(const TensorT<T>& q, const TensorT<T>& k, const TensorT<T>& v,
                                 T eps = T(1e-6)) {
    if (q.cols() != k.cols() || k.rows() != v.rows())
        throw ContractError("relu_linear_attention: shape mismatch");
    auto pq = relu(q), pk = relu(k);
    auto kv = matmul(transpose(pk), v);                       // C x Cv
    auto numer = matmul(pq, kv);                              // T x Cv
    auto ksum = matmul(transpose(pk), TensorT<T>::full({k.rows(), 1}, T(1)));  // C x 1
    auto denom = add_scalar(matmul(pq, ksum), eps);           // T x 1
    auto denom_full = matmul(denom, TensorT<T>::full({1, v.cols()}, T(1)));
    return div(numer, denom_full);
}

// Reduced two-stage linear-attention backbone: two 3x3 stride-2
// conv+BN+GELU stems, then one multi-head ReLU linear attention block
// with a residual connection. Parameters live under "visual.".
template <class T>
class VisualEncoder {
public:
    VisualEncoder(ParamStore<T>& ps, const VisualEncoderConfig& cfg) : cfg_(cfg) {
        conv1_ = LinearLayer<T>::create(ps, "visual.conv1", 9 * 3, cfg.width1);
        bn1_ = BatchNormLayer<T>::create(ps, "visual.conv1.bn", cfg.width1);
        conv2_ = LinearLayer<T>::create(ps, "visual.conv2", 9 * cfg.width1, cfg.width2);
        bn2_ = BatchNormLayer<T>::create(ps, "visual.conv2.bn", cfg.width2);
        wq_ = LinearLayer<T>::create(ps, "visual.attn.q", cfg.width2, cfg.width2);
        wk_ = LinearLayer<T>::create(ps, "visual.attn.k", cfg.width2, cfg.width2);
        wv_ = LinearLayer<T>::create(ps, "visual.attn.v", cfg.width2, cfg.width2);
        wo_ = LinearLayer<T>::create(ps, "visual.attn.out", cfg.width2, cfg.width2);
    }

    const VisualEncoderConfig& config() const { return cfg_; }

    FeatureMapT<T> encode(const ColorFrame& frame, BnMode mode) const {
        int h = frame.height, w = frame.width;
        std::vector<T> img(static_cast<std::size_t>(h) * w * 3);
        for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<T>(frame.rgb[i]);
        auto x = TensorT<T>::from_data({h * w, 3}, std::move(img));
        return encode_tensor(x, h, w, mode);
    }

    // Same pipeline with the image already as an (H*W) x 3 tensor, so
    // gradients can flow back into the pixels when needed.
    FeatureMapT<T> encode_tensor(const TensorT<T>& x, int h, int w, BnMode mode) const {
        auto s1 = gelu(bn1_(conv1_(im2col3x3(x, h, w, 2)), mode));
        int h1 = (h - 1) / 2 + 1, w1 = (w - 1) / 2 + 1;
        auto s2 = gelu(bn2_(conv2_(im2col3x3(s1, h1, w1, 2)), mode));
        int h2 = (h1 - 1) / 2 + 1, w2 = (w1 - 1) / 2 + 1;

        auto q = wq_(s2), k = wk_(s2), v = wv_(s2);
        int ch = cfg_.width2 / cfg_.heads;
        TensorT<T> attn;
        for (int hd = 0; hd < cfg_.heads; ++hd) {
            auto out = relu_linear_attention(slice_cols(q, hd * ch, (hd + 1) * ch),
                                             slice_cols(k, hd * ch, (hd + 1) * ch),
                                             slice_cols(v, hd * ch, (hd + 1) * ch));
            attn = hd == 0 ? out : concat_cols(attn, out);
        }
        auto y = add(s2, wo_(attn));
        return {y, h2, w2, 4};
    }

    // Bilinear per-point texture features at the points' source pixels,
    // using the half-texel alignment (u/s - 0.5, v/s - 0.5).
    TensorT<T> sample_point_features(const FeatureMapT<T>& map,
                                     const std::vector<std::pair<double, double>>& pixels) const {
        std::vector<std::pair<double, double>> coords(pixels.size());
        for (std::size_t i = 0; i < pixels.size(); ++i)
            coords[i] = {pixels[i].first / map.stride - 0.5, pixels[i].second / map.stride - 0.5};
        return bilinear_sample(map.features, map.height, map.width, coords);
    }

private:
    VisualEncoderConfig cfg_;
    LinearLayer<T> conv1_, conv2_, wq_, wk_, wv_, wo_;
    BatchNormLayer<T> bn1_, bn2_;
};

}  // namespace mvdetr
