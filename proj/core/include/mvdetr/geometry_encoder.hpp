#pragma once

#include <vector>

#include "mvdetr/nn.hpp"

namespace mvdetr {

struct GeometryEncoderConfig {
    int d = 16;       // point feature dimension
    int k = 5;        // neighbor count
    int layers = 2;   // KNN communication layers
};

// Exact k-nearest-neighbor index: row i holds the k nearest points to
// point i by squared Euclidean distance, self excluded, ties broken by
// lower point index. Distances are evaluated in double.
std::vector<int> knn(const std::vector<std::array<double, 3>>& points, int k);

// Point-level geometry features: xyz embedding to d dims followed by
// `layers` rounds of DGCNN-style neighbor communication. The KNN graph
// is built once from the input xyz and reused by every layer.
template <class T>
class GeometryEncoder {
public:
    GeometryEncoder(ParamStore<T>& ps, const GeometryEncoderConfig& cfg) : cfg_(cfg) {
        embed_ = LinearLayer<T>::create(ps, "geometry.embed", 3, cfg.d);
        embed_bn_ = BatchNormLayer<T>::create(ps, "geometry.embed.bn", cfg.d);
        for (int l = 0; l < cfg.layers; ++l) {
            std::string prefix = "geometry.comm" + std::to_string(l);
            comm_.push_back(LinearLayer<T>::create(ps, prefix, 2 * cfg.d, cfg.d));
            comm_bn_.push_back(BatchNormLayer<T>::create(ps, prefix + ".bn", cfg.d));
        }
    }

    const GeometryEncoderConfig& config() const { return cfg_; }

    TensorT<T> point_embed(const TensorT<T>& xyz, BnMode mode) const {
        return gelu(embed_bn_(embed_(xyz), mode));
    }

    // One communication round: f'_i = max_j MLP([f_i ; f_j - f_i]).
    TensorT<T> communicate(const TensorT<T>& features, const std::vector<int>& idx, int layer,
                           BnMode mode) const {
        int n = features.rows();
        int k = cfg_.k;
        if (static_cast<int>(idx.size()) != n * k)
            throw ContractError("communicate: neighbor index size mismatch");
        std::vector<int> center(idx.size());
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < k; ++j) center[static_cast<std::size_t>(i) * k + j] = i;
        auto fi = gather_rows(features, center);
        auto fj = gather_rows(features, idx);
        auto edge = concat_cols(fi, sub(fj, fi));
        auto h = gelu(comm_bn_[static_cast<std::size_t>(layer)](
            comm_[static_cast<std::size_t>(layer)](edge), mode));
        return group_max(h, k);
    }

    TensorT<T> encode(const TensorT<T>& xyz, const std::vector<int>& idx, BnMode mode) const {
        auto f = point_embed(xyz, mode);
        for (int l = 0; l < cfg_.layers; ++l) f = communicate(f, idx, l, mode);
        return f;
    }

private:
    GeometryEncoderConfig cfg_;
    LinearLayer<T> embed_;
    BatchNormLayer<T> embed_bn_;
    std::vector<LinearLayer<T>> comm_;
    std::vector<BatchNormLayer<T>> comm_bn_;
};

}  // namespace mvdetr
