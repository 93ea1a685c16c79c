#pragma once

#include "mvdetr/nn.hpp"

namespace mvdetr {

// Per-point fused features plus the point positions the decoder needs.
template <class T>
struct FusedPointFeatures {
    TensorT<T> features;  // N x 32
    std::vector<std::array<double, 3>> positions;
};

// Concatenates [geometry ; visual] per point and mixes with one
// 32-perceptron MLP (bn then gelu). Parameters under "connector.".
template <class T>
class VgConnector {
public:
    VgConnector(ParamStore<T>& ps, int d) : dim_(2 * d) {
        mlp_ = LinearLayer<T>::create(ps, "connector.mlp", dim_, dim_);
        bn_ = BatchNormLayer<T>::create(ps, "connector.mlp.bn", dim_);
    }

    int output_dim() const { return dim_; }

    TensorT<T> fuse(const TensorT<T>& geo, const TensorT<T>& vis, BnMode mode) const {
        if (geo.rows() != vis.rows() || geo.cols() != vis.cols())
            throw ContractError("fuse: encoder output shape mismatch " +
                                detail::shape_str(geo.shape()) + " vs " +
                                detail::shape_str(vis.shape()));
        return gelu(bn_(mlp_(concat_cols(geo, vis)), mode));
    }

private:
    int dim_;
    LinearLayer<T> mlp_;
    BatchNormLayer<T> bn_;
};

}  // namespace mvdetr
