#pragma once

#include "mvdetr/decoder.hpp"
#include "mvdetr/geometry_encoder.hpp"
#include "mvdetr/scene.hpp"
#include "mvdetr/visual_encoder.hpp"

namespace mvdetr {

struct ModelConfig {
    GeometryEncoderConfig geometry;
    VisualEncoderConfig visual;
    DecoderConfig decoder;
    int sample_points = 2048;
};

// One scene preprocessed for the network: a fixed-size camera-frame point
// sample with source pixels, the KNN graph, and the color image.
struct SceneInput {
    std::vector<std::array<double, 3>> positions;      // N x 3, camera frame
    std::vector<std::pair<double, double>> pixels;     // source (u, v) per point
    std::vector<int> neighbors;                        // N x k KNN graph
    ColorFrame color;
};

inline SceneInput preprocess_scene(const ColorFrame& color, const DepthFrame& depth,
                                   const CameraIntrinsics& intrinsics, int n_points, int k,
                                   std::uint64_t sample_seed) {
    auto cloud = sample_points(unproject(depth, color, intrinsics), n_points, sample_seed);
    SceneInput input;
    input.positions.reserve(cloud.points.size());
    input.pixels.reserve(cloud.points.size());
    for (const auto& p : cloud.points) {
        input.positions.push_back({p.position[0], p.position[1], p.position[2]});
        input.pixels.emplace_back(p.pixel[0], p.pixel[1]);
    }
    input.neighbors = knn(input.positions, k);
    input.color = color;
    return input;
}

// The full pipeline: geometry and visual encoders in parallel, VG fusion,
// set-prediction decoding. Owns the parameter store.
template <class T>
class MvDetr {
public:
    MvDetr(const ModelConfig& cfg, std::uint64_t init_seed)
        : cfg_(cfg),
          params_(init_seed),
          geometry_(params_, cfg.geometry),
          visual_(params_, cfg.visual),
          connector_(params_, cfg.geometry.d),
          decoder_(params_, cfg.decoder, 2 * cfg.geometry.d) {}

    const ModelConfig& config() const { return cfg_; }
    ParamStore<T>& params() { return params_; }
    const ParamStore<T>& params() const { return params_; }
    const GeometryEncoder<T>& geometry() const { return geometry_; }
    const VisualEncoder<T>& visual() const { return visual_; }
    const VgConnector<T>& connector() const { return connector_; }
    const Decoder<T>& decoder() const { return decoder_; }

    FusedPointFeatures<T> encode(const SceneInput& input, BnMode mode,
                                 bool mask_visual = false) const {
        int n = static_cast<int>(input.positions.size());
        std::vector<T> xyz(static_cast<std::size_t>(n) * 3);
        for (int i = 0; i < n; ++i)
            for (int a = 0; a < 3; ++a)
                xyz[static_cast<std::size_t>(i) * 3 + a] =
                    static_cast<T>(input.positions[static_cast<std::size_t>(i)][static_cast<std::size_t>(a)]);
        auto geo = geometry_.encode(TensorT<T>::from_data({n, 3}, std::move(xyz)),
                                    input.neighbors, mode);
        TensorT<T> vis;
        if (mask_visual) {
            // geometry-only ablation: the visual branch contributes zeros
            vis = TensorT<T>::zeros({n, cfg_.geometry.d});
        } else {
            auto map = visual_.encode(input.color, mode);
            vis = visual_.sample_point_features(map, input.pixels);
        }
        return {connector_.fuse(geo, vis, mode), input.positions};
    }

    std::vector<QuerySetT<T>> forward(const SceneInput& input, BnMode mode,
                                      bool mask_visual = false) const {
        return decoder_.forward(encode(input, mode, mask_visual));
    }

private:
    ModelConfig cfg_;
    ParamStore<T> params_;
    GeometryEncoder<T> geometry_;
    VisualEncoder<T> visual_;
    VgConnector<T> connector_;
    Decoder<T> decoder_;
};

}  // namespace mvdetr
