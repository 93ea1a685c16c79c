#include "mvdetr/camera.hpp"

#include <algorithm>

namespace mvdetr {

ColoredPointCloud unproject(const DepthFrame& depth, const ColorFrame& color,
                            const CameraIntrinsics& k) {
    k.validate();
    if (depth.width != k.width || depth.height != k.height || color.width != k.width ||
        color.height != k.height)
        throw ContractError("unproject: frame dimensions do not match intrinsics");
    ColoredPointCloud cloud;
    cloud.points.reserve(static_cast<std::size_t>(k.width) * k.height);
    for (int v = 0; v < k.height; ++v)
        for (int u = 0; u < k.width; ++u) {
            float d = depth.at(u, v);
            if (!(d > 0.0f)) continue;
            Vec3 p = k.unproject_pixel(u, v, d);
            const float* c = color.at(u, v);
            cloud.points.push_back({{static_cast<float>(p.x), static_cast<float>(p.y),
                                     static_cast<float>(p.z)},
                                    {c[0], c[1], c[2]},
                                    {u, v}});
        }
    if (cloud.points.empty()) throw ContractError("unproject: no pixel has valid depth");
    return cloud;
}

ColoredPointCloud sample_points(const ColoredPointCloud& cloud, int n, std::uint64_t seed) {
    if (n <= 0) throw ContractError("sample_points: n must be positive");
    if (cloud.points.empty()) throw ContractError("sample_points: empty cloud");
    Rng rng = Rng::substream(seed, "sample_points");
    ColoredPointCloud out;
    out.points.reserve(static_cast<std::size_t>(n));
    std::size_t total = cloud.points.size();
    if (total >= static_cast<std::size_t>(n)) {
        // partial Fisher-Yates over an index table
        std::vector<std::uint32_t> idx(total);
        for (std::size_t i = 0; i < total; ++i) idx[i] = static_cast<std::uint32_t>(i);
        for (int i = 0; i < n; ++i) {
            std::uint32_t j = static_cast<std::uint32_t>(i) +
                              rng.uniform_index(static_cast<std::uint32_t>(total - i));
            std::swap(idx[static_cast<std::size_t>(i)], idx[j]);
            out.points.push_back(cloud.points[idx[static_cast<std::size_t>(i)]]);
        }
    } else {
        for (int i = 0; i < n; ++i)
            out.points.push_back(
                cloud.points[rng.uniform_index(static_cast<std::uint32_t>(total))]);
    }
    return out;
}

}  // namespace mvdetr
