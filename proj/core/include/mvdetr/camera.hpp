#pragma once

#include <vector>

#include "mvdetr/common.hpp"

namespace mvdetr {

struct Vec3 {
    double x = 0, y = 0, z = 0;

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
};

// Pinhole camera. Convention: +Z forward, +X right, +Y down; (u,v) is
// (column, row) treated as a continuous pixel center.
struct CameraIntrinsics {
    double fx = 0, fy = 0, cx = 0, cy = 0;
    int width = 0, height = 0;

    void validate() const {
        if (fx <= 0 || fy <= 0) throw ContractError("intrinsics: focal lengths must be positive");
        if (!(cx > 0 && cx < width && cy > 0 && cy < height))
            throw ContractError("intrinsics: principal point outside image");
    }

    // Eq.-style unprojection of one pixel at a given depth.
    Vec3 unproject_pixel(double u, double v, double depth) const {
        return {(u - cx) * depth / fx, (v - cy) * depth / fy, depth};
    }

    // Inverse mapping; z must be positive.
    std::pair<double, double> project(const Vec3& p) const {
        return {p.x * fx / p.z + cx, p.y * fy / p.z + cy};
    }
};

// Depth in meters; 0 marks invalid depth.
struct DepthFrame {
    int width = 0, height = 0;
    std::vector<float> depth;  // row-major

    float at(int u, int v) const { return depth[static_cast<std::size_t>(v) * width + u]; }
    float& at(int u, int v) { return depth[static_cast<std::size_t>(v) * width + u]; }
};

// RGB in [0,1], row-major, 3 floats per pixel.
struct ColorFrame {
    int width = 0, height = 0;
    std::vector<float> rgb;

    const float* at(int u, int v) const {
        return rgb.data() + (static_cast<std::size_t>(v) * width + u) * 3;
    }
    float* at(int u, int v) { return rgb.data() + (static_cast<std::size_t>(v) * width + u) * 3; }
};

struct CloudPoint {
    float position[3];  // camera frame, meters
    float color[3];
    int pixel[2];  // (u, v) source pixel
};

struct ColoredPointCloud {
    std::vector<CloudPoint> points;

    std::size_t size() const { return points.size(); }
};

// Unprojects every pixel with depth > 0 into a colored camera-frame
// point; zero-depth pixels are dropped.
ColoredPointCloud unproject(const DepthFrame& depth, const ColorFrame& color,
                            const CameraIntrinsics& k);

// Seeded subsample to exactly n points: without replacement when the
// cloud is large enough, otherwise with replacement.
ColoredPointCloud sample_points(const ColoredPointCloud& cloud, int n, std::uint64_t seed);

}  // namespace mvdetr
