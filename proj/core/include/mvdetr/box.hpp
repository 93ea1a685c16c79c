#pragma once

#include <array>

#include "mvdetr/camera.hpp"

namespace mvdetr {

// Yaw rotates about the vertical axis (+Y in the camera convention).
inline Vec3 rotate_yaw(const Vec3& p, double yaw) {
    double c = std::cos(yaw), s = std::sin(yaw);
    return {c * p.x + s * p.z, p.y, -s * p.x + c * p.z};
}

inline double wrap_angle(double a) {
    double r = std::remainder(a, 2.0 * M_PI);
    if (r <= -M_PI) r += 2.0 * M_PI;
    return r;
}

// Oriented 3D box; size components (w,l,h) map to the local x/y/z axes.
struct Box3D {
    Vec3 center;
    Vec3 size;
    double yaw = 0;    // radians, normalized to (-pi, pi]
    int class_id = 0;  // [0, C)
    double score = 1;  // predictions only

    void validate() const {
        if (!(size.x > 0 && size.y > 0 && size.z > 0))
            throw ContractError("Box3D: size must be strictly positive");
    }

    // The 8 vertices in canonical sign order (---, --+, -+-, -++, +--, ...).
    std::array<Vec3, 8> vertices() const {
        std::array<Vec3, 8> vs;
        for (int j = 0; j < 8; ++j) {
            Vec3 local{(j & 4 ? 0.5 : -0.5) * size.x, (j & 2 ? 0.5 : -0.5) * size.y,
                       (j & 1 ? 0.5 : -0.5) * size.z};
            vs[static_cast<std::size_t>(j)] = center + rotate_yaw(local, yaw);
        }
        return vs;
    }

    // Axis-aligned hull of the rotated box (vertical extent unaffected).
    void aabb(Vec3& lo, Vec3& hi) const {
        double c = std::abs(std::cos(yaw)), s = std::abs(std::sin(yaw));
        double hx = 0.5 * (c * size.x + s * size.z);
        double hz = 0.5 * (s * size.x + c * size.z);
        double hy = 0.5 * size.y;
        lo = {center.x - hx, center.y - hy, center.z - hz};
        hi = {center.x + hx, center.y + hy, center.z + hz};
    }
};

// Axis-aligned 3D IoU over the boxes' hulls (ScanNet-style protocol).
double iou3d(const Box3D& a, const Box3D& b);

}  // namespace mvdetr
