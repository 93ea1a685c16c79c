#pragma once

#include <array>
#include <string>
#include <vector>

#include "mvdetr/box.hpp"

namespace mvdetr {

struct SceneBox {
    Box3D box;
    std::array<float, 3> color;  // flat surface color
};

// Per-class sampling profile for the synthetic generator.
struct ClassProfile {
    Vec3 size_lo, size_hi;                      // uniform size range
    std::vector<std::array<float, 3>> palette;  // flat colors, one picked per box
};

struct GeneratorConfig {
    int min_objects = 1;
    int max_objects = 4;
    std::vector<ClassProfile> classes;
    Vec3 room_lo{-2.6, -2.0, -0.5};
    Vec3 room_hi{2.6, 2.0, 6.0};
    double place_z_lo = 1.6;
    double place_z_hi = 4.2;
    double frustum_margin = 0.92;  // fraction of the frustum half-extent usable for centers
    double max_yaw = M_PI;         // yaw sampled uniformly in [-max_yaw, max_yaw)

    static GeneratorConfig defaults();
};

// Synthetic stand-in for one RGBD frame: GT boxes with flat colors inside
// a walled room, plus the camera. Pose maps camera to world coordinates;
// the generator uses the identity pose so world == camera frame.
struct Scene {
    std::vector<SceneBox> boxes;
    Vec3 room_lo, room_hi;
    CameraIntrinsics intrinsics;
    std::array<double, 9> pose_rotation{1, 0, 0, 0, 1, 0, 0, 0, 1};  // camera -> world, row-major
    Vec3 pose_translation{0, 0, 0};

    Vec3 camera_to_world(const Vec3& p) const {
        const auto& r = pose_rotation;
        return Vec3{r[0] * p.x + r[1] * p.y + r[2] * p.z, r[3] * p.x + r[4] * p.y + r[5] * p.z,
                    r[6] * p.x + r[7] * p.y + r[8] * p.z} +
               pose_translation;
    }
};

// Ray-cast renderer: depth is the camera-frame z of the nearest box or
// room-wall hit, color is that surface's flat color. Deterministic.
std::pair<ColorFrame, DepthFrame> render_scene(const Scene& scene);

// Deterministic scene sampler; rejection-samples box placements until the
// axis-aligned hulls are pairwise disjoint.
Scene generate_scene(std::uint64_t seed, const GeneratorConfig& cfg,
                     const CameraIntrinsics& intrinsics);

// Checks the Scene invariants (box count, pairwise IoU 0, frustum
// visibility); throws ContractError with a description on violation.
void validate_scene(const Scene& scene, int max_objects);

}  // namespace mvdetr
