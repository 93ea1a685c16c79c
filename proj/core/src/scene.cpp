#include "mvdetr/scene.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mvdetr {

namespace {

// Quantize to the 8-bit grid used by the PPM writer so flat surface
// colors survive a save/load round trip exactly.
std::array<float, 3> quantized(float r, float g, float b) {
    auto q = [](float c) { return std::round(c * 255.0f) / 255.0f; };
    return {q(r), q(g), q(b)};
}

// Ray vs oriented box via the slab method in the box's local frame.
// Returns the entry distance, or +inf on miss.
double ray_obb(const Vec3& origin, const Vec3& dir, const Box3D& box) {
    Vec3 ol = rotate_yaw(origin - box.center, -box.yaw);
    Vec3 dl = rotate_yaw(dir, -box.yaw);
    double tmin = -std::numeric_limits<double>::infinity();
    double tmax = std::numeric_limits<double>::infinity();
    const double o[3] = {ol.x, ol.y, ol.z};
    const double d[3] = {dl.x, dl.y, dl.z};
    const double h[3] = {0.5 * box.size.x, 0.5 * box.size.y, 0.5 * box.size.z};
    for (int a = 0; a < 3; ++a) {
        if (std::abs(d[a]) < 1e-12) {
            if (o[a] < -h[a] || o[a] > h[a]) return std::numeric_limits<double>::infinity();
            continue;
        }
        double t0 = (-h[a] - o[a]) / d[a];
        double t1 = (h[a] - o[a]) / d[a];
        if (t0 > t1) std::swap(t0, t1);
        tmin = std::max(tmin, t0);
        tmax = std::min(tmax, t1);
        if (tmin > tmax) return std::numeric_limits<double>::infinity();
    }
    return tmin > 1e-9 ? tmin : std::numeric_limits<double>::infinity();
}

// Exit distance of a ray starting inside an AABB, with the exiting face
// index (0..5 = -x,+x,-y,+y,-z,+z).
double ray_aabb_exit(const Vec3& origin, const Vec3& dir, const Vec3& lo, const Vec3& hi,
                     int& face) {
    double best = std::numeric_limits<double>::infinity();
    face = -1;
    const double o[3] = {origin.x, origin.y, origin.z};
    const double d[3] = {dir.x, dir.y, dir.z};
    const double l[3] = {lo.x, lo.y, lo.z};
    const double h[3] = {hi.x, hi.y, hi.z};
    for (int a = 0; a < 3; ++a) {
        if (std::abs(d[a]) < 1e-12) continue;
        double t0 = (l[a] - o[a]) / d[a];
        double t1 = (h[a] - o[a]) / d[a];
        int f0 = 2 * a, f1 = 2 * a + 1;
        if (t0 > 1e-9 && t0 < best) {
            best = t0;
            face = f0;
        }
        if (t1 > 1e-9 && t1 < best) {
            best = t1;
            face = f1;
        }
    }
    return best;
}

constexpr std::array<std::array<float, 3>, 6> kWallColors = {{
    {0.72f, 0.70f, 0.66f},  // -x
    {0.66f, 0.70f, 0.72f},  // +x
    {0.78f, 0.76f, 0.72f},  // -y (ceiling side, +Y is down)
    {0.55f, 0.53f, 0.50f},  // +y (floor)
    {0.70f, 0.66f, 0.62f},  // -z
    {0.62f, 0.66f, 0.70f},  // +z (back wall)
}};

}  // namespace

GeneratorConfig GeneratorConfig::defaults() {
    GeneratorConfig cfg;
    cfg.classes = {
        {{0.55, 0.55, 0.55}, {0.95, 0.95, 0.95},
         {quantized(0.80f, 0.15f, 0.12f), quantized(0.70f, 0.25f, 0.20f)}},
        {{0.90, 0.35, 0.90}, {1.40, 0.55, 1.40},
         {quantized(0.15f, 0.65f, 0.20f), quantized(0.25f, 0.55f, 0.15f)}},
        {{0.40, 1.10, 0.40}, {0.65, 1.60, 0.65},
         {quantized(0.15f, 0.25f, 0.80f), quantized(0.20f, 0.35f, 0.70f)}},
        {{0.35, 0.35, 0.35}, {0.55, 0.55, 0.55},
         {quantized(0.85f, 0.75f, 0.10f), quantized(0.80f, 0.65f, 0.20f)}},
    };
    return cfg;
}

std::pair<ColorFrame, DepthFrame> render_scene(const Scene& scene) {
    const CameraIntrinsics& k = scene.intrinsics;
    k.validate();
    ColorFrame color{k.width, k.height,
                     std::vector<float>(static_cast<std::size_t>(k.width) * k.height * 3)};
    DepthFrame depth{k.width, k.height,
                     std::vector<float>(static_cast<std::size_t>(k.width) * k.height)};
    Vec3 origin = scene.pose_translation;
    for (int v = 0; v < k.height; ++v)
        for (int u = 0; u < k.width; ++u) {
            // dir has unit z in the camera frame, so the camera-frame
            // depth of a hit at parameter t is exactly t.
            Vec3 cam_dir{(u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0};
            Vec3 dir = scene.camera_to_world(cam_dir) - scene.pose_translation;
            int face = -1;
            double best = ray_aabb_exit(origin, dir, scene.room_lo, scene.room_hi, face);
            const float* best_color = face >= 0 ? kWallColors[static_cast<std::size_t>(face)].data()
                                                : kWallColors[0].data();
            for (const auto& sb : scene.boxes) {
                double t = ray_obb(origin, dir, sb.box);
                if (t < best) {
                    best = t;
                    best_color = sb.color.data();
                }
            }
            depth.at(u, v) = static_cast<float>(best);
            float* c = color.at(u, v);
            c[0] = best_color[0];
            c[1] = best_color[1];
            c[2] = best_color[2];
        }
    return {std::move(color), std::move(depth)};
}

Scene generate_scene(std::uint64_t seed, const GeneratorConfig& cfg,
                     const CameraIntrinsics& intrinsics) {
    if (cfg.classes.empty()) throw ContractError("generate_scene: no class profiles configured");
    if (cfg.min_objects < 1 || cfg.max_objects < cfg.min_objects)
        throw ContractError("generate_scene: bad object count range");
    intrinsics.validate();
    Rng rng = Rng::substream(seed, "scene");
    Scene scene;
    scene.intrinsics = intrinsics;
    scene.room_lo = cfg.room_lo;
    scene.room_hi = cfg.room_hi;
    int count = cfg.min_objects +
                static_cast<int>(rng.uniform_index(
                    static_cast<std::uint32_t>(cfg.max_objects - cfg.min_objects + 1)));
    int rejections = 0;
    while (static_cast<int>(scene.boxes.size()) < count) {
        if (rejections >= 1000)
            throw ContractError(
                "generate_scene: placement failed after 1000 rejections; "
                "use smaller or fewer objects");
        int cls = static_cast<int>(rng.uniform_index(static_cast<std::uint32_t>(cfg.classes.size())));
        const ClassProfile& prof = cfg.classes[static_cast<std::size_t>(cls)];
        Box3D box;
        box.size = {rng.uniform(prof.size_lo.x, prof.size_hi.x),
                    rng.uniform(prof.size_lo.y, prof.size_hi.y),
                    rng.uniform(prof.size_lo.z, prof.size_hi.z)};
        box.yaw = wrap_angle(rng.uniform(-cfg.max_yaw, cfg.max_yaw));
        box.class_id = cls;
        double z = rng.uniform(cfg.place_z_lo, cfg.place_z_hi);
        Vec3 lo, hi;
        box.center = {0, 0, z};
        box.aabb(lo, hi);
        double hull_hx = 0.5 * (hi.x - lo.x), hull_hy = 0.5 * (hi.y - lo.y),
               hull_hz = 0.5 * (hi.z - lo.z);
        // keep the whole hull inside the frustum at its near plane, and
        // inside the room with a small margin
        double znear = z - hull_hz;
        double room_ex = std::min(cfg.room_hi.x, -cfg.room_lo.x) - 0.1 - hull_hx;
        double room_ey = std::min(cfg.room_hi.y, -cfg.room_lo.y) - 0.1 - hull_hy;
        double ex = std::min(cfg.frustum_margin * znear * intrinsics.cx / intrinsics.fx - hull_hx,
                             room_ex);
        double ey = std::min(cfg.frustum_margin * znear * intrinsics.cy / intrinsics.fy - hull_hy,
                             room_ey);
        if (ex <= 0 || ey <= 0 || znear <= 0.2) {
            ++rejections;
            continue;
        }
        box.center.x = rng.uniform(-ex, ex);
        box.center.y = rng.uniform(-ey, ey);
        // require clear separation between hulls, not just IoU 0
        Box3D padded = box;
        padded.size = padded.size + Vec3{0.1, 0.1, 0.1};
        bool overlaps = false;
        for (const auto& other : scene.boxes)
            if (iou3d(padded, other.box) > 0) {
                overlaps = true;
                break;
            }
        if (overlaps) {
            ++rejections;
            continue;
        }
        const auto& palette = prof.palette;
        if (palette.empty()) throw ContractError("generate_scene: class palette empty");
        auto color = palette[rng.uniform_index(static_cast<std::uint32_t>(palette.size()))];
        scene.boxes.push_back({box, color});
    }
    return scene;
}

void validate_scene(const Scene& scene, int max_objects) {
    if (static_cast<int>(scene.boxes.size()) > max_objects)
        throw ContractError("scene: too many boxes");
    for (std::size_t i = 0; i < scene.boxes.size(); ++i) {
        const Box3D& b = scene.boxes[i].box;
        b.validate();
        for (std::size_t j = i + 1; j < scene.boxes.size(); ++j)
            if (iou3d(b, scene.boxes[j].box) > 0)
                throw ContractError("scene: boxes " + std::to_string(i) + " and " +
                                    std::to_string(j) + " overlap");
        // at least partially in the frustum: some vertex projects inside
        bool visible = false;
        for (const Vec3& vtx : b.vertices()) {
            if (vtx.z <= 0) continue;
            auto [u, v] = scene.intrinsics.project(vtx);
            if (u >= 0 && u < scene.intrinsics.width && v >= 0 && v < scene.intrinsics.height) {
                visible = true;
                break;
            }
        }
        if (!visible) throw ContractError("scene: box " + std::to_string(i) + " outside frustum");
    }
}

}  // namespace mvdetr
