#pragma once

#include <string>
#include <vector>

#include "mvdetr/scene.hpp"

namespace mvdetr {

// Scene dataset layout: scenes/<id>/{color.ppm, depth.bin, gt.json,
// meta.json} plus a top-level manifest.json with ids and split labels.

void write_ppm(const std::string& path, const ColorFrame& frame);
ColorFrame read_ppm(const std::string& path);

// depth.bin: 16-byte header (magic "MVDDEPTH", u32 width, u32 height),
// then row-major little-endian f32 depths.
void write_depth(const std::string& path, const DepthFrame& frame);
DepthFrame read_depth(const std::string& path);

void write_ply(const std::string& path, const ColoredPointCloud& cloud);

struct SceneRecord {
    std::string id;
    Scene scene;
};

// Writes color.ppm/depth.bin/gt.json/meta.json for one scene.
void save_scene_dir(const std::string& dir, const Scene& scene);

struct LoadedScene {
    Scene scene;  // ground truth + camera
    ColorFrame color;
    DepthFrame depth;
};

LoadedScene load_scene_dir(const std::string& dir);

struct Manifest {
    std::vector<std::string> train_ids;
    std::vector<std::string> val_ids;
};

void write_manifest(const std::string& path, const Manifest& m);
Manifest read_manifest(const std::string& path);

// Deterministic 7:1 train/val split by hash of the scene id.
bool is_validation_id(const std::string& id);

}  // namespace mvdetr
