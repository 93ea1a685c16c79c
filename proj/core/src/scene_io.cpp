#include "mvdetr/scene_io.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

static_assert(std::endian::native == std::endian::little,
              "depth.bin format assumes a little-endian host");

namespace mvdetr {

namespace fs = std::filesystem;
using nlohmann::json;

void write_ppm(const std::string& path, const ColorFrame& frame) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + path);
    f << "P6\n" << frame.width << " " << frame.height << "\n255\n";
    std::vector<unsigned char> row(static_cast<std::size_t>(frame.width) * 3);
    for (int v = 0; v < frame.height; ++v) {
        for (int u = 0; u < frame.width; ++u) {
            const float* c = frame.at(u, v);
            for (int ch = 0; ch < 3; ++ch) {
                float x = std::clamp(c[ch], 0.0f, 1.0f);
                row[static_cast<std::size_t>(u) * 3 + ch] =
                    static_cast<unsigned char>(std::lround(x * 255.0f));
            }
        }
        f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!f) throw IoError("failed writing " + path);
}

ColorFrame read_ppm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    f >> magic >> w >> h >> maxval;
    if (magic != "P6" || maxval != 255 || w <= 0 || h <= 0)
        throw IoError("unsupported PPM file: " + path);
    f.get();  // single whitespace after header
    ColorFrame frame{w, h, std::vector<float>(static_cast<std::size_t>(w) * h * 3)};
    std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * 3);
    f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!f) throw IoError("truncated PPM file: " + path);
    for (std::size_t i = 0; i < raw.size(); ++i) frame.rgb[i] = raw[i] / 255.0f;
    return frame;
}

namespace {
constexpr char kDepthMagic[8] = {'M', 'V', 'D', 'D', 'E', 'P', 'T', 'H'};
}

void write_depth(const std::string& path, const DepthFrame& frame) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + path);
    f.write(kDepthMagic, 8);
    std::uint32_t w = static_cast<std::uint32_t>(frame.width);
    std::uint32_t h = static_cast<std::uint32_t>(frame.height);
    f.write(reinterpret_cast<const char*>(&w), 4);
    f.write(reinterpret_cast<const char*>(&h), 4);
    f.write(reinterpret_cast<const char*>(frame.depth.data()),
            static_cast<std::streamsize>(frame.depth.size() * sizeof(float)));
    if (!f) throw IoError("failed writing " + path);
}

DepthFrame read_depth(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kDepthMagic, 8) != 0)
        throw IoError("not a depth file (bad magic): " + path);
    std::uint32_t w = 0, h = 0;
    f.read(reinterpret_cast<char*>(&w), 4);
    f.read(reinterpret_cast<char*>(&h), 4);
    DepthFrame frame{static_cast<int>(w), static_cast<int>(h),
                     std::vector<float>(static_cast<std::size_t>(w) * h)};
    f.read(reinterpret_cast<char*>(frame.depth.data()),
           static_cast<std::streamsize>(frame.depth.size() * sizeof(float)));
    if (!f) throw IoError("truncated depth file: " + path);
    return frame;
}

void write_ply(const std::string& path, const ColoredPointCloud& cloud) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot write " + path);
    f << "ply\nformat ascii 1.0\nelement vertex " << cloud.points.size()
      << "\nproperty float x\nproperty float y\nproperty float z\n"
         "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
    for (const auto& p : cloud.points) {
        f << p.position[0] << " " << p.position[1] << " " << p.position[2];
        for (int ch = 0; ch < 3; ++ch)
            f << " " << static_cast<int>(std::lround(std::clamp(p.color[ch], 0.0f, 1.0f) * 255.0f));
        f << "\n";
    }
    if (!f) throw IoError("failed writing " + path);
}

namespace {

json vec3_json(const Vec3& v) { return json::array({v.x, v.y, v.z}); }
Vec3 vec3_from(const json& j) { return {j.at(0), j.at(1), j.at(2)}; }

}  // namespace

void save_scene_dir(const std::string& dir, const Scene& scene) {
    fs::create_directories(dir);
    auto [color, depth] = render_scene(scene);
    write_ppm(dir + "/color.ppm", color);
    write_depth(dir + "/depth.bin", depth);

    json gt;
    gt["boxes"] = json::array();
    for (const auto& sb : scene.boxes) {
        gt["boxes"].push_back({{"center", vec3_json(sb.box.center)},
                               {"size", vec3_json(sb.box.size)},
                               {"yaw", sb.box.yaw},
                               {"class", sb.box.class_id},
                               {"color", {sb.color[0], sb.color[1], sb.color[2]}}});
    }
    std::ofstream(dir + "/gt.json") << gt.dump(2) << "\n";

    json meta;
    meta["intrinsics"] = {{"fx", scene.intrinsics.fx}, {"fy", scene.intrinsics.fy},
                          {"cx", scene.intrinsics.cx}, {"cy", scene.intrinsics.cy},
                          {"width", scene.intrinsics.width}, {"height", scene.intrinsics.height}};
    meta["pose"] = {{"rotation", scene.pose_rotation}, {"translation", vec3_json(scene.pose_translation)}};
    meta["room"] = {{"lo", vec3_json(scene.room_lo)}, {"hi", vec3_json(scene.room_hi)}};
    std::ofstream(dir + "/meta.json") << meta.dump(2) << "\n";
}

LoadedScene load_scene_dir(const std::string& dir) {
    LoadedScene ls;
    ls.color = read_ppm(dir + "/color.ppm");
    ls.depth = read_depth(dir + "/depth.bin");

    std::ifstream gtf(dir + "/gt.json");
    if (!gtf) throw IoError("cannot open " + dir + "/gt.json");
    json gt = json::parse(gtf);
    for (const auto& jb : gt.at("boxes")) {
        SceneBox sb;
        sb.box.center = vec3_from(jb.at("center"));
        sb.box.size = vec3_from(jb.at("size"));
        sb.box.yaw = jb.at("yaw");
        sb.box.class_id = jb.at("class");
        if (jb.contains("color")) {
            sb.color = {jb["color"].at(0).get<float>(), jb["color"].at(1).get<float>(),
                        jb["color"].at(2).get<float>()};
        }
        ls.scene.boxes.push_back(sb);
    }

    std::ifstream mf(dir + "/meta.json");
    if (!mf) throw IoError("cannot open " + dir + "/meta.json");
    json meta = json::parse(mf);
    const json& ji = meta.at("intrinsics");
    ls.scene.intrinsics = {ji.at("fx"), ji.at("fy"), ji.at("cx"),
                           ji.at("cy"), ji.at("width"), ji.at("height")};
    const json& jp = meta.at("pose");
    for (int i = 0; i < 9; ++i)
        ls.scene.pose_rotation[static_cast<std::size_t>(i)] = jp.at("rotation").at(i);
    ls.scene.pose_translation = vec3_from(jp.at("translation"));
    ls.scene.room_lo = vec3_from(meta.at("room").at("lo"));
    ls.scene.room_hi = vec3_from(meta.at("room").at("hi"));
    return ls;
}

void write_manifest(const std::string& path, const Manifest& m) {
    json j;
    j["train"] = m.train_ids;
    j["val"] = m.val_ids;
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot write " + path);
    f << j.dump(2) << "\n";
}

Manifest read_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open " + path);
    json j = json::parse(f);
    return {j.at("train").get<std::vector<std::string>>(),
            j.at("val").get<std::vector<std::string>>()};
}

bool is_validation_id(const std::string& id) {
    // FNV-1a; one of every 8 ids lands in the validation split.
    std::uint64_t h = 14695981039346656037ull;
    for (char c : id) {
        h ^= static_cast<std::uint8_t>(c);
        h *= 1099511628211ull;
    }
    return h % 8 == 7;
}

}  // namespace mvdetr
