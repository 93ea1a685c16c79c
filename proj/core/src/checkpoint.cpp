#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "mvdetr/nn.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace mvdetr {

namespace {
constexpr char kMagic[8] = {'M', 'V', 'D', 'E', 'T', 'R', 'W', '1'};
}

void save_checkpoint(const std::string& path, const ParamStore<float>& store) {
    nlohmann::json header = nlohmann::json::object();
    std::uint64_t offset = 0;
    for (const auto& e : store.entries()) {
        header[e.name] = {{"shape", e.tensor.shape()}, {"offset", offset}};
        offset += e.tensor.numel() * sizeof(float);
    }
    std::string hs = header.dump();
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open checkpoint for writing: " + path);
    f.write(kMagic, 8);
    std::uint64_t hlen = hs.size();
    f.write(reinterpret_cast<const char*>(&hlen), 8);
    f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto& e : store.entries())
        f.write(reinterpret_cast<const char*>(e.tensor.data().data()),
                static_cast<std::streamsize>(e.tensor.numel() * sizeof(float)));
    if (!f) throw IoError("failed writing checkpoint: " + path);
}

namespace {

nlohmann::json read_header(std::ifstream& f, const std::string& path) {
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kMagic, 8) != 0)
        throw IoError("not a checkpoint file (bad magic): " + path);
    std::uint64_t hlen = 0;
    f.read(reinterpret_cast<char*>(&hlen), 8);
    std::string hs(hlen, '\0');
    f.read(hs.data(), static_cast<std::streamsize>(hlen));
    if (!f) throw IoError("truncated checkpoint header: " + path);
    return nlohmann::json::parse(hs);
}

}  // namespace

void load_checkpoint(const std::string& path, ParamStore<float>& store, bool partial) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint: " + path);
    nlohmann::json header = read_header(f, path);
    std::uint64_t blob_start = 16 + header.dump().size();
    // header.dump() may differ in byte count from the stored string; track
    // the real blob start from the stream position instead.
    blob_start = static_cast<std::uint64_t>(f.tellg());

    if (!partial) {
        for (const auto& e : store.entries())
            if (!header.contains(e.name))
                throw IoError("checkpoint missing parameter: " + e.name);
        for (auto it = header.begin(); it != header.end(); ++it)
            if (!store.find(it.key())) throw IoError("checkpoint has extra parameter: " + it.key());
    }
    for (const auto& e : store.entries()) {
        auto it = header.find(e.name);
        if (it == header.end()) continue;
        std::vector<int> shape = (*it)["shape"].get<std::vector<int>>();
        if (shape != e.tensor.shape())
            throw IoError("checkpoint shape mismatch for " + e.name);
        std::uint64_t off = (*it)["offset"].get<std::uint64_t>();
        f.seekg(static_cast<std::streamoff>(blob_start + off));
        auto* entry = store.find(e.name);
        f.read(reinterpret_cast<char*>(entry->tensor.mutable_data().data()),
               static_cast<std::streamsize>(entry->tensor.numel() * sizeof(float)));
        if (!f) throw IoError("truncated checkpoint blob for " + e.name);
    }
}

std::vector<std::pair<std::string, std::vector<int>>> inspect_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint: " + path);
    nlohmann::json header = read_header(f, path);
    std::vector<std::pair<std::string, std::vector<int>>> out;
    for (auto it = header.begin(); it != header.end(); ++it)
        out.emplace_back(it.key(), (*it)["shape"].get<std::vector<int>>());
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace mvdetr
