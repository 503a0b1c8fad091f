#include "dynconv/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

namespace dynconv {

namespace {

constexpr char kMagic[8] = {'D', 'Y', 'N', 'C', 'O', 'N', 'V', '1'};

void put_u32_le(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f32_le(std::string& out, float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32_le(out, bits);
}

std::uint32_t get_u32_le(const std::string& buf, std::size_t at) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[at + static_cast<std::size_t>(i)])) << (8 * i);
    return v;
}

float get_f32_le(const std::string& buf, std::size_t at) {
    const std::uint32_t bits = get_u32_le(buf, at);
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
}

}  // namespace

void save_checkpoint(Model& model, const std::string& path) {
    const ModelSpec& spec = model.spec();
    nlohmann::json manifest;
    manifest["format"] = 1;
    manifest["preset"] = to_string(spec.preset);
    manifest["task"] = to_string(spec.task);
    manifest["width_multiplier"] = spec.width_multiplier;
    manifest["depth"] = spec.depth;
    manifest["num_classes"] = spec.num_classes;
    manifest["input_shape"] = spec.input_shape;
    manifest["kernels_per_bank"] = spec.kernels_per_bank;
    manifest["k_active"] = spec.k_active;
    manifest["kr_dim"] = spec.kr_dim;

    auto params = model.params();
    nlohmann::json entries = nlohmann::json::array();
    std::string data;
    for (const Param* p : params) {
        nlohmann::json e;
        e["name"] = p->name;
        e["shape"] = p->value.shape();
        e["offset"] = data.size();
        entries.push_back(std::move(e));
        for (i64 i = 0; i < p->value.numel(); ++i) put_f32_le(data, static_cast<float>(p->value[i]));
    }
    manifest["params"] = std::move(entries);

    const std::string mjson = manifest.dump();
    std::string header;
    header.append(kMagic, 8);
    put_u32_le(header, static_cast<std::uint32_t>(mjson.size()));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open checkpoint for writing: " + path);
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    out.write(mjson.data(), static_cast<std::streamsize>(mjson.size()));
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw FormatError("checkpoint write failed: " + path);
}

Model load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open checkpoint: " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buf.size() < 12 || std::memcmp(buf.data(), kMagic, 8) != 0)
        throw FormatError("bad checkpoint magic in " + path);
    const std::uint32_t mlen = get_u32_le(buf, 8);
    if (buf.size() < 12 + mlen) throw FormatError("truncated checkpoint manifest in " + path);
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(buf.substr(12, mlen));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("unreadable checkpoint manifest: ") + e.what());
    }

    ModelSpec spec;
    spec.preset = preset_from_string(manifest.at("preset").get<std::string>());
    spec.task = task_from_string(manifest.at("task").get<std::string>());
    spec.width_multiplier = manifest.at("width_multiplier").get<double>();
    spec.depth = manifest.at("depth").get<i64>();
    spec.num_classes = manifest.at("num_classes").get<i64>();
    spec.input_shape = manifest.at("input_shape").get<Shape>();
    spec.kernels_per_bank = manifest.at("kernels_per_bank").get<i64>();
    spec.k_active = manifest.at("k_active").get<i64>();
    spec.kr_dim = manifest.at("kr_dim").get<i64>();

    Prng rng(0);
    Model model = build_model(spec, rng);
    auto params = model.params();

    const std::size_t data_start = 12 + mlen;
    for (const auto& e : manifest.at("params")) {
        const std::string name = e.at("name").get<std::string>();
        const Shape shape = e.at("shape").get<Shape>();
        const std::size_t offset = e.at("offset").get<std::size_t>();
        Param* target = nullptr;
        for (Param* p : params)
            if (p->name == name) {
                target = p;
                break;
            }
        if (!target) throw FormatError("checkpoint parameter '" + name + "' not present in model");
        if (target->value.shape() != shape)
            throw FormatError("checkpoint parameter '" + name + "' shape " + shape_str(shape) +
                              " does not match model shape " + shape_str(target->value.shape()));
        const std::size_t need = data_start + offset + static_cast<std::size_t>(target->value.numel()) * 4;
        if (buf.size() < need)
            throw FormatError("truncated checkpoint data: expected at least " + std::to_string(need) +
                              " bytes, file has " + std::to_string(buf.size()));
        for (i64 i = 0; i < target->value.numel(); ++i)
            target->value[i] = static_cast<double>(
                get_f32_le(buf, data_start + offset + static_cast<std::size_t>(i) * 4));
    }
    return model;
}

}  // namespace dynconv
