#include "sevad/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

#include "sevad/error.hpp"

namespace sevad {

namespace {

constexpr char kMagic[4] = {'S', 'V', 'C', 'K'};
constexpr uint32_t kVersion = 1;

void put_u32(std::vector<uint8_t>& v, uint32_t x) {
    v.push_back(x & 0xff);
    v.push_back((x >> 8) & 0xff);
    v.push_back((x >> 16) & 0xff);
    v.push_back((x >> 24) & 0xff);
}

void put_f32(std::vector<uint8_t>& v, float x) {
    uint32_t bits;
    std::memcpy(&bits, &x, 4);
    put_u32(v, bits);
}

struct Reader {
    const std::vector<uint8_t>& bytes;
    size_t pos = 0;

    void need(size_t n, const char* what) const {
        if (pos + n > bytes.size())
            throw parse_error(std::string("checkpoint truncated while reading ") + what, pos);
    }
    uint32_t u32(const char* what) {
        need(4, what);
        uint32_t x = bytes[pos] | (bytes[pos + 1] << 8) | (bytes[pos + 2] << 16) |
                     (static_cast<uint32_t>(bytes[pos + 3]) << 24);
        pos += 4;
        return x;
    }
    float f32(const char* what) {
        const uint32_t bits = u32(what);
        float x;
        std::memcpy(&x, &bits, 4);
        return x;
    }
    std::string str(size_t n, const char* what) {
        need(n, what);
        std::string s(reinterpret_cast<const char*>(bytes.data() + pos), n);
        pos += n;
        return s;
    }
};

}  // namespace

uint32_t crc32_ieee(const uint8_t* data, size_t len) {
    static uint32_t table[256];
    static bool built = false;
    if (!built) {
        for (uint32_t i = 0; i < 256; ++i) {
            uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            table[i] = c;
        }
        built = true;
    }
    uint32_t crc = 0xFFFFFFFFu;
    for (size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xffu] ^ (crc >> 8);
    return crc ^ 0xFFFFFFFFu;
}

std::vector<uint8_t> save_checkpoint(const Model& model, const std::string& train_info) {
    nlohmann::json blob;
    blob["model"] = nlohmann::json::parse(model.cfg.to_json());
    blob["train"] = train_info;
    const std::string cfg_text = blob.dump();

    std::vector<uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + 4);
    put_u32(out, kVersion);
    put_u32(out, static_cast<uint32_t>(cfg_text.size()));
    out.insert(out.end(), cfg_text.begin(), cfg_text.end());

    const auto params = model.param_registry();
    put_u32(out, static_cast<uint32_t>(params.size()));
    for (const auto& [name, tensor] : params) {
        put_u32(out, static_cast<uint32_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        put_u32(out, static_cast<uint32_t>(tensor->shape.size()));
        for (int d : tensor->shape) put_u32(out, static_cast<uint32_t>(d));
        for (float v : tensor->data) put_f32(out, v);
    }
    put_u32(out, crc32_ieee(out.data() + 4, out.size() - 4));
    return out;
}

Checkpoint load_checkpoint(const std::vector<uint8_t>& bytes) {
    Reader r{bytes};
    r.need(4, "magic");
    if (std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw parse_error("bad checkpoint magic", 0);
    r.pos = 4;
    const uint32_t version = r.u32("version");
    if (version != kVersion)
        throw config_error("unsupported checkpoint format version " +
                           std::to_string(version) + " (expected " +
                           std::to_string(kVersion) + ")");

    if (bytes.size() < 8)
        throw parse_error("checkpoint truncated", bytes.size());
    const uint32_t stored_crc = bytes[bytes.size() - 4] |
                                (bytes[bytes.size() - 3] << 8) |
                                (bytes[bytes.size() - 2] << 16) |
                                (static_cast<uint32_t>(bytes[bytes.size() - 1]) << 24);
    const uint32_t actual_crc = crc32_ieee(bytes.data() + 4, bytes.size() - 8);
    if (stored_crc != actual_crc)
        throw parse_error("checkpoint checksum mismatch", bytes.size() - 4);

    const uint32_t cfg_len = r.u32("config length");
    const std::string cfg_text = r.str(cfg_len, "config blob");
    nlohmann::json blob;
    try {
        blob = nlohmann::json::parse(cfg_text);
    } catch (const nlohmann::json::exception& e) {
        throw parse_error(std::string("bad checkpoint config JSON: ") + e.what(), 12);
    }

    Checkpoint out;
    out.model = Model::init(ModelConfig::from_json(blob.at("model").dump()), 0);
    out.train_info = blob.value("train", "");

    auto params = out.model.param_registry();
    const uint32_t n_tensors = r.u32("tensor count");
    if (n_tensors != params.size())
        throw parse_error("checkpoint tensor count " + std::to_string(n_tensors) +
                              " does not match model layout (" +
                              std::to_string(params.size()) + ")",
                          r.pos - 4);
    for (auto& [name, tensor] : params) {
        const uint32_t name_len = r.u32("tensor name length");
        const std::string stored = r.str(name_len, "tensor name");
        if (stored != name)
            throw parse_error("unexpected tensor '" + stored + "', expected '" + name + "'",
                              r.pos - name_len);
        const uint32_t rank = r.u32("tensor rank");
        std::vector<int> dims(rank);
        for (uint32_t i = 0; i < rank; ++i) dims[i] = static_cast<int>(r.u32("tensor dim"));
        if (dims != tensor->shape)
            throw parse_error("tensor '" + name + "' has shape " + shape_str(dims) +
                                  ", expected " + shape_str(tensor->shape),
                              r.pos);
        for (auto& v : tensor->data) v = r.f32("tensor data");
    }
    if (r.pos != bytes.size() - 4)
        throw parse_error("trailing bytes after tensor payload", r.pos);
    return out;
}

void save_checkpoint_file(const std::string& path, const Model& model,
                          const std::string& train_info) {
    const auto bytes = save_checkpoint(model, train_info);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw config_error("cannot write checkpoint file: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

Checkpoint load_checkpoint_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw config_error("cannot open checkpoint file: " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                               std::istreambuf_iterator<char>());
    return load_checkpoint(bytes);
}

}  // namespace sevad
