#include "sevad/wav.hpp"

#include <cstring>
#include <fstream>

#include "sevad/error.hpp"

namespace sevad {

void PcmBuffer::validate() const {
    if (sample_rate != 16000)
        throw config_error("PcmBuffer: sample_rate must be 16000, got " +
                           std::to_string(sample_rate));
    if (channels != 1)
        throw config_error("PcmBuffer: channels must be 1, got " + std::to_string(channels));
}

namespace {

uint32_t rd_u32(const uint8_t* p) {
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

uint16_t rd_u16(const uint8_t* p) {
    return static_cast<uint16_t>(p[0] | (p[1] << 8));
}

void wr_u32(std::vector<uint8_t>& v, uint32_t x) {
    v.push_back(x & 0xff);
    v.push_back((x >> 8) & 0xff);
    v.push_back((x >> 16) & 0xff);
    v.push_back((x >> 24) & 0xff);
}

void wr_u16(std::vector<uint8_t>& v, uint16_t x) {
    v.push_back(x & 0xff);
    v.push_back((x >> 8) & 0xff);
}

}  // namespace

PcmBuffer read_wav(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw config_error("cannot open WAV file: " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                               std::istreambuf_iterator<char>());
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0)
        throw config_error(path + ": missing RIFF header");
    if (std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
        throw config_error(path + ": RIFF form type is not WAVE");

    bool have_fmt = false;
    uint16_t format_tag = 0, n_channels = 0, bits = 0;
    uint32_t rate = 0;
    const uint8_t* data_ptr = nullptr;
    uint32_t data_len = 0;

    size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const char* id = reinterpret_cast<const char*>(bytes.data() + pos);
        const uint32_t sz = rd_u32(bytes.data() + pos + 4);
        const size_t body = pos + 8;
        if (body + sz > bytes.size())
            throw config_error(path + ": chunk '" + std::string(id, 4) + "' overruns file");
        if (std::memcmp(id, "fmt ", 4) == 0) {
            if (sz < 16) throw config_error(path + ": fmt chunk too short");
            format_tag = rd_u16(bytes.data() + body);
            n_channels = rd_u16(bytes.data() + body + 2);
            rate = rd_u32(bytes.data() + body + 4);
            bits = rd_u16(bytes.data() + body + 14);
            have_fmt = true;
        } else if (std::memcmp(id, "data", 4) == 0) {
            data_ptr = bytes.data() + body;
            data_len = sz;
        }
        pos = body + sz + (sz & 1);  // chunks are word-aligned
    }

    if (!have_fmt) throw config_error(path + ": missing fmt chunk");
    if (format_tag != 1)
        throw config_error(path + ": format tag must be 1 (PCM), got " +
                           std::to_string(format_tag));
    if (n_channels != 1)
        throw config_error(path + ": channels must be 1, got " + std::to_string(n_channels));
    if (rate != 16000)
        throw config_error(path + ": sample rate must be 16000, got " + std::to_string(rate));
    if (bits != 16)
        throw config_error(path + ": bits per sample must be 16, got " + std::to_string(bits));
    if (!data_ptr) throw config_error(path + ": missing data chunk");

    PcmBuffer out;
    out.samples.resize(data_len / 2);
    for (size_t i = 0; i < out.samples.size(); ++i) {
        const uint8_t* p = data_ptr + 2 * i;
        out.samples[i] = static_cast<int16_t>(p[0] | (p[1] << 8));
    }
    return out;
}

void write_wav(const std::string& path, const PcmBuffer& audio) {
    audio.validate();
    std::vector<uint8_t> bytes;
    bytes.reserve(44 + audio.samples.size() * 2);
    const uint32_t data_len = static_cast<uint32_t>(audio.samples.size() * 2);

    bytes.insert(bytes.end(), {'R', 'I', 'F', 'F'});
    wr_u32(bytes, 36 + data_len);
    bytes.insert(bytes.end(), {'W', 'A', 'V', 'E'});
    bytes.insert(bytes.end(), {'f', 'm', 't', ' '});
    wr_u32(bytes, 16);
    wr_u16(bytes, 1);  // PCM
    wr_u16(bytes, 1);  // mono
    wr_u32(bytes, 16000);
    wr_u32(bytes, 16000 * 2);  // byte rate
    wr_u16(bytes, 2);          // block align
    wr_u16(bytes, 16);         // bits
    bytes.insert(bytes.end(), {'d', 'a', 't', 'a'});
    wr_u32(bytes, data_len);
    for (int16_t s : audio.samples) {
        bytes.push_back(static_cast<uint8_t>(s & 0xff));
        bytes.push_back(static_cast<uint8_t>((s >> 8) & 0xff));
    }

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw config_error("cannot write WAV file: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

}  // namespace sevad
