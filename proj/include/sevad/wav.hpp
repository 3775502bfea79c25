#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace sevad {

// Raw 16 kHz mono PCM16 audio.
struct PcmBuffer {
    std::vector<int16_t> samples;
    int sample_rate = 16000;
    int channels = 1;

    void validate() const;  // throws config_error on wrong rate/channels
    double duration_ms() const {
        return 1000.0 * static_cast<double>(samples.size()) / sample_rate;
    }
};

// Reads a RIFF WAV file. Accepts only 16 kHz mono PCM16 (format tag 1);
// anything else is rejected with a diagnostic naming the offending field.
PcmBuffer read_wav(const std::string& path);

void write_wav(const std::string& path, const PcmBuffer& audio);

}  // namespace sevad
