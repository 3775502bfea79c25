#pragma once

#include <cstdint>
#include <vector>

#include "sevad/tensor.hpp"
#include "sevad/wav.hpp"

namespace sevad {

// Log-mel front end. Frames are 25 ms (400 samples) every 10 ms (160
// samples), Hann-windowed, power spectrum via a 512-point FFT, 80
// triangular mel filters over 20-7600 Hz, log with floor epsilon.
// No dithering and no trailing-frame padding, so streaming and offline
// feature extraction agree sample for sample.
struct FbankConfig {
    int n_mels = 80;
    int frame_length = 400;   // samples (25 ms at 16 kHz)
    int frame_shift = 160;    // samples (10 ms -> 100 Hz frame rate)
    double mel_low_hz = 20.0;
    double mel_high_hz = 7600.0;
    double log_floor = 1e-10;

    void validate() const;
};

// 100 Hz log-mel sequence. frames is [L x n_mels].
struct FbankSequence {
    Tensor frames;
    int frame_rate = 100;
    int n_mels = 80;

    int length() const { return frames.rows(); }
};

// Number of full frames covered by `len` samples: 0 below one frame,
// otherwise 1 + floor((len - frame_length) / frame_shift).
int64_t num_frames(int64_t len, const FbankConfig& cfg = {});

FbankSequence compute_fbank(const PcmBuffer& audio, const FbankConfig& cfg = {});

// Incremental front end for live sessions. Emits exactly the frames
// compute_fbank would produce on the concatenated input.
class StreamingFbank {
public:
    explicit StreamingFbank(const FbankConfig& cfg = {});

    // Appends samples; returns the newly completed frames ([n x n_mels] rows).
    std::vector<std::vector<float>> push(const int16_t* samples, size_t n);

    int64_t frames_emitted() const { return frames_emitted_; }

private:
    FbankConfig cfg_;
    std::vector<int16_t> buffer_;   // pending samples not yet consumed by a frame
    int64_t frames_emitted_ = 0;
};

// Shared frame kernel: one Hann-windowed power-spectrum mel frame from
// frame_length samples. Used by both the offline and streaming paths.
void compute_frame(const int16_t* samples, const FbankConfig& cfg, float* out_mels);

}  // namespace sevad
