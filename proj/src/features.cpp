#include "sevad/features.hpp"

#include <cmath>
#include <mutex>
#include <tuple>
#include <vector>

#include <omp.h>

#include "sevad/error.hpp"
#include "sevad/kernels.hpp"

namespace sevad {

void FbankConfig::validate() const {
    if (n_mels < 1) throw config_error("FbankConfig: n_mels must be >= 1");
    if (frame_length < 2 || frame_shift < 1)
        throw config_error("FbankConfig: invalid frame geometry");
    if (mel_low_hz <= 0 || mel_high_hz <= mel_low_hz || mel_high_hz > 8000.0)
        throw config_error("FbankConfig: invalid mel range");
    if (log_floor <= 0) throw config_error("FbankConfig: log_floor must be positive");
}

namespace {

constexpr double kPi = 3.14159265358979323846;

double hz_to_mel(double hz) { return 1127.0 * std::log1p(hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * std::expm1(mel / 1127.0); }

int next_pow2(int n) {
    int p = 1;
    while (p < n) p <<= 1;
    return p;
}

// In-place iterative radix-2 FFT. Sizes here are always powers of two.
void fft_inplace(std::vector<double>& re, std::vector<double>& im) {
    const size_t n = re.size();
    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) {
            std::swap(re[i], re[j]);
            std::swap(im[i], im[j]);
        }
    }
    for (size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * kPi / static_cast<double>(len);
        const double wr = std::cos(ang), wi = std::sin(ang);
        for (size_t i = 0; i < n; i += len) {
            double cur_r = 1.0, cur_i = 0.0;
            for (size_t k = 0; k < len / 2; ++k) {
                const size_t a = i + k, b = i + k + len / 2;
                const double xr = re[b] * cur_r - im[b] * cur_i;
                const double xi = re[b] * cur_i + im[b] * cur_r;
                re[b] = re[a] - xr;
                im[b] = im[a] - xi;
                re[a] += xr;
                im[a] += xi;
                const double nr = cur_r * wr - cur_i * wi;
                cur_i = cur_r * wi + cur_i * wr;
                cur_r = nr;
            }
        }
    }
}

struct Tables {
    int fft_size = 0;
    std::vector<double> hann;
    struct Filter {
        int begin = 0;
        std::vector<double> weights;
    };
    std::vector<Filter> filters;
};

Tables build_tables(const FbankConfig& cfg) {
    Tables t;
    t.fft_size = next_pow2(cfg.frame_length);
    t.hann.resize(cfg.frame_length);
    for (int i = 0; i < cfg.frame_length; ++i)
        t.hann[i] = 0.5 - 0.5 * std::cos(2.0 * kPi * i / cfg.frame_length);

    const int n_bins = t.fft_size / 2 + 1;
    const double bin_hz = 16000.0 / t.fft_size;
    const double mel_lo = hz_to_mel(cfg.mel_low_hz);
    const double mel_hi = hz_to_mel(cfg.mel_high_hz);
    const double mel_step = (mel_hi - mel_lo) / (cfg.n_mels + 1);

    t.filters.resize(cfg.n_mels);
    for (int m = 0; m < cfg.n_mels; ++m) {
        const double left = mel_to_hz(mel_lo + m * mel_step);
        const double center = mel_to_hz(mel_lo + (m + 1) * mel_step);
        const double right = mel_to_hz(mel_lo + (m + 2) * mel_step);
        Tables::Filter f;
        std::vector<double> w;
        int begin = -1;
        for (int b = 0; b < n_bins; ++b) {
            const double hz = b * bin_hz;
            double weight = 0.0;
            if (hz > left && hz < right)
                weight = hz <= center ? (hz - left) / (center - left)
                                      : (right - hz) / (right - center);
            if (weight > 0.0) {
                if (begin < 0) begin = b;
                w.push_back(weight);
            } else if (begin >= 0) {
                break;
            }
        }
        f.begin = begin < 0 ? 0 : begin;
        f.weights = std::move(w);
        t.filters[m] = std::move(f);
    }
    return t;
}

// Table cache keyed by the config fields; configs in one process are few.
const Tables& tables_for(const FbankConfig& cfg) {
    using Key = std::tuple<int, int, int, double, double>;
    static std::mutex mu;
    static std::vector<std::pair<Key, Tables>> cache;
    const Key key{cfg.n_mels, cfg.frame_length, cfg.frame_shift, cfg.mel_low_hz,
                  cfg.mel_high_hz};
    std::lock_guard<std::mutex> lock(mu);
    for (auto& entry : cache)
        if (entry.first == key) return entry.second;
    cache.emplace_back(key, build_tables(cfg));
    return cache.back().second;
}

}  // namespace

void compute_frame(const int16_t* samples, const FbankConfig& cfg, float* out_mels) {
    const Tables& t = tables_for(cfg);
    std::vector<double> re(t.fft_size, 0.0), im(t.fft_size, 0.0);
    for (int i = 0; i < cfg.frame_length; ++i)
        re[i] = (static_cast<double>(samples[i]) / 32768.0) * t.hann[i];
    fft_inplace(re, im);
    for (int m = 0; m < cfg.n_mels; ++m) {
        const auto& f = t.filters[m];
        double energy = 0.0;
        for (size_t j = 0; j < f.weights.size(); ++j) {
            const int b = f.begin + static_cast<int>(j);
            energy += f.weights[j] * (re[b] * re[b] + im[b] * im[b]);
        }
        out_mels[m] = static_cast<float>(std::log(std::max(energy, cfg.log_floor)));
    }
}

int64_t num_frames(int64_t len, const FbankConfig& cfg) {
    if (len < cfg.frame_length) return 0;
    return 1 + (len - cfg.frame_length) / cfg.frame_shift;
}

FbankSequence compute_fbank(const PcmBuffer& audio, const FbankConfig& cfg) {
    audio.validate();
    cfg.validate();
    const int64_t len = static_cast<int64_t>(audio.samples.size());
    const int64_t n = num_frames(len, cfg);

    FbankSequence out;
    out.n_mels = cfg.n_mels;
    out.frames = Tensor({static_cast<int>(n), cfg.n_mels});

    const bool par = kernels::parallel_enabled() && n >= 8;
#pragma omp parallel for schedule(static) num_threads(kernels::threads()) if (par)
    for (int64_t i = 0; i < n; ++i)
        compute_frame(audio.samples.data() + i * cfg.frame_shift, cfg,
                      out.frames.row(static_cast<int>(i)));
    return out;
}

StreamingFbank::StreamingFbank(const FbankConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
}

std::vector<std::vector<float>> StreamingFbank::push(const int16_t* samples, size_t n) {
    buffer_.insert(buffer_.end(), samples, samples + n);
    std::vector<std::vector<float>> out;
    size_t start = 0;
    while (start + static_cast<size_t>(cfg_.frame_length) <= buffer_.size()) {
        std::vector<float> mels(cfg_.n_mels);
        compute_frame(buffer_.data() + start, cfg_, mels.data());
        out.push_back(std::move(mels));
        start += cfg_.frame_shift;
        ++frames_emitted_;
    }
    if (start > 0) buffer_.erase(buffer_.begin(), buffer_.begin() + start);
    return out;
}

}  // namespace sevad
