#include "sevad/windowing.hpp"

#include <algorithm>

#include "sevad/error.hpp"

namespace sevad {

void WindowConfig::validate() const {
    if (stride_frames < 1)
        throw config_error("WindowConfig: stride_frames must be >= 1, got " +
                           std::to_string(stride_frames));
    if (window_frames < stride_frames)
        throw config_error("WindowConfig: window_frames (" + std::to_string(window_frames) +
                           ") must be >= stride_frames (" + std::to_string(stride_frames) + ")");
}

std::pair<int64_t, int64_t> window_bounds(int64_t c, const WindowConfig& cfg, int64_t length) {
    cfg.validate();
    if (c < 1) throw config_error("window_bounds: chunk index is 1-based, got " +
                                  std::to_string(c));
    if (length < 0) throw config_error("window_bounds: negative sequence length");
    const int64_t hi = std::min(c * cfg.stride_frames, length);
    const int64_t lo = std::max<int64_t>(0, hi - cfg.window_frames);
    return {lo, hi};
}

int64_t num_chunks(int64_t length, const WindowConfig& cfg) {
    cfg.validate();
    if (length <= 0) return 0;
    return (length + cfg.stride_frames - 1) / cfg.stride_frames;
}

std::vector<ChunkView> chunk_stream(const FbankSequence& seq, const WindowConfig& cfg) {
    cfg.validate();
    const int64_t length = seq.length();
    std::vector<ChunkView> out;
    const int64_t n = num_chunks(length, cfg);
    out.reserve(n);
    for (int64_t c = 1; c <= n; ++c) {
        const auto [lo, hi] = window_bounds(c, cfg, length);
        ChunkView v;
        v.index = c;
        v.lo = lo;
        v.hi = hi;
        v.frames = seq.frames.row(static_cast<int>(lo));
        v.n_mels = seq.n_mels;
        out.push_back(v);
    }
    return out;
}

StreamingChunker::StreamingChunker(const WindowConfig& cfg, int n_mels)
    : cfg_(cfg), n_mels_(n_mels), store_({0, n_mels}) {
    cfg_.validate();
}

ChunkView StreamingChunker::make_chunk(int64_t c) const {
    const auto [lo, hi] = window_bounds(c, cfg_, store_.rows());
    ChunkView v;
    v.index = c;
    v.lo = lo;
    v.hi = hi;
    v.frames = store_.row(static_cast<int>(lo));
    v.n_mels = n_mels_;
    return v;
}

std::vector<ChunkView> StreamingChunker::push_frame(const float* frame) {
    if (finished_) throw protocol_error("StreamingChunker: push after finish");
    store_.data.insert(store_.data.end(), frame, frame + n_mels_);
    store_.shape[0] += 1;
    std::vector<ChunkView> out;
    while (next_chunk_ * cfg_.stride_frames <= store_.rows()) {
        out.push_back(make_chunk(next_chunk_));
        ++next_chunk_;
    }
    return out;
}

std::vector<ChunkView> StreamingChunker::finish() {
    if (finished_) return {};
    finished_ = true;
    std::vector<ChunkView> out;
    const int64_t total = num_chunks(store_.rows(), cfg_);
    // Chunks at full stride boundaries were already emitted; what remains is
    // the clipped tail chunk, if the stream did not end exactly on a stride.
    if (next_chunk_ <= total) {
        out.push_back(make_chunk(total));
        next_chunk_ = total + 1;
    }
    return out;
}

}  // namespace sevad
