#pragma once

#include <cstdint>
#include <vector>

#include "sevad/features.hpp"

namespace sevad {

// Sliding-window geometry. Defaults: 320 ms stride, 2560 ms window at the
// 100 Hz frame rate. The 160 ms-stride configuration is the same struct
// with stride_frames = 16.
struct WindowConfig {
    int stride_frames = 32;
    int window_frames = 256;

    void validate() const;  // stride >= 1, window >= stride
};

// One half-open window [lo, hi) over the feature sequence, hi = min(c*S, L).
struct ChunkView {
    int64_t index = 0;       // 1-based chunk index
    int64_t lo = 0;          // inclusive
    int64_t hi = 0;          // exclusive
    const float* frames = nullptr;  // lo-th frame row, hi - lo rows
    int n_mels = 0;
    double end_time_s() const { return static_cast<double>(hi) / 100.0; }
    int64_t length() const { return hi - lo; }
};

// Window bounds for 1-based chunk c over a sequence of L frames:
// hi = min(c * stride, L), lo = max(0, hi - window).
std::pair<int64_t, int64_t> window_bounds(int64_t c, const WindowConfig& cfg, int64_t length);

// ceil(L / stride): number of chunks a sequence of L frames yields.
int64_t num_chunks(int64_t length, const WindowConfig& cfg);

// All chunks of a complete sequence, in order. Views alias `seq`.
std::vector<ChunkView> chunk_stream(const FbankSequence& seq, const WindowConfig& cfg);

// Incremental chunker. Feed frames as they arrive; a chunk is emitted as
// soon as its closing frame is available, plus a final clipped chunk at
// end-of-stream. Produces the same chunks as chunk_stream on the full
// sequence. Returned views alias the internal frame store and are valid
// only until the next push_frame call.
class StreamingChunker {
public:
    StreamingChunker(const WindowConfig& cfg, int n_mels);

    // Appends one frame (n_mels values); returns chunks completed by it.
    std::vector<ChunkView> push_frame(const float* frame);

    // Signals end-of-stream; returns the final clipped chunk if one remains.
    std::vector<ChunkView> finish();

    int64_t frames_seen() const { return static_cast<int64_t>(store_.rows()); }
    const Tensor& frames() const { return store_; }

private:
    ChunkView make_chunk(int64_t c) const;

    WindowConfig cfg_;
    int n_mels_;
    Tensor store_;            // all frames of the session
    int64_t next_chunk_ = 1;
    bool finished_ = false;
};

}  // namespace sevad
