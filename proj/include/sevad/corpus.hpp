#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sevad/wav.hpp"
#include "sevad/windowing.hpp"

namespace sevad {

struct HesitationGap {
    double position_ms = 0;  // inside the voiced timeline
    double duration_ms = 0;
};

// Recipe for one synthetic utterance. `total_speech_ms` is voiced time;
// gaps are inserted into it, so the rendered speech ends at
// total_speech_ms + sum(gap durations).
struct UtteranceSpec {
    uint64_t seed = 0;
    double total_speech_ms = 1000;
    std::vector<HesitationGap> gaps;
    bool complete = true;
    double trailing_silence_ms = 2000;

    void validate() const;
};

struct LabeledUtterance {
    PcmBuffer audio;
    double speech_end_ms = 0;
    bool complete = true;
    std::vector<int> chunk_labels;   // one {0,1} per chunk
    bool has_stop_label = false;     // false when trailing silence is too short
    UtteranceSpec spec;
};

// Per-chunk labels for a rendered utterance: chunk c is Stop (1) iff its
// end time has passed speech_end by the class-dependent delay (t_s for
// semantically complete utterances, t_l otherwise).
std::vector<int> annotate_labels(double speech_end_ms, bool complete, int64_t n_frames,
                                 const WindowConfig& cfg, double t_s_ms, double t_l_ms);

// Renders speech-band noise bursts over a harmonic carrier, with digital
// silence in gaps and the trailing region. Iff `complete`, the final
// 200 ms of voiced time carry a descending-chirp terminal cue, so that
// semantic completeness is recoverable from signal content alone.
// Deterministic per spec.seed.
LabeledUtterance synth_utterance(const UtteranceSpec& spec, const WindowConfig& wcfg,
                                 double t_s_ms, double t_l_ms);

// The chirp band; corpus tests verify complete/incomplete separability
// with a detector confined to it.
constexpr double kChirpStartHz = 5800.0;
constexpr double kChirpEndHz = 3600.0;
constexpr double kChirpMs = 200.0;

struct ManifestEntry {
    std::string wav_path;  // relative to the manifest's directory
    double speech_end_ms = 0;
    bool complete = true;
    std::vector<int> chunk_labels;
    int stride_ms = 320;
    int window_ms = 2560;
    double t_s_ms = 400;
    double t_l_ms = 1000;
    uint64_t seed = 0;
    std::string split;  // "train" or "test"
    bool has_stop_label = true;
};

struct CorpusParams {
    int n_complete = 0;
    int n_incomplete = 0;
    uint64_t seed = 7;
    std::string out_dir;
    WindowConfig window;
    double t_s_ms = 400;
    double t_l_ms = 1000;
    double train_fraction = 0.9;
    bool overwrite = false;
    // Optional uniform +-jitter applied to the label timestamp (not the
    // rendered audio), for studying annotation-noise sensitivity.
    double timestamp_jitter_ms = 0;
};

struct CorpusResult {
    std::string manifest_path;
    std::string train_path;
    std::string test_path;
    int n_train = 0;
    int n_test = 0;
};

// Writes WAVs plus manifest.jsonl (every utterance), train.jsonl and
// test.jsonl (seeded, disjoint, stratified by class). Refuses to clobber
// an existing manifest unless `overwrite`.
CorpusResult build_corpus(const CorpusParams& params);

std::vector<ManifestEntry> read_manifest(const std::string& path);
void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries);

}  // namespace sevad
