#pragma once
// Iterative mask-and-commit inference: cosine mask-count schedule, full-sequence
// prediction with per-position confidence, low-confidence or random remasking,
// plus greedy left-to-right decoding for the causal baseline.

#include "griddiff/diffusion.hpp"
#include "griddiff/net.hpp"
#include "griddiff/vocab.hpp"

#include <string>
#include <vector>

namespace griddiff {

struct Schedule {
    size_t n_steps = 1;  // N
    size_t gen_len = 0;  // L_gen
    // N+1 mask counts, strictly decreasing from m[N] = gen_len to m[0] = 0
    std::vector<size_t> mask_counts;
};

/// m_k = ceil(gamma(k/N) * L_gen) with gamma(t) = sin(pi t / 2), then clamped
/// so every step commits at least one token.
Schedule build_schedule(size_t n_steps, size_t gen_len);

enum class RemaskKind : uint8_t { low_confidence = 0, random_subset = 1 };

struct RemaskStrategy {
    RemaskKind kind = RemaskKind::low_confidence;
    uint64_t seed = 0; // random_subset only

    static RemaskStrategy low_conf() { return {RemaskKind::low_confidence, 0}; }
    static RemaskStrategy random(uint64_t seed) { return {RemaskKind::random_subset, seed}; }
};

const char* remask_kind_name(RemaskKind k);

struct DecodeStep {
    size_t step = 0;                // k, counted from N down to 1
    std::vector<size_t> committed;  // generated-segment positions fixed this step
    std::vector<int> prediction;    // full T-hat over the generated segment
    std::vector<double> confidence; // per generated position; 1 once committed
};

struct DecodeTrace {
    Schedule schedule;
    RemaskKind strategy = RemaskKind::low_confidence;
    std::vector<DecodeStep> steps;
    std::vector<int> finalization_step; // per generated position: the k that committed it
    std::vector<int> output;
};

/// 0 = early, 1 = middle, 2 = late third of the schedule; k counts down from N.
inline int finalization_tercile(size_t k, size_t n_steps) {
    return static_cast<int>((n_steps - k) * 3 / n_steps);
}

/// One bidirectional pass over [features ; prompt ; generated segment].
/// Returns prediction and confidence per generated position: argmax and max
/// softmax probability at masked positions, the committed token with
/// confidence 1 elsewhere.
void predict_full(const Net<float>& net, const Tensor<float>& features,
                  const std::vector<int>& prompt_ids, const std::vector<int>& gen_ids,
                  const std::vector<char>& gen_mask, std::vector<int>& prediction,
                  std::vector<double>& confidence, Workspace<float>& ws);

/// Picks the m_next eligible positions to revert to [M]; the rest commit.
/// low_confidence takes the lowest-confidence positions (ties to the lower
/// index); random_subset draws uniformly via `rng`.
std::vector<size_t> remask(const std::vector<double>& confidence,
                           const std::vector<size_t>& eligible, size_t m_next,
                           RemaskKind kind, Rng& rng);

std::pair<std::vector<int>, DecodeTrace> decode_diffusion(const Net<float>& net,
                                                          const Tensor<float>& features,
                                                          const std::vector<int>& prompt_ids,
                                                          size_t gen_len, size_t n_steps,
                                                          RemaskStrategy strategy);

/// Greedy left-to-right decoding with a full forward pass per token.
std::vector<int> decode_ar(const Net<float>& net, const Tensor<float>& features,
                           const std::vector<int>& prompt_ids, size_t max_len);

/// Per-instance trace export: schedule, strategy, per-step commits and
/// confidences, finalization steps, and the detokenized output.
std::string trace_to_json(const DecodeTrace& trace, const Vocabulary& v);
void save_trace(const DecodeTrace& trace, const Vocabulary& v, const std::string& path);

} // namespace griddiff
