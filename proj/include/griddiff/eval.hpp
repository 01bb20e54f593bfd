#pragma once
// Task metrics (caption overlap, localization, duplicate analysis) and the
// experiment harnesses: remask-strategy / timestep-count sweeps and the
// parallel-vs-left-to-right comparison.

#include "griddiff/dataset.hpp"
#include "griddiff/decode.hpp"
#include "griddiff/net.hpp"

#include <map>
#include <string>
#include <vector>

namespace griddiff {

struct DetectionResult {
    std::vector<std::pair<int, Box>> predicted; // (class_id, box), parse order
    size_t malformed_spans = 0;
};

struct DetectionScores {
    double set_f1_at_05 = 0;
    double precision = 0;
    double recall = 0;
    double duplicate_rate = 0;
    size_t matches = 0;
};

/// BLEU over 1..4-grams with uniform weights, brevity penalty, and [PAD]
/// stripped first. Zero higher-order counts are smoothed as (m+1)/(c+1)
/// whenever at least one unigram matches; precisions with matches stay exact.
/// Empty or matchless candidates score 0.
double bleu4(const std::vector<int>& candidate, const std::vector<int>& reference);

/// Greedy scan for [class, coord, coord, coord, coord] spans. [PAD] ends the
/// scan; anything else counts one malformed span and resynchronizes at the
/// next class token.
DetectionResult parse_detection(const std::vector<int>& tokens, const Vocabulary& v);

DetectionScores detection_scores(const DetectionResult& pred,
                                 const std::vector<std::pair<int, Box>>& truth);

/// 1 iff the box read from the first four coord tokens overlaps truth with
/// IoU >= 0.5; anything unparseable scores 0.
int grounding_acc(const std::vector<int>& pred_tokens, const Box& truth, const Vocabulary& v);

struct EvalSettings {
    size_t n_steps = 8;
    RemaskStrategy strategy;
    bool use_ar = false; // greedy left-to-right instead of the parallel decoder
};

struct MetricsReport {
    size_t instance_count = 0;
    // task name -> metric name -> value, e.g. per_task["detect"]["set_f1_at_05"]
    std::map<std::string, std::map<std::string, double>> per_task;
    EvalSettings settings;
};

/// Decodes every instance and aggregates per-task metrics. Per-instance
/// schedules clamp N to the task's generated length. Deterministic for the
/// low-confidence strategy.
MetricsReport evaluate(const Net<float>& net, const Dataset& data, const EvalSettings& settings);

std::string report_to_json(const MetricsReport& report);

enum class AblationKind : uint8_t { remask_strategy = 0, timesteps = 1, paradigm = 2 };

AblationKind ablation_from_name(const std::string& s);

struct AblationTable {
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;
};

/// remask_strategy: low-confidence vs the mean of `n_random_seeds` random runs
/// at fixed N. timesteps: low-confidence at N in {1,2,4,8,16}. paradigm:
/// parallel decoding (N=8) vs the greedy causal baseline `ar_net` on the
/// detection task.
AblationTable run_ablation(AblationKind kind, const Net<float>& net, const Net<float>* ar_net,
                           const Dataset& data, size_t n_steps = 8, size_t n_random_seeds = 5);

std::string table_to_csv(const AblationTable& t);
std::string table_to_text(const AblationTable& t);

} // namespace griddiff
