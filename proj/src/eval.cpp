#include "griddiff/eval.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>

using json = nlohmann::json;

namespace griddiff {

namespace {

std::vector<int> strip_pad(const std::vector<int>& ids) {
    std::vector<int> out;
    for (int id : ids) {
        if (id != Vocabulary::kPad) {
            out.push_back(id);
        }
    }
    return out;
}

size_t count_ngram_matches(const std::vector<int>& cand, const std::vector<int>& ref, size_t n) {
    std::map<std::vector<int>, long> ref_counts;
    for (size_t i = 0; i + n <= ref.size(); ++i) {
        ref_counts[std::vector<int>(ref.begin() + static_cast<std::ptrdiff_t>(i),
                                    ref.begin() + static_cast<std::ptrdiff_t>(i + n))]++;
    }
    size_t matches = 0;
    for (size_t i = 0; i + n <= cand.size(); ++i) {
        std::vector<int> g(cand.begin() + static_cast<std::ptrdiff_t>(i),
                           cand.begin() + static_cast<std::ptrdiff_t>(i + n));
        auto it = ref_counts.find(g);
        if (it != ref_counts.end() && it->second > 0) {
            it->second--; // clipped (modified) precision
            matches++;
        }
    }
    return matches;
}

} // namespace

double bleu4(const std::vector<int>& candidate, const std::vector<int>& reference) {
    const std::vector<int> cand = strip_pad(candidate);
    const std::vector<int> ref = strip_pad(reference);
    if (cand.empty()) {
        return 0.0;
    }
    const size_t m1 = count_ngram_matches(cand, ref, 1);
    if (m1 == 0) {
        return 0.0;
    }
    double log_sum = std::log(static_cast<double>(m1) / static_cast<double>(cand.size()));
    for (size_t n = 2; n <= 4; ++n) {
        const size_t c_n = cand.size() >= n ? cand.size() - n + 1 : 0;
        const size_t m_n = c_n > 0 ? count_ngram_matches(cand, ref, n) : 0;
        const double p = m_n > 0 ? static_cast<double>(m_n) / static_cast<double>(c_n)
                                 : (static_cast<double>(m_n) + 1.0) /
                                       (static_cast<double>(c_n) + 1.0);
        log_sum += std::log(p);
    }
    double bp = 1.0;
    if (cand.size() < ref.size()) {
        bp = std::exp(1.0 - static_cast<double>(ref.size()) / static_cast<double>(cand.size()));
    }
    return bp * std::exp(log_sum / 4.0);
}

DetectionResult parse_detection(const std::vector<int>& tokens, const Vocabulary& v) {
    DetectionResult out;
    size_t i = 0;
    const size_t n = tokens.size();
    while (i < n && tokens[i] != Vocabulary::kPad) {
        bool parsed = false;
        if (v.is_class(tokens[i]) && i + 4 < n) {
            bool coords_ok = true;
            for (size_t j = 1; j <= 4; ++j) {
                coords_ok = coords_ok && v.is_coord(tokens[i + j]);
            }
            if (coords_ok) {
                const Box b = v.decode_box({tokens[i + 1], tokens[i + 2], tokens[i + 3],
                                            tokens[i + 4]});
                out.predicted.push_back({v.class_of(tokens[i]), b});
                i += 5;
                parsed = true;
            }
        }
        if (!parsed) {
            out.malformed_spans++;
            ++i; // skip the offending token, then resync at the next class token
            while (i < n && tokens[i] != Vocabulary::kPad && !v.is_class(tokens[i])) {
                ++i;
            }
        }
    }
    return out;
}

DetectionScores detection_scores(const DetectionResult& pred,
                                 const std::vector<std::pair<int, Box>>& truth) {
    DetectionScores s;
    const size_t np = pred.predicted.size();
    const size_t nt = truth.size();
    if (np == 0 && nt == 0) {
        s.precision = s.recall = s.set_f1_at_05 = 1.0;
        return s;
    }

    std::vector<char> truth_used(nt, 0);
    size_t duplicates = 0;
    for (size_t i = 0; i < np; ++i) {
        const auto& [cls, box] = pred.predicted[i];
        for (size_t e = 0; e < i; ++e) {
            if (pred.predicted[e].first == cls && iou(pred.predicted[e].second, box) >= 0.9) {
                duplicates++;
                break;
            }
        }
        double best_iou = 0;
        size_t best = nt;
        for (size_t t = 0; t < nt; ++t) {
            if (truth_used[t] || truth[t].first != cls) {
                continue;
            }
            const double ov = iou(truth[t].second, box);
            if (ov >= 0.5 && ov > best_iou) {
                best_iou = ov;
                best = t;
            }
        }
        if (best < nt) {
            truth_used[best] = 1;
            s.matches++;
        }
    }
    s.precision = np > 0 ? static_cast<double>(s.matches) / static_cast<double>(np) : 0.0;
    s.recall = nt > 0 ? static_cast<double>(s.matches) / static_cast<double>(nt) : 0.0;
    s.set_f1_at_05 = (s.precision + s.recall) > 0
                         ? 2.0 * s.precision * s.recall / (s.precision + s.recall)
                         : 0.0;
    s.duplicate_rate = np > 0 ? static_cast<double>(duplicates) / static_cast<double>(np) : 0.0;
    return s;
}

int grounding_acc(const std::vector<int>& pred_tokens, const Box& truth, const Vocabulary& v) {
    std::vector<int> coords;
    for (int id : pred_tokens) {
        if (v.is_coord(id)) {
            coords.push_back(id);
            if (coords.size() == 4) {
                break;
            }
        }
    }
    if (coords.size() < 4) {
        return 0;
    }
    return iou(v.decode_box(coords), truth) >= 0.5 ? 1 : 0;
}

namespace {

struct Accum {
    std::map<std::string, double> sums;
    size_t count = 0;

    void add(const std::string& key, double value) { sums[key] += value; }
};

} // namespace

MetricsReport evaluate(const Net<float>& net, const Dataset& data, const EvalSettings& settings) {
    if (net.cfg.vocab_hash != data.vocab.hash()) {
        throw std::runtime_error("evaluate: model and dataset vocabulary hashes differ");
    }
    MetricsReport report;
    report.settings = settings;
    std::map<std::string, Accum> acc;

    for (const auto& inst : data.instances) {
        const Tensor<float> features =
            render_features(inst.scene, data.manifest.spec, net.cfg.d_v);
        const size_t gen_len = static_cast<size_t>(task_target_len(inst.task));
        std::vector<int> pred;
        if (settings.use_ar) {
            pred = decode_ar(net, features, inst.prompt_ids, gen_len);
        } else {
            const size_t n = std::min(settings.n_steps, gen_len);
            pred = decode_diffusion(net, features, inst.prompt_ids, gen_len, n,
                                    settings.strategy)
                       .first;
        }

        Accum& a = acc[task_name(inst.task)];
        a.count++;
        switch (inst.task) {
            case Task::caption: {
                a.add("exact_match", pred == inst.target_ids ? 1.0 : 0.0);
                size_t same = 0;
                for (size_t i = 0; i < pred.size(); ++i) {
                    same += pred[i] == inst.target_ids[i] ? 1 : 0;
                }
                a.add("token_accuracy",
                      static_cast<double>(same) / static_cast<double>(pred.size()));
                a.add("bleu4", bleu4(pred, inst.target_ids));
                break;
            }
            case Task::detect: {
                const DetectionResult parsed = parse_detection(pred, data.vocab);
                std::vector<std::pair<int, Box>> truth;
                for (const auto& o : inst.scene.objects) {
                    truth.push_back({o.class_id, o.box});
                }
                const DetectionScores s = detection_scores(parsed, truth);
                a.add("set_f1_at_05", s.set_f1_at_05);
                a.add("precision", s.precision);
                a.add("recall", s.recall);
                a.add("duplicate_rate", s.duplicate_rate);
                const size_t spans = parsed.predicted.size() + parsed.malformed_spans;
                a.add("malformed_rate",
                      spans > 0 ? static_cast<double>(parsed.malformed_spans) /
                                      static_cast<double>(spans)
                                : 0.0);
                break;
            }
            case Task::ground: {
                const Box& truth = inst.scene.objects[static_cast<size_t>(inst.ref_object)].box;
                a.add("acc_at_05", grounding_acc(pred, truth, data.vocab));
                break;
            }
            case Task::classify: {
                a.add("accuracy",
                      !pred.empty() && pred[0] == inst.target_ids[0] ? 1.0 : 0.0);
                break;
            }
        }
        report.instance_count++;
    }

    for (auto& [task, a] : acc) {
        for (auto& [key, sum] : a.sums) {
            report.per_task[task][key] = sum / static_cast<double>(a.count);
        }
    }
    return report;
}

std::string report_to_json(const MetricsReport& report) {
    json j;
    j["instance_count"] = report.instance_count;
    j["decoder"] = {{"mode", report.settings.use_ar ? "ar" : "diffusion"},
                    {"n_steps", report.settings.n_steps},
                    {"strategy", remask_kind_name(report.settings.strategy.kind)},
                    {"strategy_seed", report.settings.strategy.seed}};
    for (const auto& [task, metrics] : report.per_task) {
        for (const auto& [key, value] : metrics) {
            j["tasks"][task][key] = value;
        }
    }
    return j.dump(2);
}

AblationKind ablation_from_name(const std::string& s) {
    if (s == "remask_strategy" || s == "remask-strategy") return AblationKind::remask_strategy;
    if (s == "timesteps") return AblationKind::timesteps;
    if (s == "paradigm") return AblationKind::paradigm;
    throw std::runtime_error("unknown ablation: " + s);
}

namespace {

std::string fmt(double x) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", x);
    return buf;
}

double metric(const MetricsReport& r, const char* task, const char* key) {
    auto t = r.per_task.find(task);
    if (t == r.per_task.end()) {
        return 0.0;
    }
    auto m = t->second.find(key);
    return m == t->second.end() ? 0.0 : m->second;
}

std::vector<std::string> summary_row(const std::string& label, const MetricsReport& r) {
    return {label, fmt(metric(r, "caption", "bleu4")), fmt(metric(r, "detect", "set_f1_at_05")),
            fmt(metric(r, "detect", "duplicate_rate")), fmt(metric(r, "ground", "acc_at_05")),
            fmt(metric(r, "classify", "accuracy"))};
}

} // namespace

AblationTable run_ablation(AblationKind kind, const Net<float>& net, const Net<float>* ar_net,
                           const Dataset& data, size_t n_steps, size_t n_random_seeds) {
    AblationTable t;
    switch (kind) {
        case AblationKind::remask_strategy: {
            t.columns = {"strategy", "caption_bleu4", "detect_f1", "detect_duplicate_rate",
                         "ground_acc", "classify_acc"};
            EvalSettings s;
            s.n_steps = n_steps;
            s.strategy = RemaskStrategy::low_conf();
            t.rows.push_back(summary_row("low_confidence", evaluate(net, data, s)));
            MetricsReport mean;
            for (size_t i = 0; i < n_random_seeds; ++i) {
                s.strategy = RemaskStrategy::random(i + 1);
                const MetricsReport r = evaluate(net, data, s);
                for (const auto& [task, metrics] : r.per_task) {
                    for (const auto& [key, value] : metrics) {
                        mean.per_task[task][key] += value / static_cast<double>(n_random_seeds);
                    }
                }
                mean.instance_count = r.instance_count;
            }
            t.rows.push_back(summary_row("random_mean", mean));
            break;
        }
        case AblationKind::timesteps: {
            t.columns = {"n_steps", "caption_bleu4", "detect_f1", "detect_duplicate_rate",
                         "ground_acc", "classify_acc"};
            for (size_t n : {1, 2, 4, 8, 16}) {
                EvalSettings s;
                s.n_steps = n;
                s.strategy = RemaskStrategy::low_conf();
                t.rows.push_back(summary_row(std::to_string(n), evaluate(net, data, s)));
            }
            break;
        }
        case AblationKind::paradigm: {
            if (ar_net == nullptr) {
                throw std::runtime_error(
                    "paradigm comparison needs a causal-baseline checkpoint");
            }
            t.columns = {"decoder", "detect_f1", "detect_precision", "detect_recall",
                         "detect_duplicate_rate"};
            EvalSettings s;
            s.n_steps = n_steps;
            s.strategy = RemaskStrategy::low_conf();
            const MetricsReport diff = evaluate(net, data, s);
            EvalSettings sa;
            sa.use_ar = true;
            const MetricsReport ar = evaluate(*ar_net, data, sa);
            auto row = [&](const std::string& label, const MetricsReport& r) {
                return std::vector<std::string>{label, fmt(metric(r, "detect", "set_f1_at_05")),
                                               fmt(metric(r, "detect", "precision")),
                                               fmt(metric(r, "detect", "recall")),
                                               fmt(metric(r, "detect", "duplicate_rate"))};
            };
            t.rows.push_back(row("diffusion_n8", diff));
            t.rows.push_back(row("ar_greedy", ar));
            break;
        }
    }
    return t;
}

std::string table_to_csv(const AblationTable& t) {
    std::ostringstream out;
    for (size_t i = 0; i < t.columns.size(); ++i) {
        out << (i ? "," : "") << t.columns[i];
    }
    out << "\n";
    for (const auto& row : t.rows) {
        for (size_t i = 0; i < row.size(); ++i) {
            out << (i ? "," : "") << row[i];
        }
        out << "\n";
    }
    return out.str();
}

std::string table_to_text(const AblationTable& t) {
    std::vector<size_t> widths(t.columns.size(), 0);
    for (size_t i = 0; i < t.columns.size(); ++i) {
        widths[i] = t.columns[i].size();
    }
    for (const auto& row : t.rows) {
        for (size_t i = 0; i < row.size(); ++i) {
            widths[i] = std::max(widths[i], row[i].size());
        }
    }
    std::ostringstream out;
    auto emit = [&](const std::vector<std::string>& row) {
        for (size_t i = 0; i < row.size(); ++i) {
            out << (i ? "  " : "") << row[i]
                << std::string(widths[i] - row[i].size(), ' ');
        }
        out << "\n";
    };
    emit(t.columns);
    for (const auto& row : t.rows) {
        emit(row);
    }
    return out.str();
}

} // namespace griddiff
