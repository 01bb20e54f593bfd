#include "griddiff/decode.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

using json = nlohmann::json;

namespace griddiff {

Schedule build_schedule(size_t n_steps, size_t gen_len) {
    if (n_steps < 1 || gen_len < 1) {
        throw std::runtime_error("schedule: N and L_gen must be at least 1");
    }
    if (n_steps > gen_len) {
        throw std::runtime_error("schedule: N=" + std::to_string(n_steps) + " exceeds L_gen=" +
                                 std::to_string(gen_len) +
                                 " (cannot commit at least one token per step)");
    }
    Schedule s;
    s.n_steps = n_steps;
    s.gen_len = gen_len;
    s.mask_counts.resize(n_steps + 1);
    s.mask_counts[n_steps] = gen_len;
    for (size_t k = 1; k < n_steps; ++k) {
        const double t = static_cast<double>(k) / static_cast<double>(n_steps);
        const double gamma = std::sin(1.5707963267948966 * t);
        s.mask_counts[k] =
            static_cast<size_t>(std::ceil(gamma * static_cast<double>(gen_len)));
    }
    s.mask_counts[0] = 0;
    for (size_t k = n_steps; k-- > 1;) {
        s.mask_counts[k] = std::min(s.mask_counts[k], s.mask_counts[k + 1] - 1);
    }
    return s;
}

const char* remask_kind_name(RemaskKind k) {
    return k == RemaskKind::low_confidence ? "low_confidence" : "random";
}

void predict_full(const Net<float>& net, const Tensor<float>& features,
                  const std::vector<int>& prompt_ids, const std::vector<int>& gen_ids,
                  const std::vector<char>& gen_mask, std::vector<int>& prediction,
                  std::vector<double>& confidence, Workspace<float>& ws) {
    const size_t Lg = gen_ids.size();
    std::vector<int> text = prompt_ids;
    text.insert(text.end(), gen_ids.begin(), gen_ids.end());
    net.forward(features, text, AttentionMode::bidirectional, ws);

    prediction.assign(Lg, 0);
    confidence.assign(Lg, 1.0);
    const size_t V = static_cast<size_t>(net.cfg.vocab_size);
    std::vector<float> p(V);
    for (size_t i = 0; i < Lg; ++i) {
        if (!gen_mask[i]) {
            prediction[i] = gen_ids[i];
            continue;
        }
        const float* row = ws.logits.row(prompt_ids.size() + i);
        std::copy(row, row + V, p.data());
        softmax_row(p.data(), V);
        size_t best = 0;
        for (size_t j = 1; j < V; ++j) {
            if (p[j] > p[best]) {
                best = j;
            }
        }
        prediction[i] = static_cast<int>(best);
        confidence[i] = static_cast<double>(p[best]);
    }
}

std::vector<size_t> remask(const std::vector<double>& confidence,
                           const std::vector<size_t>& eligible, size_t m_next,
                           RemaskKind kind, Rng& rng) {
    if (m_next > eligible.size()) {
        throw std::runtime_error("remask: schedule asks for " + std::to_string(m_next) +
                                 " masks but only " + std::to_string(eligible.size()) +
                                 " positions are open");
    }
    if (m_next == eligible.size() && m_next > 0) {
        throw std::runtime_error("remask: step would commit no tokens");
    }
    std::vector<size_t> pool = eligible;
    if (kind == RemaskKind::low_confidence) {
        std::stable_sort(pool.begin(), pool.end(), [&](size_t a, size_t b) {
            if (confidence[a] != confidence[b]) {
                return confidence[a] < confidence[b];
            }
            return a < b;
        });
    } else {
        for (size_t i = 0; i < m_next; ++i) {
            const size_t j = i + rng.below(pool.size() - i);
            std::swap(pool[i], pool[j]);
        }
    }
    pool.resize(m_next);
    std::sort(pool.begin(), pool.end());
    return pool;
}

std::pair<std::vector<int>, DecodeTrace> decode_diffusion(const Net<float>& net,
                                                          const Tensor<float>& features,
                                                          const std::vector<int>& prompt_ids,
                                                          size_t gen_len, size_t n_steps,
                                                          RemaskStrategy strategy) {
    DecodeTrace trace;
    trace.schedule = build_schedule(n_steps, gen_len);
    trace.strategy = strategy.kind;
    trace.finalization_step.assign(gen_len, 0);

    std::vector<int> gen(gen_len, Vocabulary::kMask);
    std::vector<char> mask(gen_len, 1);
    Rng rng(derive_seed(strategy.seed, 0xDEC0DE));
    Workspace<float> ws;

    for (size_t k = n_steps; k >= 1; --k) {
        DecodeStep step;
        step.step = k;
        predict_full(net, features, prompt_ids, gen, mask, step.prediction, step.confidence, ws);

        std::vector<size_t> eligible;
        for (size_t i = 0; i < gen_len; ++i) {
            if (mask[i]) {
                eligible.push_back(i);
            }
        }
        const size_t m_next = trace.schedule.mask_counts[k - 1];
        auto keep_masked = remask(step.confidence, eligible, m_next, strategy.kind, rng);

        std::vector<char> stays(gen_len, 0);
        for (size_t i : keep_masked) {
            stays[i] = 1;
        }
        for (size_t i : eligible) {
            if (!stays[i]) {
                gen[i] = step.prediction[i];
                mask[i] = 0;
                step.committed.push_back(i);
                trace.finalization_step[i] = static_cast<int>(k);
            }
        }
        trace.steps.push_back(std::move(step));
    }
    trace.output = gen;
    return {gen, trace};
}

std::vector<int> decode_ar(const Net<float>& net, const Tensor<float>& features,
                           const std::vector<int>& prompt_ids, size_t max_len) {
    std::vector<int> text = prompt_ids;
    Workspace<float> ws;
    const size_t V = static_cast<size_t>(net.cfg.vocab_size);
    for (size_t step = 0; step < max_len; ++step) {
        net.forward(features, text, AttentionMode::causal, ws);
        const float* row = ws.logits.row(text.size() - 1);
        size_t best = 0;
        for (size_t j = 1; j < V; ++j) {
            if (row[j] > row[best]) {
                best = j;
            }
        }
        text.push_back(static_cast<int>(best));
    }
    return std::vector<int>(text.begin() + static_cast<std::ptrdiff_t>(prompt_ids.size()),
                            text.end());
}

std::string trace_to_json(const DecodeTrace& trace, const Vocabulary& v) {
    json j;
    j["schedule"] = {{"n_steps", trace.schedule.n_steps},
                     {"gen_len", trace.schedule.gen_len},
                     {"mask_counts", trace.schedule.mask_counts}};
    j["strategy"] = remask_kind_name(trace.strategy);
    json steps = json::array();
    for (const auto& s : trace.steps) {
        steps.push_back({{"step", s.step},
                         {"committed", s.committed},
                         {"prediction", s.prediction},
                         {"confidence", s.confidence}});
    }
    j["steps"] = steps;
    j["finalization_step"] = trace.finalization_step;
    j["output_ids"] = trace.output;
    j["output_text"] = v.detokenize(trace.output);
    return j.dump(2);
}

void save_trace(const DecodeTrace& trace, const Vocabulary& v, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) {
        throw std::runtime_error("cannot write trace: " + path);
    }
    f << trace_to_json(trace, v) << "\n";
}

} // namespace griddiff
