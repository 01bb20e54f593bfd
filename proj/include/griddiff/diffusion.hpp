#pragma once
// Forward masking process, mask-and-predict loss, the causal baseline loss,
// and the staged trainer (text pretrain -> projector alignment -> full
// instruction tuning, plus the autoregressive baseline).

#include "griddiff/dataset.hpp"
#include "griddiff/net.hpp"
#include "griddiff/rng.hpp"

#include <algorithm>
#include <string>
#include <vector>

namespace griddiff {

struct MaskedSequence {
    std::vector<int> ids;        // [M] id at masked positions
    std::vector<char> mask_flags; // true where ids[i] == [M]
    double t = 0;                // corruption level in [0,1]
};

/// Each position is independently replaced by [M] with probability t.
MaskedSequence forward_mask(const std::vector<int>& target_ids, double t, Rng& rng);

enum class LossMode : uint8_t {
    mean_masked = 0, // per-example mean over masked positions (default)
    sum = 1,         // unnormalized sum over masked positions
    sum_inv_t = 2,   // sum weighted by 1/t
};

/// Cross-entropy restricted to masked positions. If dlogits is non-null it
/// receives the gradient (rows at unmasked positions stay zero); `scale`
/// multiplies both loss and gradient.
template <class Real>
double masked_ce(const Tensor<Real>& logits, const std::vector<int>& target_ids,
                 const std::vector<char>& mask_flags, LossMode mode, double t,
                 Tensor<Real>* dlogits = nullptr, double scale = 1.0) {
    const size_t L = target_ids.size();
    const size_t V = logits.cols();
    size_t n_masked = 0;
    for (char f : mask_flags) {
        n_masked += f ? 1 : 0;
    }
    double norm = 1.0;
    if (mode == LossMode::mean_masked) {
        norm = 1.0 / static_cast<double>(std::max<size_t>(1, n_masked));
    } else if (mode == LossMode::sum_inv_t) {
        norm = 1.0 / std::max(t, 1e-3);
    }
    const double w = scale * norm;
    double loss = 0;
    std::vector<Real> p(V);
    for (size_t i = 0; i < L; ++i) {
        if (!mask_flags[i]) {
            continue;
        }
        const int tgt = target_ids[i];
        if (tgt < 0 || tgt >= static_cast<int>(V)) {
            throw std::runtime_error("masked_ce: target id out of range");
        }
        std::copy(logits.row(i), logits.row(i) + V, p.data());
        softmax_row(p.data(), V);
        loss += -std::log(static_cast<double>(std::max(p[static_cast<size_t>(tgt)],
                                                       std::numeric_limits<Real>::min())));
        if (dlogits != nullptr) {
            Real* dr = dlogits->row(i);
            for (size_t j = 0; j < V; ++j) {
                dr[j] += static_cast<Real>(w) * p[j];
            }
            dr[static_cast<size_t>(tgt)] -= static_cast<Real>(w);
        }
    }
    return loss * w;
}

struct CausalLossResult {
    double loss = 0;
    bool all_pad = false;
};

/// Mean next-token cross-entropy over positions whose target is not [PAD].
template <class Real>
CausalLossResult causal_ce(const Tensor<Real>& logits, const std::vector<int>& target_ids,
                           Tensor<Real>* dlogits = nullptr, double scale = 1.0) {
    const size_t L = target_ids.size();
    const size_t V = logits.cols();
    size_t n_live = 0;
    for (int id : target_ids) {
        n_live += (id != Vocabulary::kPad) ? 1 : 0;
    }
    if (n_live == 0) {
        return {0.0, true};
    }
    const double w = scale / static_cast<double>(n_live);
    double loss = 0;
    std::vector<Real> p(V);
    for (size_t i = 0; i < L; ++i) {
        if (target_ids[i] == Vocabulary::kPad) {
            continue;
        }
        std::copy(logits.row(i), logits.row(i) + V, p.data());
        softmax_row(p.data(), V);
        loss += -std::log(static_cast<double>(std::max(p[static_cast<size_t>(target_ids[i])],
                                                       std::numeric_limits<Real>::min())));
        if (dlogits != nullptr) {
            Real* dr = dlogits->row(i);
            for (size_t j = 0; j < V; ++j) {
                dr[j] += static_cast<Real>(w) * p[j];
            }
            dr[static_cast<size_t>(target_ids[i])] -= static_cast<Real>(w);
        }
    }
    return {loss * w, false};
}

enum class LossFn : uint8_t { diffusion = 0, causal = 1 };

/// One batch element, already masked / shifted by the caller. Loss rows are
/// logits rows [loss_offset, loss_offset + target_ids.size()).
template <class Real>
struct TrainItem {
    Tensor<Real> features;
    std::vector<int> text_ids;
    std::vector<int> target_ids;
    std::vector<char> mask_flags; // diffusion only
    size_t loss_offset = 0;
    double t = 0; // diffusion timestep of this item
};

/// Mean loss over the batch; gradients for trainable tensors accumulate into
/// `grads`. Throws a numeric error naming the offending item on non-finite
/// loss.
template <class Real>
double loss_and_grads(const Net<Real>& net, const std::vector<TrainItem<Real>>& items,
                      LossFn fn, LossMode mode, Grads<Real>& grads) {
    if (items.empty()) {
        throw std::runtime_error("loss_and_grads: empty batch");
    }
    const double inv_b = 1.0 / static_cast<double>(items.size());
    double total = 0;
    Workspace<Real> ws;
    for (size_t b = 0; b < items.size(); ++b) {
        const auto& item = items[b];
        const AttentionMode attn =
            fn == LossFn::causal ? AttentionMode::causal : AttentionMode::bidirectional;
        net.forward(item.features, item.text_ids, attn, ws);

        const size_t Lt = item.target_ids.size();
        Tensor<Real> sub({Lt, static_cast<size_t>(net.cfg.vocab_size)});
        std::copy(ws.logits.row(item.loss_offset), ws.logits.row(item.loss_offset + Lt),
                  sub.ptr());
        Tensor<Real> dsub({Lt, static_cast<size_t>(net.cfg.vocab_size)});
        double item_loss = 0;
        if (fn == LossFn::diffusion) {
            item_loss = masked_ce(sub, item.target_ids, item.mask_flags, mode, item.t, &dsub,
                                  inv_b);
        } else {
            item_loss = causal_ce(sub, item.target_ids, &dsub, inv_b).loss;
        }
        if (!std::isfinite(item_loss)) {
            throw std::runtime_error("non-finite loss at batch item " + std::to_string(b));
        }
        total += item_loss; // already carries the 1/B batch weight

        Tensor<Real> dlogits({ws.logits.rows(), ws.logits.cols()});
        std::copy(dsub.ptr(), dsub.ptr() + dsub.count(), dlogits.row(item.loss_offset));
        net.backward(dlogits, ws, grads);
    }
    return total;
}

enum class Stage : uint8_t { text_pretrain = 0, align = 1, full = 2, ar_baseline = 3 };

const char* stage_name(Stage s);
Stage stage_from_name(const std::string& s);

struct TrainConfig {
    Stage stage = Stage::full;
    size_t steps = 1000;
    size_t batch_size = 32;
    double peak_lr = 1e-3;
    double warmup_frac = 0.03;
    uint64_t seed = 0;
    LossMode loss_mode = LossMode::mean_masked;
    size_t checkpoint_every = 0; // 0: only at stage end
    std::string out_dir;         // when set: training log + checkpoints go here
};

struct TrainStepLog {
    size_t step;
    double lr;
    double loss;
};

double lr_at(const TrainConfig& cfg, size_t step);
std::vector<char> stage_trainable(Stage stage, const Params<float>& params);

/// Runs one training stage in place. Returns the per-step log.
std::vector<TrainStepLog> train(const TrainConfig& cfg, const Dataset& data, Net<float>& net);

// Checkpoint format: "GDIT" magic, u32 version, length-prefixed JSON config,
// then named f32 tensors.
void save_checkpoint(const Net<float>& net, const std::string& path);
Net<float> load_checkpoint(const std::string& path);

} // namespace griddiff
