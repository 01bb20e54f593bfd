#include "griddiff/diffusion.hpp"

#include <json.hpp>

#include <cstring>
#include <filesystem>
#include <fstream>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace griddiff {

MaskedSequence forward_mask(const std::vector<int>& target_ids, double t, Rng& rng) {
    if (t < 0.0 || t > 1.0) {
        throw std::runtime_error("forward_mask: t must lie in [0,1]");
    }
    for (int id : target_ids) {
        if (id == Vocabulary::kMask) {
            throw std::runtime_error("forward_mask: target already contains [M]");
        }
    }
    MaskedSequence out;
    out.t = t;
    out.ids = target_ids;
    out.mask_flags.assign(target_ids.size(), 0);
    for (size_t i = 0; i < target_ids.size(); ++i) {
        if (rng.uniform() < t) {
            out.ids[i] = Vocabulary::kMask;
            out.mask_flags[i] = 1;
        }
    }
    return out;
}

const char* stage_name(Stage s) {
    switch (s) {
        case Stage::text_pretrain: return "text_pretrain";
        case Stage::align: return "align";
        case Stage::full: return "full";
        case Stage::ar_baseline: return "ar_baseline";
    }
    return "?";
}

Stage stage_from_name(const std::string& s) {
    if (s == "text_pretrain") return Stage::text_pretrain;
    if (s == "align") return Stage::align;
    if (s == "full") return Stage::full;
    if (s == "ar_baseline") return Stage::ar_baseline;
    throw std::runtime_error("unknown stage: " + s);
}

double lr_at(const TrainConfig& cfg, size_t step) {
    const double total = static_cast<double>(cfg.steps);
    const double warm = std::floor(cfg.warmup_frac * total);
    const double s = static_cast<double>(step);
    if (warm > 0 && s < warm) {
        return cfg.peak_lr * s / warm;
    }
    const double denom = std::max(1.0, total - warm);
    const double progress = std::min(1.0, (s - warm) / denom);
    return cfg.peak_lr * 0.5 * (1.0 + std::cos(3.141592653589793 * progress));
}

std::vector<char> stage_trainable(Stage stage, const Params<float>& params) {
    std::vector<char> mask(params.tensors.size(), 1);
    if (stage == Stage::align) {
        for (size_t i = 0; i < params.names.size(); ++i) {
            mask[i] = params.names[i].rfind("proj.", 0) == 0 ? 1 : 0;
        }
    }
    return mask;
}

namespace {

TrainItem<float> build_item(const TaskInstance& inst, Stage stage, const GenSpec& spec,
                            const ModelConfig& cfg, Rng& rng) {
    TrainItem<float> item;
    if (stage == Stage::text_pretrain) {
        item.features = Tensor<float>({static_cast<size_t>(cfg.n_patches()),
                                       static_cast<size_t>(cfg.d_v)});
    } else {
        item.features = render_features(inst.scene, spec, cfg.d_v);
    }
    item.target_ids = inst.target_ids;
    if (stage == Stage::ar_baseline) {
        item.text_ids = inst.prompt_ids;
        item.text_ids.insert(item.text_ids.end(), inst.target_ids.begin(),
                             inst.target_ids.end() - 1);
        item.loss_offset = inst.prompt_ids.size() - 1;
    } else {
        const double t = rng.uniform();
        MaskedSequence seq = forward_mask(inst.target_ids, t, rng);
        item.text_ids = inst.prompt_ids;
        item.text_ids.insert(item.text_ids.end(), seq.ids.begin(), seq.ids.end());
        item.mask_flags = seq.mask_flags;
        item.loss_offset = inst.prompt_ids.size();
        item.t = t;
    }
    return item;
}

} // namespace

std::vector<TrainStepLog> train(const TrainConfig& cfg, const Dataset& data, Net<float>& net) {
    if (data.instances.empty()) {
        throw std::runtime_error("train: empty dataset");
    }
    if (net.cfg.vocab_hash != 0 && net.cfg.vocab_hash != data.vocab.hash()) {
        throw std::runtime_error("train: model and dataset vocabulary hashes differ");
    }
    net.cfg.vocab_hash = data.vocab.hash();

    const LossFn fn = cfg.stage == Stage::ar_baseline ? LossFn::causal : LossFn::diffusion;
    const auto trainable = stage_trainable(cfg.stage, net.params);
    Grads<float> grads = Grads<float>::for_params(net.params, trainable);
    AdamW<float> opt(net.cfg);
    opt.lr = cfg.peak_lr;

    std::ofstream log_file;
    if (!cfg.out_dir.empty()) {
        fs::create_directories(cfg.out_dir);
        log_file.open(fs::path(cfg.out_dir) / "train_log.jsonl", std::ios::app);
    }

    Rng rng(derive_seed(cfg.seed, 0x7121A11));
    std::vector<size_t> order(data.instances.size());
    for (size_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }
    size_t cursor = order.size(); // forces a shuffle before the first batch
    uint64_t epoch = 0;

    std::vector<TrainStepLog> log;
    log.reserve(cfg.steps);
    for (size_t step = 0; step < cfg.steps; ++step) {
        std::vector<TrainItem<float>> items;
        items.reserve(cfg.batch_size);
        for (size_t b = 0; b < cfg.batch_size; ++b) {
            if (cursor >= order.size()) {
                Rng shuffle_rng(derive_seed(cfg.seed, 0xE90C4, epoch++));
                shuffle_rng.shuffle(order);
                cursor = 0;
            }
            const auto& inst = data.instances[order[cursor++]];
            items.push_back(build_item(inst, cfg.stage, data.manifest.spec, net.cfg, rng));
        }

        grads.zero();
        double loss;
        try {
            loss = loss_and_grads(net, items, fn, cfg.loss_mode, grads);
        } catch (const std::exception& e) {
            // last periodic checkpoint (if any) stays on disk as the last-good state
            throw std::runtime_error(std::string("training aborted at step ") +
                                     std::to_string(step) + ": " + e.what());
        }
        opt.lr = lr_at(cfg, step);
        opt.step(net.params, grads);

        log.push_back({step, opt.lr, loss});
        if (log_file.is_open()) {
            json rec{{"step", step}, {"stage", stage_name(cfg.stage)}, {"lr", opt.lr}, {"loss", loss}};
            log_file << rec.dump() << "\n";
        }
        if (!cfg.out_dir.empty() && cfg.checkpoint_every > 0 &&
            (step + 1) % cfg.checkpoint_every == 0) {
            save_checkpoint(net, (fs::path(cfg.out_dir) / "checkpoint_last.ckpt").string());
        }
    }
    if (!cfg.out_dir.empty()) {
        save_checkpoint(net, (fs::path(cfg.out_dir) / "checkpoint.ckpt").string());
    }
    return log;
}

// ---------------------------------------------------------------------------
// checkpoint format

namespace {

constexpr char kMagic[4] = {'G', 'D', 'I', 'T'};
constexpr uint32_t kVersion = 1;

void format_error(const std::string& what, std::streampos offset) {
    throw std::runtime_error("checkpoint: " + what + " at byte offset " +
                             std::to_string(static_cast<long long>(offset)));
}

} // namespace

void save_checkpoint(const Net<float>& net, const std::string& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) {
        throw std::runtime_error("cannot write checkpoint: " + path);
    }
    f.write(kMagic, 4);
    f.write(reinterpret_cast<const char*>(&kVersion), 4);

    char hex[17];
    std::snprintf(hex, sizeof(hex), "%016llx",
                  static_cast<unsigned long long>(net.cfg.vocab_hash));
    json cfg{{"d", net.cfg.d},
             {"n_layers", net.cfg.n_layers},
             {"n_heads", net.cfg.n_heads},
             {"d_v", net.cfg.d_v},
             {"grid", net.cfg.grid},
             {"max_text_len", net.cfg.max_text_len},
             {"vocab_size", net.cfg.vocab_size},
             {"default_mode",
              net.cfg.default_mode == AttentionMode::causal ? "causal" : "bidirectional"},
             {"vocab_hash", hex}};
    const std::string cfg_str = cfg.dump();
    const uint32_t cfg_len = static_cast<uint32_t>(cfg_str.size());
    f.write(reinterpret_cast<const char*>(&cfg_len), 4);
    f.write(cfg_str.data(), cfg_len);

    for (size_t i = 0; i < net.params.tensors.size(); ++i) {
        const auto& name = net.params.names[i];
        const auto& t = net.params.tensors[i];
        const uint16_t name_len = static_cast<uint16_t>(name.size());
        f.write(reinterpret_cast<const char*>(&name_len), 2);
        f.write(name.data(), name_len);
        const uint8_t rank = static_cast<uint8_t>(t.dims.size());
        f.write(reinterpret_cast<const char*>(&rank), 1);
        for (size_t dim : t.dims) {
            const uint32_t d32 = static_cast<uint32_t>(dim);
            f.write(reinterpret_cast<const char*>(&d32), 4);
        }
        f.write(reinterpret_cast<const char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    }
    if (!f) {
        throw std::runtime_error("checkpoint write failed: " + path);
    }
}

Net<float> load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw std::runtime_error("cannot read checkpoint: " + path);
    }
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, kMagic, 4) != 0) {
        format_error("bad magic", 0);
    }
    uint32_t version = 0;
    f.read(reinterpret_cast<char*>(&version), 4);
    if (!f || version != kVersion) {
        format_error("unsupported version", 4);
    }
    uint32_t cfg_len = 0;
    f.read(reinterpret_cast<char*>(&cfg_len), 4);
    std::string cfg_str(cfg_len, '\0');
    f.read(cfg_str.data(), cfg_len);
    if (!f) {
        format_error("truncated config block", f.tellg());
    }
    json cfg = json::parse(cfg_str, nullptr, false);
    if (cfg.is_discarded()) {
        format_error("config block is not valid JSON", 12);
    }

    Net<float> net;
    net.cfg.d = cfg.at("d");
    net.cfg.n_layers = cfg.at("n_layers");
    net.cfg.n_heads = cfg.at("n_heads");
    net.cfg.d_v = cfg.at("d_v");
    net.cfg.grid = cfg.at("grid");
    net.cfg.max_text_len = cfg.at("max_text_len");
    net.cfg.vocab_size = cfg.at("vocab_size");
    net.cfg.default_mode = cfg.at("default_mode") == "causal" ? AttentionMode::causal
                                                              : AttentionMode::bidirectional;
    net.cfg.vocab_hash = std::stoull(cfg.at("vocab_hash").get<std::string>(), nullptr, 16);
    net.params = Params<float>::shapes_for(net.cfg);

    std::vector<char> seen(net.params.tensors.size(), 0);
    while (f.peek() != EOF) {
        const std::streampos at = f.tellg();
        uint16_t name_len = 0;
        f.read(reinterpret_cast<char*>(&name_len), 2);
        std::string name(name_len, '\0');
        f.read(name.data(), name_len);
        uint8_t rank = 0;
        f.read(reinterpret_cast<char*>(&rank), 1);
        std::vector<size_t> dims(rank);
        for (uint8_t i = 0; i < rank; ++i) {
            uint32_t d32 = 0;
            f.read(reinterpret_cast<char*>(&d32), 4);
            dims[i] = d32;
        }
        if (!f) {
            format_error("truncated tensor header", at);
        }
        auto it = net.params.index.find(name);
        if (it == net.params.index.end()) {
            format_error("unknown tensor '" + name + "'", at);
        }
        auto& t = net.params.tensors[it->second];
        if (t.dims != dims) {
            format_error("tensor '" + name + "' has shape " + shape_str(dims) + ", expected " +
                             shape_str(t.dims),
                         at);
        }
        f.read(reinterpret_cast<char*>(t.data.data()),
               static_cast<std::streamsize>(t.data.size() * sizeof(float)));
        if (!f) {
            format_error("truncated tensor '" + name + "'", at);
        }
        seen[it->second] = 1;
    }
    for (size_t i = 0; i < seen.size(); ++i) {
        if (!seen[i]) {
            format_error("missing tensor '" + net.params.names[i] + "'", f.tellg());
        }
    }
    return net;
}

} // namespace griddiff
