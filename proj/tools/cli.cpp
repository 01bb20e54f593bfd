// Single entry point for the whole pipeline: data generation, staged
// training, decoding, evaluation, ablations and trace rendering.
// Exit codes: 0 success, 1 usage error, 2 runtime failure.

#include "griddiff/dataset.hpp"
#include "griddiff/decode.hpp"
#include "griddiff/diffusion.hpp"
#include "griddiff/eval.hpp"
#include "griddiff/net.hpp"
#include "griddiff/scene.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace griddiff;

namespace {

// flags > config file > built-in defaults; the config file only fills in
// options that were not given on the command line
class Binds {
  public:
    template <class T>
    void add(CLI::Option* o, T* var, std::string key) {
        fns_.push_back([o, var, key = std::move(key)](const json& c) {
            if (o->count() == 0 && c.contains(key)) {
                *var = c.at(key).get<T>();
            }
        });
    }

    void apply(const std::string& cfg_path) const {
        if (cfg_path.empty()) {
            return;
        }
        std::ifstream f(cfg_path);
        if (!f) {
            throw std::runtime_error("cannot read config file: " + cfg_path);
        }
        const json c = json::parse(f);
        for (const auto& fn : fns_) {
            fn(c);
        }
    }

  private:
    std::vector<std::function<void(const json&)>> fns_;
};

// concurrent invocations must target distinct --out roots
class OutLock {
  public:
    explicit OutLock(const std::string& out) {
        fs::create_directories(out);
        path_ = fs::path(out) / ".lock";
        FILE* f = std::fopen(path_.c_str(), "wx");
        if (f == nullptr) {
            throw std::runtime_error("output directory is locked by another run: " +
                                     path_.string());
        }
        std::fclose(f);
    }
    ~OutLock() {
        std::error_code ec;
        fs::remove(path_, ec);
    }
    OutLock(const OutLock&) = delete;
    OutLock& operator=(const OutLock&) = delete;

  private:
    fs::path path_;
};

void write_manifest(const std::string& out, const std::string& command, json config) {
    json m{{"command", command}, {"config", std::move(config)}};
    std::ofstream f(fs::path(out) / "manifest.json", std::ios::trunc);
    if (!f) {
        throw std::runtime_error("cannot write manifest in " + out);
    }
    f << m.dump(2) << "\n";
}

struct ModelFlags {
    int d = 128;
    int layers = 4;
    int heads = 8;
    int d_v = 32;
    int max_text_len = 40;
};

void add_model_flags(CLI::App* cmd, ModelFlags& mf, Binds& binds) {
    binds.add(cmd->add_option("--d", mf.d, "model width"), &mf.d, "d");
    binds.add(cmd->add_option("--layers", mf.layers, "transformer layers"), &mf.layers, "layers");
    binds.add(cmd->add_option("--heads", mf.heads, "attention heads"), &mf.heads, "heads");
    binds.add(cmd->add_option("--dv", mf.d_v, "visual feature width"), &mf.d_v, "dv");
    binds.add(cmd->add_option("--max-text-len", mf.max_text_len, "text capacity"),
              &mf.max_text_len, "max_text_len");
}

Net<float> fresh_model(const ModelFlags& mf, const Dataset& data, AttentionMode mode,
                       uint64_t seed) {
    ModelConfig cfg;
    cfg.d = mf.d;
    cfg.n_layers = mf.layers;
    cfg.n_heads = mf.heads;
    cfg.d_v = mf.d_v;
    cfg.grid = data.manifest.spec.grid;
    cfg.max_text_len = mf.max_text_len;
    cfg.vocab_size = static_cast<int>(data.vocab.size());
    cfg.default_mode = mode;
    cfg.vocab_hash = data.vocab.hash();
    return Net<float>(cfg, derive_seed(seed, 0x1417));
}

RemaskStrategy parse_strategy(const std::string& name, uint64_t seed) {
    if (name == "low-confidence" || name == "low_confidence") {
        return RemaskStrategy::low_conf();
    }
    if (name == "random") {
        return RemaskStrategy::random(seed);
    }
    throw CLI::ValidationError("--strategy", "must be low-confidence or random");
}

std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

const char* kTercileSvgColor[3] = {"#f2c744", "#f279b2", "#4979f2"};
const char* kTercileName[3] = {"early", "middle", "late"};
const char* kTercileAnsi[3] = {"\x1b[33m", "\x1b[35m", "\x1b[34m"};

std::string render_trace_svg(const std::vector<std::string>& tokens,
                             const std::vector<int>& terciles) {
    const int cell_w = 72;
    const int width = 20 + cell_w * static_cast<int>(tokens.size());
    std::ostringstream s;
    s << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << std::max(width, 320)
      << "\" height=\"90\">\n";
    s << "  <style>text { font-family: monospace; font-size: 14px; }</style>\n";
    for (size_t i = 0; i < tokens.size(); ++i) {
        s << "  <text x=\"" << 10 + cell_w * static_cast<int>(i)
          << "\" y=\"30\" fill=\"" << kTercileSvgColor[terciles[i]] << "\">"
          << xml_escape(tokens[i]) << "</text>\n";
    }
    for (int t = 0; t < 3; ++t) {
        s << "  <rect x=\"" << 10 + 100 * t
          << "\" y=\"55\" width=\"12\" height=\"12\" fill=\"" << kTercileSvgColor[t]
          << "\"/>\n";
        s << "  <text x=\"" << 28 + 100 * t << "\" y=\"66\">" << kTercileName[t]
          << "</text>\n";
    }
    s << "</svg>\n";
    return s.str();
}

struct SmokeFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace

int run(int argc, char** argv) {
    CLI::App app{"masked-diffusion scene-to-text pipeline"};
    app.require_subcommand(1);

    // ---- gen-data ----
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
    Binds gen_binds;
    std::string gen_cfg_path, gen_out;
    uint64_t gen_seed = 0;
    size_t gen_size = 1000;
    GenSpec gen_spec;
    int gen_bins = 100;
    TaskMix gen_mix;
    gen->add_option("--config", gen_cfg_path, "JSON config file");
    gen->add_option("--out", gen_out, "output directory")->required();
    gen_binds.add(gen->add_option("--seed", gen_seed, "global seed"), &gen_seed, "seed");
    gen_binds.add(gen->add_option("--size", gen_size, "instance count"), &gen_size, "size");
    gen_binds.add(gen->add_option("--grid", gen_spec.grid, "patch grid side"), &gen_spec.grid,
                  "grid");
    gen_binds.add(gen->add_option("--max-objects", gen_spec.max_objects, "objects per scene"),
                  &gen_spec.max_objects, "max_objects");
    gen_binds.add(gen->add_option("--coord-bins", gen_bins, "coordinate quantization bins"),
                  &gen_bins, "coord_bins");
    gen_binds.add(gen->add_option("--mix-caption", gen_mix.caption, ""), &gen_mix.caption,
                  "mix_caption");
    gen_binds.add(gen->add_option("--mix-detect", gen_mix.detect, ""), &gen_mix.detect,
                  "mix_detect");
    gen_binds.add(gen->add_option("--mix-ground", gen_mix.ground, ""), &gen_mix.ground,
                  "mix_ground");
    gen_binds.add(gen->add_option("--mix-classify", gen_mix.classify, ""), &gen_mix.classify,
                  "mix_classify");
    gen->callback([&] {
        gen_binds.apply(gen_cfg_path);
        OutLock lock(gen_out);
        const Vocabulary v = default_vocabulary(gen_bins);
        // rebuilding in place is the reproducibility contract, so overwrite
        build_dataset(gen_spec, gen_seed, gen_size, gen_mix, v, gen_out, true);
    });

    // ---- training stages ----
    struct TrainFlags {
        std::string cfg_path, data, out, model;
        uint64_t seed = 0;
        size_t steps = 0;
        size_t batch = 32;
        double lr = 0;
        size_t ckpt_every = 0;
        ModelFlags mf;
    };
    struct StageSpec {
        const char* cmd;
        const char* help;
        Stage stage;
        size_t default_steps;
        double default_lr;
        bool needs_model;
    };
    const StageSpec stage_specs[] = {
        {"pretrain", "text-only pretraining (features zeroed)", Stage::text_pretrain, 2000, 1e-3,
         false},
        {"align", "projector alignment (all other tensors frozen)", Stage::align, 1000, 1e-3,
         true},
        {"finetune", "full instruction tuning", Stage::full, 4000, 3e-4, true},
        {"train-ar", "left-to-right baseline", Stage::ar_baseline, 4000, 3e-4, false},
    };
    std::vector<std::unique_ptr<TrainFlags>> train_flags;
    std::vector<std::unique_ptr<Binds>> train_binds;
    for (const auto& ss : stage_specs) {
        auto* cmd = app.add_subcommand(ss.cmd, ss.help);
        train_flags.push_back(std::make_unique<TrainFlags>());
        train_binds.push_back(std::make_unique<Binds>());
        TrainFlags& tf = *train_flags.back();
        Binds& b = *train_binds.back();
        tf.steps = ss.default_steps;
        tf.lr = ss.default_lr;
        cmd->add_option("--config", tf.cfg_path, "JSON config file");
        cmd->add_option("--data", tf.data, "dataset directory")->required();
        cmd->add_option("--out", tf.out, "output directory")->required();
        auto* model_opt = cmd->add_option("--model", tf.model, "starting checkpoint");
        if (ss.needs_model) {
            model_opt->required();
        }
        b.add(cmd->add_option("--seed", tf.seed, "global seed"), &tf.seed, "seed");
        b.add(cmd->add_option("--steps", tf.steps, "optimizer steps"), &tf.steps, "steps");
        b.add(cmd->add_option("--batch", tf.batch, "batch size"), &tf.batch, "batch");
        b.add(cmd->add_option("--lr", tf.lr, "peak learning rate"), &tf.lr, "lr");
        b.add(cmd->add_option("--checkpoint-every", tf.ckpt_every, "periodic checkpoint stride"),
              &tf.ckpt_every, "checkpoint_every");
        add_model_flags(cmd, tf.mf, b);
        const Stage stage = ss.stage;
        const std::string cmd_name = ss.cmd;
        cmd->callback([&tf, &b, stage, cmd_name] {
            b.apply(tf.cfg_path);
            OutLock lock(tf.out);
            const Dataset data = load_dataset(tf.data);
            Net<float> net =
                tf.model.empty()
                    ? fresh_model(tf.mf, data,
                                  stage == Stage::ar_baseline ? AttentionMode::causal
                                                              : AttentionMode::bidirectional,
                                  tf.seed)
                    : load_checkpoint(tf.model);
            TrainConfig tc;
            tc.stage = stage;
            tc.steps = tf.steps;
            tc.batch_size = tf.batch;
            tc.peak_lr = tf.lr;
            tc.seed = tf.seed;
            tc.checkpoint_every = tf.ckpt_every;
            tc.out_dir = tf.out;
            train(tc, data, net);
            write_manifest(tf.out, cmd_name,
                           json{{"seed", tf.seed},
                                {"steps", tf.steps},
                                {"batch", tf.batch},
                                {"lr", tf.lr},
                                {"data", tf.data},
                                {"model", tf.model},
                                {"vocab_hash", data.manifest.vocab_hash}});
        });
    }

    // ---- decode ----
    auto* dec = app.add_subcommand("decode", "decode one dataset instance");
    Binds dec_binds;
    std::string dec_cfg_path, dec_model, dec_data, dec_out, dec_strategy = "low-confidence";
    size_t dec_index = 0, dec_steps = 8, dec_gen_len = 0;
    uint64_t dec_seed = 0;
    dec->add_option("--config", dec_cfg_path, "JSON config file");
    dec->add_option("--model", dec_model, "checkpoint")->required();
    dec->add_option("--data", dec_data, "dataset directory")->required();
    dec->add_option("--out", dec_out, "directory for trace.json");
    dec_binds.add(dec->add_option("--index", dec_index, "instance index"), &dec_index, "index");
    dec_binds.add(dec->add_option("--timesteps", dec_steps, "refinement steps N"), &dec_steps,
                  "timesteps");
    dec_binds.add(dec->add_option("--gen-len", dec_gen_len, "override generated length"),
                  &dec_gen_len, "gen_len");
    dec_binds.add(dec->add_option("--strategy", dec_strategy, "low-confidence|random"),
                  &dec_strategy, "strategy");
    dec_binds.add(dec->add_option("--seed", dec_seed, "strategy seed"), &dec_seed, "seed");
    dec->callback([&] {
        dec_binds.apply(dec_cfg_path);
        const Dataset data = load_dataset(dec_data);
        if (dec_index >= data.instances.size()) {
            throw std::runtime_error("instance index out of range");
        }
        const Net<float> net = load_checkpoint(dec_model);
        const TaskInstance& inst = data.instances[dec_index];
        const size_t gen_len =
            dec_gen_len > 0 ? dec_gen_len : static_cast<size_t>(task_target_len(inst.task));
        const Tensor<float> feats = render_features(inst.scene, data.manifest.spec, net.cfg.d_v);
        auto [ids, trace] = decode_diffusion(net, feats, inst.prompt_ids, gen_len, dec_steps,
                                             parse_strategy(dec_strategy, dec_seed));
        std::cout << data.vocab.detokenize(ids) << "\n";
        if (!dec_out.empty()) {
            OutLock lock(dec_out);
            save_trace(trace, data.vocab, (fs::path(dec_out) / "trace.json").string());
            write_manifest(dec_out, "decode",
                           json{{"model", dec_model},
                                {"data", dec_data},
                                {"index", dec_index},
                                {"timesteps", dec_steps},
                                {"gen_len", gen_len},
                                {"strategy", dec_strategy},
                                {"seed", dec_seed}});
        }
    });

    // ---- eval ----
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    Binds ev_binds;
    std::string ev_cfg_path, ev_model, ev_data, ev_out, ev_strategy = "low-confidence";
    size_t ev_steps = 8;
    uint64_t ev_seed = 0;
    bool ev_ar = false;
    ev->add_option("--config", ev_cfg_path, "JSON config file");
    ev->add_option("--model", ev_model, "checkpoint")->required();
    ev->add_option("--data", ev_data, "dataset directory")->required();
    ev->add_option("--out", ev_out, "output directory")->required();
    ev_binds.add(ev->add_option("--timesteps", ev_steps, "refinement steps N"), &ev_steps,
                 "timesteps");
    ev_binds.add(ev->add_option("--strategy", ev_strategy, "low-confidence|random"), &ev_strategy,
                 "strategy");
    ev_binds.add(ev->add_option("--seed", ev_seed, "strategy seed"), &ev_seed, "seed");
    ev->add_flag("--ar", ev_ar, "greedy left-to-right decoding");
    ev->callback([&] {
        ev_binds.apply(ev_cfg_path);
        OutLock lock(ev_out);
        const Dataset data = load_dataset(ev_data);
        const Net<float> net = load_checkpoint(ev_model);
        EvalSettings s;
        s.n_steps = ev_steps;
        s.strategy = parse_strategy(ev_strategy, ev_seed);
        s.use_ar = ev_ar;
        const MetricsReport report = evaluate(net, data, s);
        std::ofstream(fs::path(ev_out) / "report.json", std::ios::trunc)
            << report_to_json(report) << "\n";
        std::ofstream csv(fs::path(ev_out) / "report.csv", std::ios::trunc);
        csv << "task,metric,value\n";
        for (const auto& [task, metrics] : report.per_task) {
            for (const auto& [key, value] : metrics) {
                char buf[32];
                std::snprintf(buf, sizeof(buf), "%.6f", value);
                csv << task << "," << key << "," << buf << "\n";
            }
        }
        write_manifest(ev_out, "eval",
                       json{{"model", ev_model},
                            {"data", ev_data},
                            {"timesteps", ev_steps},
                            {"strategy", ev_ar ? "ar" : ev_strategy},
                            {"seed", ev_seed}});
    });

    // ---- ablate ----
    auto* ab = app.add_subcommand("ablate", "run an ablation sweep");
    Binds ab_binds;
    std::string ab_cfg_path, ab_kind, ab_model, ab_ar_model, ab_data, ab_out;
    size_t ab_steps = 8, ab_seeds = 5;
    ab->add_option("--config", ab_cfg_path, "JSON config file");
    ab->add_option("--kind", ab_kind, "remask-strategy|timesteps|paradigm")->required();
    ab->add_option("--model", ab_model, "checkpoint")->required();
    ab->add_option("--ar-model", ab_ar_model, "causal baseline checkpoint (paradigm)");
    ab->add_option("--data", ab_data, "dataset directory")->required();
    ab->add_option("--out", ab_out, "output directory")->required();
    ab_binds.add(ab->add_option("--timesteps", ab_steps, "N for fixed-N kinds"), &ab_steps,
                 "timesteps");
    ab_binds.add(ab->add_option("--random-seeds", ab_seeds, "random-strategy repeats"), &ab_seeds,
                 "random_seeds");
    ab->callback([&] {
        ab_binds.apply(ab_cfg_path);
        OutLock lock(ab_out);
        const AblationKind kind = ablation_from_name(ab_kind);
        const Dataset data = load_dataset(ab_data);
        const Net<float> net = load_checkpoint(ab_model);
        Net<float> ar_net;
        const Net<float>* ar_ptr = nullptr;
        if (kind == AblationKind::paradigm) {
            if (ab_ar_model.empty()) {
                throw std::runtime_error("--kind paradigm needs --ar-model");
            }
            ar_net = load_checkpoint(ab_ar_model);
            ar_ptr = &ar_net;
        }
        const AblationTable table = run_ablation(kind, net, ar_ptr, data, ab_steps, ab_seeds);
        std::string kind_file = ab_kind;
        std::replace(kind_file.begin(), kind_file.end(), '-', '_');
        std::ofstream(fs::path(ab_out) / ("ablation_" + kind_file + ".csv"), std::ios::trunc)
            << table_to_csv(table);
        std::cout << table_to_text(table);
        write_manifest(ab_out, "ablate",
                       json{{"kind", ab_kind},
                            {"model", ab_model},
                            {"ar_model", ab_ar_model},
                            {"data", ab_data},
                            {"timesteps", ab_steps},
                            {"random_seeds", ab_seeds}});
    });

    // ---- trace-viz ----
    auto* tv = app.add_subcommand("trace-viz", "render a decode trace");
    std::string tv_trace, tv_mode = "ansi", tv_out;
    tv->add_option("--trace", tv_trace, "trace.json path")->required();
    tv->add_option("--mode", tv_mode, "ansi|svg");
    tv->add_option("--out", tv_out, "SVG output path (svg mode)");
    tv->callback([&] {
        if (tv_mode != "ansi" && tv_mode != "svg") {
            throw CLI::ValidationError("--mode", "must be ansi or svg");
        }
        std::ifstream f(tv_trace);
        if (!f) {
            throw std::runtime_error("cannot read trace: " + tv_trace);
        }
        json j = json::parse(f);
        const size_t n_steps = j.at("schedule").at("n_steps").get<size_t>();
        const auto fin = j.at("finalization_step").get<std::vector<int>>();
        const std::string text = j.at("output_text").get<std::string>();
        std::vector<std::string> tokens;
        std::istringstream ts(text);
        for (std::string tok; ts >> tok;) {
            tokens.push_back(tok);
        }
        if (tokens.size() != fin.size()) {
            throw std::runtime_error("trace field mismatch: output_text has " +
                                     std::to_string(tokens.size()) +
                                     " tokens but finalization_step has " +
                                     std::to_string(fin.size()));
        }
        std::vector<int> terciles(fin.size());
        for (size_t i = 0; i < fin.size(); ++i) {
            if (fin[i] < 1 || static_cast<size_t>(fin[i]) > n_steps) {
                throw std::runtime_error("trace field finalization_step[" + std::to_string(i) +
                                         "] out of range");
            }
            terciles[i] = finalization_tercile(static_cast<size_t>(fin[i]), n_steps);
        }
        if (tv_mode == "ansi") {
            for (size_t i = 0; i < tokens.size(); ++i) {
                std::cout << (i ? " " : "") << kTercileAnsi[terciles[i]] << tokens[i]
                          << "\x1b[0m";
            }
            std::cout << "\n";
        } else {
            const std::string svg = render_trace_svg(tokens, terciles);
            if (tv_out.empty()) {
                std::cout << svg;
            } else {
                std::ofstream(tv_out, std::ios::trunc) << svg;
            }
        }
    });

    // ---- smoke ----
    auto* sm = app.add_subcommand("smoke", "miniature end-to-end pipeline run");
    std::string sm_out;
    uint64_t sm_seed = 0;
    sm->add_option("--out", sm_out, "output directory")->required();
    sm->add_option("--seed", sm_seed, "global seed");
    sm->callback([&] {
        OutLock lock(sm_out);
        const fs::path root(sm_out);
        auto stage = [&](const char* name, auto&& fn) {
            try {
                fn();
            } catch (const std::exception& e) {
                throw SmokeFailure(std::string("smoke stage '") + name + "' failed: " + e.what());
            }
        };

        GenSpec spec;
        Dataset data;
        stage("gen-data", [&] {
            build_dataset(spec, sm_seed, 200, TaskMix{}, default_vocabulary(), (root / "data").string(),
                          true);
            data = load_dataset((root / "data").string());
        });

        ModelFlags mf;
        mf.d = 32;
        mf.layers = 2;
        mf.heads = 4;
        mf.d_v = 16;
        Net<float> net;
        auto run_stage = [&](const char* name, Stage st, Net<float>& m, double lr,
                             const fs::path& dir) {
            stage(name, [&] {
                TrainConfig tc;
                tc.stage = st;
                tc.steps = 100;
                tc.batch_size = 16;
                tc.peak_lr = lr;
                tc.seed = sm_seed;
                tc.out_dir = dir.string();
                train(tc, data, m);
            });
        };
        net = fresh_model(mf, data, AttentionMode::bidirectional, sm_seed);
        run_stage("pretrain", Stage::text_pretrain, net, 1e-3, root / "pretrain");
        run_stage("align", Stage::align, net, 1e-3, root / "align");
        run_stage("finetune", Stage::full, net, 5e-4, root / "finetune");
        Net<float> ar = fresh_model(mf, data, AttentionMode::causal, sm_seed + 1);
        run_stage("train-ar", Stage::ar_baseline, ar, 1e-3, root / "ar");

        stage("eval", [&] {
            EvalSettings s;
            s.n_steps = 4;
            s.strategy = RemaskStrategy::low_conf();
            const MetricsReport report = evaluate(net, data, s);
            for (const auto& [task, metrics] : report.per_task) {
                for (const auto& [key, value] : metrics) {
                    if (!(value >= 0.0 && value <= 1.0)) {
                        throw std::runtime_error("metric " + task + "." + key + " out of range");
                    }
                }
            }
            std::ofstream(root / "report.json", std::ios::trunc)
                << report_to_json(report) << "\n";
        });
        write_manifest(sm_out, "smoke", json{{"seed", sm_seed}});
        std::cout << "smoke ok\n";
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return 1;
    }
    return 0;
}

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const json::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
