#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "griddiff/dataset.hpp"
#include "griddiff/diffusion.hpp"

#include <cmath>
#include <filesystem>

using namespace griddiff;
namespace fs = std::filesystem;

TEST_CASE("forward_mask empirical fraction tracks t") {
    const std::vector<int> target(100, 7);
    for (double t : {0.1, 0.5, 0.9}) {
        Rng rng(static_cast<uint64_t>(t * 1000));
        size_t masked = 0, total = 0;
        for (int rep = 0; rep < 1000; ++rep) { // 10^5 draws total
            const MaskedSequence seq = forward_mask(target, t, rng);
            for (size_t i = 0; i < seq.ids.size(); ++i) {
                masked += seq.mask_flags[i] ? 1 : 0;
                CHECK(seq.ids[i] == (seq.mask_flags[i] ? Vocabulary::kMask : 7));
            }
            total += seq.ids.size();
        }
        const double frac = static_cast<double>(masked) / static_cast<double>(total);
        CHECK(std::abs(frac - t) < 0.01);
    }
}

TEST_CASE("forward_mask endpoints and preconditions") {
    Rng rng(1);
    const std::vector<int> target = {3, 4, 5};
    const auto none = forward_mask(target, 0.0, rng);
    CHECK(none.ids == target);
    const auto all = forward_mask(target, 1.0, rng);
    CHECK(all.ids == std::vector<int>{1, 1, 1});
    CHECK_THROWS(forward_mask(target, 1.5, rng));
    CHECK_THROWS(forward_mask({3, Vocabulary::kMask}, 0.5, rng));
}

TEST_CASE("masked cross-entropy on hand-built logits") {
    // two positions, V=4; only position 0 is masked
    Tensor<double> logits({2, 4});
    logits.row(0)[0] = 1.0;
    logits.row(0)[1] = 2.0;
    logits.row(0)[2] = 3.0;
    logits.row(0)[3] = 0.5;
    const std::vector<int> targets = {2, 0};
    const std::vector<char> flags = {1, 0};
    // softmax(1,2,3,0.5): loss at target 2 = log(sum e^x) - 3
    const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0) + std::exp(0.5);
    const double expect = std::log(z) - 3.0;
    Tensor<double> dl({2, 4});
    const double loss = masked_ce(logits, targets, flags, LossMode::mean_masked, 0.5, &dl);
    CHECK(loss == doctest::Approx(expect).epsilon(1e-12));
    // unmasked row gets zero gradient
    for (size_t j = 0; j < 4; ++j) {
        CHECK(dl.row(1)[j] == 0.0);
    }
    // masked row gradient: softmax - onehot
    CHECK(dl.row(0)[2] == doctest::Approx(std::exp(3.0) / z - 1.0));
    CHECK(dl.row(0)[0] == doctest::Approx(std::exp(1.0) / z));

    // uniform logits over V=148 score ln(148) per masked position
    Tensor<double> uni({1, 148});
    const double u = masked_ce(uni, {17}, {1}, LossMode::mean_masked, 0.5);
    CHECK(u == doctest::Approx(std::log(148.0)).epsilon(1e-12));
}

TEST_CASE("loss modes: sum and inverse-t weighting") {
    Tensor<double> logits({3, 5});
    const std::vector<int> targets = {1, 2, 3};
    const std::vector<char> flags = {1, 1, 0};
    const double mean = masked_ce(logits, targets, flags, LossMode::mean_masked, 0.4);
    const double sum = masked_ce(logits, targets, flags, LossMode::sum, 0.4);
    const double inv = masked_ce(logits, targets, flags, LossMode::sum_inv_t, 0.4);
    CHECK(sum == doctest::Approx(2.0 * std::log(5.0)));
    CHECK(mean == doctest::Approx(sum / 2.0));
    CHECK(inv == doctest::Approx(sum / 0.4));
    // the 1/t weight saturates near t=0 instead of diverging
    const double inv0 = masked_ce(logits, targets, flags, LossMode::sum_inv_t, 0.0);
    CHECK(inv0 == doctest::Approx(sum / 1e-3));
}

TEST_CASE("causal loss averages over non-pad targets only") {
    Tensor<double> logits({4, 6});
    const std::vector<int> targets = {3, 0, 4, 0}; // two [PAD] targets skipped
    const auto r = causal_ce(logits, targets);
    CHECK(!r.all_pad);
    CHECK(r.loss == doctest::Approx(std::log(6.0)));
    const auto all_pad = causal_ce(logits, {0, 0, 0, 0});
    CHECK(all_pad.all_pad);
    CHECK(all_pad.loss == 0.0);
}

TEST_CASE("learning-rate schedule endpoints") {
    TrainConfig tc;
    tc.steps = 1000;
    tc.peak_lr = 1e-3;
    tc.warmup_frac = 0.03;
    CHECK(lr_at(tc, 0) == 0.0);
    CHECK(lr_at(tc, 15) == doctest::Approx(0.5e-3)); // mid-warmup
    CHECK(lr_at(tc, 30) == doctest::Approx(1e-3));   // warmup ends at peak
    CHECK(lr_at(tc, 999) < 1e-4);                    // cosine decays towards zero
    for (size_t s = 31; s < 1000; ++s) {
        CHECK(lr_at(tc, s) <= lr_at(tc, s - 1) + 1e-15);
    }
}

TEST_CASE("stage trainability masks") {
    ModelConfig cfg;
    cfg.d = 8;
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    cfg.d_v = 4;
    cfg.grid = 2;
    cfg.vocab_size = 20;
    const auto p = Params<float>::shapes_for(cfg);
    const auto align = stage_trainable(Stage::align, p);
    const auto full = stage_trainable(Stage::full, p);
    for (size_t i = 0; i < p.names.size(); ++i) {
        CHECK(full[i] == 1);
        CHECK((align[i] == 1) == (p.names[i].rfind("proj.", 0) == 0));
    }
}

TEST_CASE("short training run decreases the loss and is deterministic") {
    const auto dir = fs::temp_directory_path() / "griddiff_train_test";
    fs::remove_all(dir);
    build_dataset(GenSpec{}, 5, 64, TaskMix{}, default_vocabulary(), dir.string());
    const Dataset data = load_dataset(dir.string());

    ModelConfig cfg;
    cfg.d = 16;
    cfg.n_layers = 1;
    cfg.n_heads = 4;
    cfg.d_v = 16;
    cfg.grid = data.manifest.spec.grid;
    cfg.vocab_size = static_cast<int>(data.vocab.size());
    cfg.vocab_hash = data.vocab.hash();

    TrainConfig tc;
    tc.stage = Stage::full;
    tc.steps = 60;
    tc.batch_size = 8;
    tc.peak_lr = 1e-3;
    tc.seed = 4;

    Net<float> net(cfg, 77);
    const auto log = train(tc, data, net);
    REQUIRE(log.size() == 60);
    double early = 0, late = 0;
    for (size_t i = 0; i < 10; ++i) {
        early += log[i].loss;
        late += log[log.size() - 1 - i].loss;
    }
    CHECK(late < early);

    Net<float> net2(cfg, 77);
    const auto log2 = train(tc, data, net2);
    CHECK(net.params.at("embed").data == net2.params.at("embed").data);
    for (size_t i = 0; i < log.size(); ++i) {
        CHECK(log[i].loss == log2[i].loss);
    }
    fs::remove_all(dir);
}

TEST_CASE("align stage leaves non-projector tensors bit-identical") {
    const auto dir = fs::temp_directory_path() / "griddiff_align_test";
    fs::remove_all(dir);
    build_dataset(GenSpec{}, 6, 32, TaskMix{}, default_vocabulary(), dir.string());
    const Dataset data = load_dataset(dir.string());

    ModelConfig cfg;
    cfg.d = 16;
    cfg.n_layers = 1;
    cfg.n_heads = 4;
    cfg.d_v = 16;
    cfg.grid = data.manifest.spec.grid;
    cfg.vocab_size = static_cast<int>(data.vocab.size());
    cfg.vocab_hash = data.vocab.hash();
    Net<float> net(cfg, 5);
    const Params<float> before = net.params;

    TrainConfig tc;
    tc.stage = Stage::align;
    tc.steps = 20;
    tc.batch_size = 8;
    tc.peak_lr = 1e-3;
    const auto log = train(tc, data, net);
    REQUIRE(log.size() == 20);

    bool proj_moved = false;
    for (size_t i = 0; i < net.params.tensors.size(); ++i) {
        if (net.params.names[i].rfind("proj.", 0) == 0) {
            proj_moved = proj_moved ||
                         net.params.tensors[i].data != before.tensors[i].data;
        } else {
            CHECK(net.params.tensors[i].data == before.tensors[i].data);
        }
    }
    CHECK(proj_moved);
    fs::remove_all(dir);
}

TEST_CASE("training run with an output directory writes a log and checkpoints") {
    const auto data_dir = fs::temp_directory_path() / "griddiff_trainout_data";
    const auto out_dir = fs::temp_directory_path() / "griddiff_trainout_run";
    fs::remove_all(data_dir);
    fs::remove_all(out_dir);
    build_dataset(GenSpec{}, 7, 16, TaskMix{}, default_vocabulary(), data_dir.string());
    const Dataset data = load_dataset(data_dir.string());

    ModelConfig cfg;
    cfg.d = 16;
    cfg.n_layers = 1;
    cfg.n_heads = 4;
    cfg.d_v = 16;
    cfg.grid = data.manifest.spec.grid;
    cfg.vocab_size = static_cast<int>(data.vocab.size());
    Net<float> net(cfg, 8);

    TrainConfig tc;
    tc.stage = Stage::full;
    tc.steps = 6;
    tc.batch_size = 4;
    tc.peak_lr = 1e-3;
    tc.checkpoint_every = 3;
    tc.out_dir = out_dir.string();
    train(tc, data, net);
    CHECK(fs::exists(out_dir / "train_log.jsonl"));
    CHECK(fs::exists(out_dir / "checkpoint_last.ckpt"));
    CHECK(fs::exists(out_dir / "checkpoint.ckpt"));
    const Net<float> back = load_checkpoint((out_dir / "checkpoint.ckpt").string());
    CHECK(back.params.at("embed").data == net.params.at("embed").data);
    fs::remove_all(data_dir);
    fs::remove_all(out_dir);
}
