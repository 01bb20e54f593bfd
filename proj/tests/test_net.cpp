#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "griddiff/diffusion.hpp"
#include "griddiff/net.hpp"
#include "griddiff/rng.hpp"

#include <cmath>
#include <filesystem>

using namespace griddiff;

namespace {

template <class Real>
Tensor<Real> random_features(const ModelConfig& cfg, uint64_t seed) {
    Tensor<Real> f({static_cast<size_t>(cfg.n_patches()), static_cast<size_t>(cfg.d_v)});
    Rng rng(seed);
    for (auto& x : f.data) {
        x = static_cast<Real>(rng.uniform());
    }
    return f;
}

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.d = 8;
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    cfg.d_v = 4;
    cfg.grid = 2;
    cfg.max_text_len = 32;
    cfg.vocab_size = 20;
    return cfg;
}

} // namespace

TEST_CASE("parameter count matches the closed form") {
    ModelConfig cfg;
    cfg.d = 16;
    cfg.n_layers = 3;
    cfg.n_heads = 4;
    cfg.d_v = 8;
    cfg.grid = 4;
    cfg.max_text_len = 32;
    cfg.vocab_size = 50;
    const auto p = Params<float>::shapes_for(cfg);
    const size_t d = 16, dv = 8, V = 50, P = 16, T = 32, L = 3;
    const size_t proj = dv * d + d + d * d + d;
    const size_t embed = V * d;
    const size_t pos = (P + T) * d;
    const size_t layer = 12 * d * d + 13 * d;
    const size_t head = 2 * d + d * V + V;
    CHECK(p.total_count() == proj + embed + pos + L * layer + head);
}

TEST_CASE("deterministic init and config validation") {
    const ModelConfig cfg = tiny_config();
    const auto a = init_params<float>(cfg, 9);
    const auto b = init_params<float>(cfg, 9);
    const auto c = init_params<float>(cfg, 10);
    CHECK(a.at("embed").data == b.at("embed").data);
    CHECK(a.at("embed").data != c.at("embed").data);
    CHECK(a.at("layer0.ln1.g").data[0] == 1.0f);
    CHECK(a.at("layer0.attn.bq").data[3] == 0.0f);

    ModelConfig bad = cfg;
    bad.n_heads = 3; // does not divide d=8
    CHECK_THROWS(Params<float>::shapes_for(bad));
    bad = cfg;
    bad.max_text_len = 16; // cannot hold the longest task target
    CHECK_THROWS(Params<float>::shapes_for(bad));
}

TEST_CASE("forward rejects bad inputs") {
    const ModelConfig cfg = tiny_config();
    const Net<float> net(cfg, 1);
    Workspace<float> ws;
    const auto feats = random_features<float>(cfg, 2);
    CHECK_THROWS(net.forward(feats, {0, 1, 99}, AttentionMode::bidirectional, ws)); // id >= V
    CHECK_THROWS(net.forward(feats, std::vector<int>(40, 0), AttentionMode::bidirectional, ws));
    Tensor<float> wrong({2, 4});
    CHECK_THROWS(net.forward(wrong, {0, 1}, AttentionMode::bidirectional, ws));
}

TEST_CASE("causal mode leaks nothing from future text positions") {
    const ModelConfig cfg = tiny_config();
    const Net<float> net(cfg, 3);
    const auto feats = random_features<float>(cfg, 4);
    std::vector<int> text = {2, 5, 7, 9, 11, 13};
    Workspace<float> ws1, ws2;
    net.forward(feats, text, AttentionMode::causal, ws1);
    std::vector<int> text2 = text;
    text2[4] = 17; // perturb a late position
    net.forward(feats, text2, AttentionMode::causal, ws2);
    for (size_t i = 0; i < 4; ++i) {
        for (size_t j = 0; j < static_cast<size_t>(cfg.vocab_size); ++j) {
            CHECK(ws1.logits.row(i)[j] == ws2.logits.row(i)[j]);
        }
    }
    // the perturbed position itself must see the change
    bool changed = false;
    for (size_t j = 0; j < static_cast<size_t>(cfg.vocab_size); ++j) {
        changed = changed || ws1.logits.row(4)[j] != ws2.logits.row(4)[j];
    }
    CHECK(changed);

    // bidirectional mode propagates the perturbation backwards
    net.forward(feats, text, AttentionMode::bidirectional, ws1);
    net.forward(feats, text2, AttentionMode::bidirectional, ws2);
    bool any_early_change = false;
    for (size_t i = 0; i < 4 && !any_early_change; ++i) {
        for (size_t j = 0; j < static_cast<size_t>(cfg.vocab_size); ++j) {
            any_early_change = any_early_change || ws1.logits.row(i)[j] != ws2.logits.row(i)[j];
        }
    }
    CHECK(any_early_change);
}

TEST_CASE("analytic gradients match central finite differences") {
    const ModelConfig cfg = tiny_config();
    Net<double> net(cfg, 5);
    Rng rng(6);

    TrainItem<double> item;
    item.features = random_features<double>(cfg, 7);
    item.text_ids = {2, 4, 1, 1, 6, 1};
    item.target_ids = {9, 10, 11, 12};
    item.mask_flags = {1, 1, 0, 1};
    item.loss_offset = 2;
    item.t = 0.6;
    const std::vector<TrainItem<double>> batch = {item};

    const auto trainable = all_trainable(net.params.tensors.size());
    Grads<double> grads = Grads<double>::for_params(net.params, trainable);
    const double base =
        loss_and_grads(net, batch, LossFn::diffusion, LossMode::mean_masked, grads);
    CHECK(std::isfinite(base));

    const double h = 1e-4; // small enough that truncation error clears the tolerance
    size_t checked = 0;
    for (size_t t = 0; t < net.params.tensors.size(); ++t) {
        auto& tensor = net.params.tensors[t];
        for (size_t i = 0; i < tensor.data.size(); ++i) {
            const double keep = tensor.data[i];
            Grads<double> scratch = Grads<double>::for_params(net.params, trainable);
            tensor.data[i] = keep + h;
            const double up =
                loss_and_grads(net, batch, LossFn::diffusion, LossMode::mean_masked, scratch);
            scratch.zero();
            tensor.data[i] = keep - h;
            const double dn =
                loss_and_grads(net, batch, LossFn::diffusion, LossMode::mean_masked, scratch);
            tensor.data[i] = keep;
            const double fd = (up - dn) / (2 * h);
            const double an = grads.store.tensors[t].data[i];
            const double denom = std::max({std::abs(fd), std::abs(an), 1e-4});
            CHECK_MESSAGE(std::abs(fd - an) / denom < 1e-3,
                          net.params.names[t] << "[" << i << "] fd=" << fd << " an=" << an);
            ++checked;
        }
    }
    CHECK(checked == net.params.total_count());
}

TEST_CASE("causal loss gradients also match finite differences") {
    const ModelConfig cfg = tiny_config();
    Net<double> net(cfg, 8);
    TrainItem<double> item;
    item.features = random_features<double>(cfg, 9);
    item.text_ids = {2, 7, 9, 11};
    item.target_ids = {7, 9, 11, 13};
    item.loss_offset = 0;
    const std::vector<TrainItem<double>> batch = {item};
    const auto trainable = all_trainable(net.params.tensors.size());
    Grads<double> grads = Grads<double>::for_params(net.params, trainable);
    loss_and_grads(net, batch, LossFn::causal, LossMode::mean_masked, grads);

    // spot-check a dense weight tensor per group rather than every coordinate
    const double h = 1e-3;
    for (const char* name : {"embed", "layer0.attn.wq", "layer0.ff.w1", "head.w", "proj.w1"}) {
        auto& tensor = net.params.at(name);
        for (size_t i = 0; i < std::min<size_t>(tensor.data.size(), 24); ++i) {
            const double keep = tensor.data[i];
            Grads<double> scratch = Grads<double>::for_params(net.params, trainable);
            tensor.data[i] = keep + h;
            const double up = loss_and_grads(net, batch, LossFn::causal, LossMode::mean_masked,
                                             scratch);
            scratch.zero();
            tensor.data[i] = keep - h;
            const double dn = loss_and_grads(net, batch, LossFn::causal, LossMode::mean_masked,
                                             scratch);
            tensor.data[i] = keep;
            const double fd = (up - dn) / (2 * h);
            const double an = grads.store.at(name).data[i];
            const double denom = std::max({std::abs(fd), std::abs(an), 1e-4});
            CHECK(std::abs(fd - an) / denom < 1e-3);
        }
    }
}

TEST_CASE("frozen tensors receive no gradient storage") {
    const ModelConfig cfg = tiny_config();
    Net<float> net(cfg, 12);
    const auto trainable = stage_trainable(Stage::align, net.params);
    Grads<float> grads = Grads<float>::for_params(net.params, trainable);
    size_t live = 0;
    for (size_t i = 0; i < net.params.tensors.size(); ++i) {
        if (grads.has(i)) {
            CHECK(net.params.names[i].rfind("proj.", 0) == 0);
            CHECK(grads.store.tensors[i].count() == net.params.tensors[i].count());
            ++live;
        } else {
            CHECK(grads.store.tensors[i].count() == 0);
        }
    }
    CHECK(live == 4);
}

TEST_CASE("checkpoint save/load round trip is bit-exact") {
    const ModelConfig cfg = tiny_config();
    Net<float> net(cfg, 21);
    net.cfg.vocab_hash = 0xABCDEF0123456789ull;
    const auto path =
        (std::filesystem::temp_directory_path() / "griddiff_ckpt_test.ckpt").string();
    save_checkpoint(net, path);
    const Net<float> back = load_checkpoint(path);
    CHECK(back.cfg.vocab_hash == net.cfg.vocab_hash);
    CHECK(back.cfg.d == cfg.d);

    const auto feats = random_features<float>(cfg, 22);
    const std::vector<int> text = {2, 3, 1, 5};
    Workspace<float> ws1, ws2;
    net.forward(feats, text, AttentionMode::bidirectional, ws1);
    back.forward(feats, text, AttentionMode::bidirectional, ws2);
    CHECK(ws1.logits.data == ws2.logits.data);
    std::filesystem::remove(path);
}

TEST_CASE("truncated checkpoints fail with a byte offset") {
    const ModelConfig cfg = tiny_config();
    Net<float> net(cfg, 23);
    const auto dir = std::filesystem::temp_directory_path();
    const auto path = (dir / "griddiff_ckpt_trunc.ckpt").string();
    save_checkpoint(net, path);
    const auto full_size = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, full_size - 40);
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("byte offset"),
                         std::runtime_error);
    std::filesystem::remove(path);
}
