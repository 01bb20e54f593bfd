#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "griddiff/rng.hpp"
#include "griddiff/scene.hpp"
#include "griddiff/vocab.hpp"

#include <cstdio>
#include <filesystem>

using namespace griddiff;

TEST_CASE("specials occupy fixed low ids") {
    const Vocabulary v = default_vocabulary();
    CHECK(v.token(0).surface == "[PAD]");
    CHECK(v.token(1).surface == "[M]");
    CHECK(v.token(2).surface == "[BOS]");
    CHECK(v.lookup("[M]") == Vocabulary::kMask);
    CHECK(v.token(0).kind == TokenKind::special);
}

TEST_CASE("lookup and build failure modes") {
    const Vocabulary v = default_vocabulary();
    CHECK_THROWS_WITH_AS(static_cast<void>(v.lookup("zeppelin")),
                         doctest::Contains("zeppelin"), std::runtime_error);
    CHECK_THROWS_WITH_AS(static_cast<void>(Vocabulary::build({"ship", "ship"}, {"port"}, 10)),
                         doctest::Contains("duplicate"), std::runtime_error);
    // a word colliding with a class name is a duplicate too
    CHECK_THROWS(static_cast<void>(Vocabulary::build({"ship"}, {"ship"}, 10)));
}

TEST_CASE("text encode/decode round trip over random phrases") {
    const Vocabulary v = default_vocabulary();
    std::vector<std::string> pool;
    for (size_t id = 0; id < v.size(); ++id) {
        if (v.token(static_cast<int>(id)).kind == TokenKind::word) {
            pool.push_back(v.token(static_cast<int>(id)).surface);
        }
    }
    Rng rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        const size_t len = 1 + rng.below(8);
        std::string phrase;
        for (size_t i = 0; i < len; ++i) {
            if (i) {
                phrase += ' ';
            }
            phrase += pool[rng.below(pool.size())];
        }
        CHECK(v.detokenize(v.encode_text(phrase)) == phrase);
    }
}

TEST_CASE("box codec round trip stays within quantization error") {
    const int B = 100;
    const Vocabulary v = default_vocabulary(B);
    Rng rng(12);
    const double tol = 1.5 / B + 1e-12;
    for (int trial = 0; trial < 10000; ++trial) {
        Box b;
        b.x1 = rng.uniform();
        b.x2 = b.x1 + rng.uniform() * (1.0 - b.x1);
        b.y1 = rng.uniform();
        b.y2 = b.y1 + rng.uniform() * (1.0 - b.y1);
        const Box r = v.decode_box(v.encode_box(b));
        CHECK(r.valid());
        CHECK(std::abs(r.x1 - b.x1) <= tol);
        CHECK(std::abs(r.y1 - b.y1) <= tol);
        CHECK(std::abs(r.x2 - b.x2) <= tol);
        CHECK(std::abs(r.y2 - b.y2) <= tol);
    }
}

TEST_CASE("decode_box swaps inverted corners") {
    const Vocabulary v = default_vocabulary(10);
    // bins (8, 2, 1, 6): x pair inverted, y pair inverted
    const Box b = v.decode_box({v.coord_token(8), v.coord_token(2), v.coord_token(1),
                                v.coord_token(6)});
    CHECK(b.valid());
    CHECK(b.x1 == doctest::Approx(0.15));
    CHECK(b.x2 == doctest::Approx(0.85));
    CHECK(b.y1 == doctest::Approx(0.25));
    CHECK(b.y2 == doctest::Approx(0.65));
}

TEST_CASE("coordinate binning endpoints") {
    const int B = 100;
    const Vocabulary v = default_vocabulary(B);
    const auto ids = v.encode_box({0.0, 0.0, 1.0, 1.0});
    CHECK(v.coord_bin(ids[0]) == 0);
    CHECK(v.coord_bin(ids[2]) == B - 1); // 1.0 clamps into the last bin
}

TEST_CASE("serialize, save/load and hash round trip") {
    const Vocabulary v = default_vocabulary();
    const auto path = std::filesystem::temp_directory_path() / "griddiff_vocab_test.txt";
    v.save(path.string());
    const Vocabulary w = Vocabulary::load(path.string());
    CHECK(w.serialize() == v.serialize());
    CHECK(w.hash() == v.hash());
    CHECK(w.size() == v.size());
    std::filesystem::remove(path);

    const Vocabulary other = default_vocabulary(50);
    CHECK(other.hash() != v.hash());
}
