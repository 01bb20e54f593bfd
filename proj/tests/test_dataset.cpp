#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "griddiff/dataset.hpp"

#include <filesystem>
#include <fstream>

using namespace griddiff;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(f), {});
}

} // namespace

TEST_CASE("apportion uses exact largest-remainder rounding") {
    CHECK(apportion(TaskMix{0.25, 0.25, 0.25, 0.25}, 100) ==
          std::vector<size_t>{25, 25, 25, 25});
    // 7 instances at equal mix: 1.75 each -> all remainders tie, first three
    // tasks in declaration order get the extras
    CHECK(apportion(TaskMix{0.25, 0.25, 0.25, 0.25}, 7) == std::vector<size_t>{2, 2, 2, 1});
    CHECK(apportion(TaskMix{0.5, 0.2, 0.2, 0.1}, 10) == std::vector<size_t>{5, 2, 2, 1});
    // 0.4*3=1.2, 0.3*3=0.9 twice, 0*3=0: largest remainders are the two 0.9s
    CHECK(apportion(TaskMix{0.4, 0.3, 0.3, 0.0}, 3) == std::vector<size_t>{1, 1, 1, 0});
    CHECK_THROWS(apportion(TaskMix{0.5, 0.5, 0.5, 0.5}, 10));

    for (size_t size : {1, 13, 97, 1000}) {
        const auto c = apportion(TaskMix{0.37, 0.11, 0.29, 0.23}, size);
        CHECK(c[0] + c[1] + c[2] + c[3] == size);
    }
}

TEST_CASE("instance codec round trip") {
    const Vocabulary v = default_vocabulary();
    const GenSpec spec;
    const Scene scene = generate_scene(77, spec);
    const TaskInstance inst = make_target(scene, Task::detect, v);
    const auto bytes = encode_instance(inst);
    const TaskInstance back = decode_instance(bytes.data(), bytes.size());
    CHECK(back.task == inst.task);
    CHECK(back.prompt_ids == inst.prompt_ids);
    CHECK(back.target_ids == inst.target_ids);
    CHECK(back.scene.objects.size() == inst.scene.objects.size());
    CHECK(back.scene.seed == inst.scene.seed);
    for (size_t i = 0; i < back.scene.objects.size(); ++i) {
        CHECK(back.scene.objects[i].box.x1 == inst.scene.objects[i].box.x1);
        CHECK(back.scene.objects[i].attribute_id == inst.scene.objects[i].attribute_id);
    }
    CHECK_THROWS(decode_instance(bytes.data(), bytes.size() - 1));
    auto longer = bytes;
    longer.push_back(0);
    CHECK_THROWS_WITH_AS(decode_instance(longer.data(), longer.size()),
                         doctest::Contains("trailing"), std::runtime_error);
}

TEST_CASE("dataset build, reload and byte-identical rebuild") {
    TempDir dir("griddiff_ds_test");
    const Vocabulary v = default_vocabulary();
    const GenSpec spec;
    build_dataset(spec, 42, 60, TaskMix{}, v, dir.path.string());
    const std::string first = slurp(dir.path / "instances.bin");
    CHECK(!first.empty());

    // refuses to clobber without the overwrite flag
    CHECK_THROWS(build_dataset(spec, 42, 60, TaskMix{}, v, dir.path.string()));
    build_dataset(spec, 42, 60, TaskMix{}, v, dir.path.string(), true);
    CHECK(slurp(dir.path / "instances.bin") == first);

    const Dataset ds = load_dataset(dir.path.string());
    CHECK(ds.instances.size() == 60);
    CHECK(ds.manifest.seed == 42);
    CHECK(ds.vocab.hash() == v.hash());
    size_t per_task[4] = {0, 0, 0, 0};
    for (const auto& inst : ds.instances) {
        per_task[static_cast<size_t>(inst.task)]++;
        CHECK(inst.target_ids.size() ==
              static_cast<size_t>(task_target_len(inst.task)));
        if (inst.task == Task::ground) {
            CHECK(inst.ref_object >= 0);
        }
    }
    CHECK(per_task[0] == 15);
    CHECK(per_task[1] == 15);
    CHECK(per_task[2] == 15);
    CHECK(per_task[3] == 15);
}

TEST_CASE("vocabulary tampering is detected at load") {
    TempDir dir("griddiff_ds_tamper");
    build_dataset(GenSpec{}, 1, 8, TaskMix{}, default_vocabulary(), dir.path.string());
    default_vocabulary(50).save((dir.path / "vocab.txt").string());
    CHECK_THROWS_WITH_AS(load_dataset(dir.path.string()), doctest::Contains("hash"),
                         std::runtime_error);
}
