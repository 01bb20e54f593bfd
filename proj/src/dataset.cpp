#include "griddiff/dataset.hpp"
#include "griddiff/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace griddiff {

double TaskMix::of(Task t) const {
    switch (t) {
        case Task::caption: return caption;
        case Task::detect: return detect;
        case Task::ground: return ground;
        case Task::classify: return classify;
    }
    return 0;
}

std::vector<size_t> apportion(const TaskMix& mix, size_t size) {
    if (std::abs(mix.sum() - 1.0) > 1e-9) {
        throw std::runtime_error("task mix proportions must sum to 1");
    }
    const double props[4] = {mix.caption, mix.detect, mix.ground, mix.classify};
    std::vector<size_t> counts(4, 0);
    std::vector<std::pair<double, int>> remainders;
    size_t assigned = 0;
    for (int i = 0; i < 4; ++i) {
        const double exact = props[i] * static_cast<double>(size);
        counts[static_cast<size_t>(i)] = static_cast<size_t>(std::floor(exact));
        assigned += counts[static_cast<size_t>(i)];
        remainders.push_back({exact - std::floor(exact), i});
    }
    // largest remainder first; ties broken by task order for determinism
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (size_t i = 0; assigned < size; ++i, ++assigned) {
        counts[static_cast<size_t>(remainders[i % 4].second)]++;
    }
    return counts;
}

namespace {

template <class T>
void put(std::vector<uint8_t>& out, T v) {
    // little-endian on all supported targets
    uint8_t buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.insert(out.end(), buf, buf + sizeof(T));
}

template <class T>
T get(const uint8_t*& p, const uint8_t* end) {
    if (p + sizeof(T) > end) {
        throw std::runtime_error("dataset record truncated");
    }
    T v;
    std::memcpy(&v, p, sizeof(T));
    p += sizeof(T);
    return v;
}

void put_ids(std::vector<uint8_t>& out, const std::vector<int>& ids) {
    put<uint16_t>(out, static_cast<uint16_t>(ids.size()));
    for (int id : ids) {
        put<uint16_t>(out, static_cast<uint16_t>(id));
    }
}

std::vector<int> get_ids(const uint8_t*& p, const uint8_t* end) {
    const uint16_t n = get<uint16_t>(p, end);
    std::vector<int> ids(n);
    for (uint16_t i = 0; i < n; ++i) {
        ids[i] = get<uint16_t>(p, end);
    }
    return ids;
}

} // namespace

std::vector<uint8_t> encode_instance(const TaskInstance& inst) {
    std::vector<uint8_t> out;
    put<uint8_t>(out, static_cast<uint8_t>(inst.task));
    put<uint8_t>(out, inst.truncated ? 1 : 0);
    put<int32_t>(out, inst.ref_object);
    put<uint32_t>(out, static_cast<uint32_t>(inst.scene.grid));
    put<int32_t>(out, inst.scene.scene_class_id);
    put<uint64_t>(out, inst.scene.seed);
    put<uint32_t>(out, static_cast<uint32_t>(inst.scene.objects.size()));
    for (const auto& o : inst.scene.objects) {
        put<uint32_t>(out, static_cast<uint32_t>(o.class_id));
        put<uint32_t>(out, static_cast<uint32_t>(o.attribute_id));
        put<double>(out, o.box.x1);
        put<double>(out, o.box.y1);
        put<double>(out, o.box.x2);
        put<double>(out, o.box.y2);
    }
    put_ids(out, inst.prompt_ids);
    put_ids(out, inst.target_ids);
    return out;
}

TaskInstance decode_instance(const uint8_t* data, size_t len) {
    const uint8_t* p = data;
    const uint8_t* end = data + len;
    TaskInstance inst;
    inst.task = static_cast<Task>(get<uint8_t>(p, end));
    inst.truncated = get<uint8_t>(p, end) != 0;
    inst.ref_object = get<int32_t>(p, end);
    inst.scene.grid = static_cast<int>(get<uint32_t>(p, end));
    inst.scene.scene_class_id = get<int32_t>(p, end);
    inst.scene.seed = get<uint64_t>(p, end);
    const uint32_t n = get<uint32_t>(p, end);
    inst.scene.objects.resize(n);
    for (uint32_t i = 0; i < n; ++i) {
        auto& o = inst.scene.objects[i];
        o.class_id = static_cast<int>(get<uint32_t>(p, end));
        o.attribute_id = static_cast<int>(get<uint32_t>(p, end));
        o.box.x1 = get<double>(p, end);
        o.box.y1 = get<double>(p, end);
        o.box.x2 = get<double>(p, end);
        o.box.y2 = get<double>(p, end);
    }
    inst.prompt_ids = get_ids(p, end);
    inst.target_ids = get_ids(p, end);
    if (p != end) {
        throw std::runtime_error("dataset record has trailing bytes");
    }
    return inst;
}

namespace {

json spec_to_json(const GenSpec& s) {
    return json{{"grid", s.grid},
                {"max_objects", s.max_objects},
                {"n_classes", s.n_classes},
                {"n_attributes", s.n_attributes},
                {"min_box", s.min_box},
                {"max_box", s.max_box}};
}

GenSpec spec_from_json(const json& j) {
    GenSpec s;
    s.grid = j.at("grid");
    s.max_objects = j.at("max_objects");
    s.n_classes = j.at("n_classes");
    s.n_attributes = j.at("n_attributes");
    s.min_box = j.at("min_box");
    s.max_box = j.at("max_box");
    return s;
}

TaskInstance make_instance(Task task, uint64_t seed, size_t index, const GenSpec& spec,
                           const Vocabulary& v) {
    for (uint64_t attempt = 0; attempt < 100; ++attempt) {
        Scene scene = generate_scene(derive_seed(seed, index + 1, attempt), spec);
        if (task == Task::ground) {
            auto refs = unique_referents(scene);
            if (refs.empty()) {
                continue; // resample: no uniquely referrable object
            }
            Rng pick(derive_seed(seed, index + 1, 0xF00D + attempt));
            int ref = refs[pick.below(refs.size())];
            return make_target(scene, task, v, ref);
        }
        return make_target(scene, task, v);
    }
    throw std::runtime_error("dataset: no valid scene found for instance " + std::to_string(index));
}

} // namespace

void build_dataset(const GenSpec& spec, uint64_t seed, size_t size, const TaskMix& mix,
                   const Vocabulary& v, const std::string& out_dir, bool overwrite) {
    fs::path dir(out_dir);
    if (fs::exists(dir / "instances.bin") && !overwrite) {
        throw std::runtime_error("dataset already exists at " + out_dir +
                                 " (pass overwrite to replace)");
    }
    fs::create_directories(dir);

    auto counts = apportion(mix, size);
    std::vector<Task> labels;
    labels.reserve(size);
    for (int t = 0; t < 4; ++t) {
        labels.insert(labels.end(), counts[static_cast<size_t>(t)], static_cast<Task>(t));
    }
    Rng shuffle_rng(derive_seed(seed, 0xDA7A));
    shuffle_rng.shuffle(labels);

    std::ofstream f(dir / "instances.bin", std::ios::binary | std::ios::trunc);
    if (!f) {
        throw std::runtime_error("cannot write " + (dir / "instances.bin").string());
    }
    for (size_t i = 0; i < size; ++i) {
        TaskInstance inst = make_instance(labels[i], seed, i, spec, v);
        auto payload = encode_instance(inst);
        uint32_t len = static_cast<uint32_t>(payload.size());
        f.write(reinterpret_cast<const char*>(&len), sizeof(len));
        f.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
    }
    f.close();

    v.save((dir / "vocab.txt").string());

    json m;
    m["seed"] = seed;
    m["size"] = size;
    m["spec"] = spec_to_json(spec);
    m["task_mix"] = {{"caption", mix.caption}, {"detect", mix.detect},
                     {"ground", mix.ground}, {"classify", mix.classify}};
    json jc;
    for (int t = 0; t < 4; ++t) {
        jc[task_name(static_cast<Task>(t))] = counts[static_cast<size_t>(t)];
    }
    m["counts"] = jc;
    char hex[17];
    std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(v.hash()));
    m["vocab_hash"] = hex;
    std::ofstream mf(dir / "manifest.json", std::ios::trunc);
    mf << m.dump(2) << "\n";
}

Dataset load_dataset(const std::string& dir_in) {
    fs::path dir(dir_in);
    std::ifstream mf(dir / "manifest.json");
    if (!mf) {
        throw std::runtime_error("missing manifest.json in " + dir_in);
    }
    json m = json::parse(mf);

    Dataset ds;
    ds.vocab = Vocabulary::load((dir / "vocab.txt").string());
    ds.manifest.seed = m.at("seed");
    ds.manifest.size = m.at("size");
    ds.manifest.spec = spec_from_json(m.at("spec"));
    for (auto& [k, val] : m.at("counts").items()) {
        ds.manifest.counts[k] = val;
    }
    ds.manifest.vocab_hash = std::stoull(m.at("vocab_hash").get<std::string>(), nullptr, 16);
    if (ds.manifest.vocab_hash != ds.vocab.hash()) {
        throw std::runtime_error("dataset vocabulary does not match manifest hash");
    }

    std::ifstream f(dir / "instances.bin", std::ios::binary);
    if (!f) {
        throw std::runtime_error("missing instances.bin in " + dir_in);
    }
    for (;;) {
        uint32_t len = 0;
        f.read(reinterpret_cast<char*>(&len), sizeof(len));
        if (!f) {
            break;
        }
        std::vector<uint8_t> payload(len);
        f.read(reinterpret_cast<char*>(payload.data()), len);
        if (!f) {
            throw std::runtime_error("instances.bin truncated mid-record");
        }
        ds.instances.push_back(decode_instance(payload.data(), payload.size()));
    }
    if (ds.instances.size() != ds.manifest.size) {
        throw std::runtime_error("instances.bin count disagrees with manifest");
    }
    return ds;
}

} // namespace griddiff
