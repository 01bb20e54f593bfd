#include "griddiff/scene.hpp"
#include "griddiff/rng.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>

namespace griddiff {

double iou(const Box& a, const Box& b) {
    const double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
    const double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
    const double inter = ix * iy;
    const double uni = a.area() + b.area() - inter;
    return uni > 0 ? inter / uni : 0.0;
}

const char* task_name(Task t) {
    switch (t) {
        case Task::caption: return "caption";
        case Task::detect: return "detect";
        case Task::ground: return "ground";
        case Task::classify: return "classify";
    }
    return "?";
}

Task task_from_name(const std::string& s) {
    if (s == "caption") return Task::caption;
    if (s == "detect") return Task::detect;
    if (s == "ground") return Task::ground;
    if (s == "classify") return Task::classify;
    throw std::runtime_error("unknown task: " + s);
}

int task_target_len(Task t) {
    switch (t) {
        case Task::caption: return 16;
        case Task::detect: return 32;
        case Task::ground:
        case Task::classify: return 8;
    }
    return 0;
}

const std::vector<std::string>& default_class_names() {
    static const std::vector<std::string> v = {"building", "ship", "plane", "truck", "tank"};
    return v;
}

const std::vector<std::string>& default_attributes() {
    static const std::vector<std::string> v = {"red", "blue", "green", "yellow", "white", "gray"};
    return v;
}

const std::vector<std::string>& default_scene_categories() {
    static const std::vector<std::string> v = {"urban", "harbor", "airfield", "depot", "rural"};
    return v;
}

const std::vector<std::string>& default_count_words() {
    static const std::vector<std::string> v = {"one", "two", "three", "four", "five", "six"};
    return v;
}

Vocabulary default_vocabulary(int coord_bins) {
    std::vector<std::string> words;
    for (const auto& w : default_attributes()) words.push_back(w);
    for (const auto& w : default_count_words()) words.push_back(w);
    words.push_back("empty");
    for (const auto& w : default_scene_categories()) words.push_back(w);
    words.push_back("caption");
    words.push_back("detect");
    words.push_back("ground");
    words.push_back("classify");
    return Vocabulary::build(default_class_names(), words, coord_bins);
}

namespace {

// dominant object class steers the scene category; a small noise share keeps
// the classification task from being fully determined by the detect target
int draw_scene_class(const std::vector<SceneObject>& objects, int n_categories, Rng& rng) {
    if (objects.empty()) {
        return n_categories - 1;
    }
    std::map<int, int> counts;
    for (const auto& o : objects) {
        counts[o.class_id]++;
    }
    int best_class = objects[0].class_id, best_n = 0;
    for (const auto& [c, n] : counts) {
        if (n > best_n) {
            best_n = n;
            best_class = c;
        }
    }
    int cat = best_class % n_categories;
    if (rng.uniform() < 0.15) {
        cat = static_cast<int>(rng.below(static_cast<uint64_t>(n_categories)));
    }
    return cat;
}

} // namespace

Scene generate_scene(uint64_t seed, const GenSpec& spec) {
    if (spec.grid <= 0 || spec.n_classes <= 0 || spec.n_attributes <= 0 || spec.max_objects < 0) {
        throw std::runtime_error("generate_scene: spec parameters must be positive");
    }
    if (spec.min_box < 1.0 / spec.grid) {
        throw std::runtime_error("generate_scene: min_box must be >= 1/grid");
    }
    if (spec.max_box < spec.min_box || spec.max_box > 1.0) {
        throw std::runtime_error("generate_scene: max_box out of range");
    }
    Rng rng(seed);
    Scene scene;
    scene.grid = spec.grid;
    scene.seed = seed;
    const int n = spec.max_objects == 0
                      ? 0
                      : static_cast<int>(rng.below(static_cast<uint64_t>(spec.max_objects + 1)));
    for (int i = 0; i < n; ++i) {
        bool placed = false;
        for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
            SceneObject o;
            o.class_id = static_cast<int>(rng.below(static_cast<uint64_t>(spec.n_classes)));
            o.attribute_id = static_cast<int>(rng.below(static_cast<uint64_t>(spec.n_attributes)));
            const double w = spec.min_box + rng.uniform() * (spec.max_box - spec.min_box);
            const double h = spec.min_box + rng.uniform() * (spec.max_box - spec.min_box);
            o.box.x1 = rng.uniform() * (1.0 - w);
            o.box.y1 = rng.uniform() * (1.0 - h);
            o.box.x2 = o.box.x1 + w;
            o.box.y2 = o.box.y1 + h;
            bool ok = true;
            for (const auto& other : scene.objects) {
                if (other.class_id == o.class_id && iou(other.box, o.box) > 0.3) {
                    ok = false;
                    break;
                }
            }
            if (ok) {
                scene.objects.push_back(o);
                placed = true;
            }
        }
        if (!placed) {
            throw std::runtime_error("generate_scene: placement failed after 1000 attempts "
                                     "(spec over-constrained)");
        }
    }
    scene.scene_class_id =
        draw_scene_class(scene.objects, static_cast<int>(default_scene_categories().size()), rng);
    return scene;
}

Tensor<float> render_features(const Scene& scene, const GenSpec& spec, int d_v) {
    if (d_v < spec.feature_width()) {
        throw std::runtime_error("render_features: d_v=" + std::to_string(d_v) +
                                 " smaller than feature width " +
                                 std::to_string(spec.feature_width()));
    }
    const int G = scene.grid;
    Tensor<float> out({static_cast<size_t>(G * G), static_cast<size_t>(d_v)});
    const double cell = 1.0 / G;
    for (int r = 0; r < G; ++r) {
        for (int col = 0; col < G; ++col) {
            float* f = out.row(static_cast<size_t>(r * G + col));
            const Box cell_box{col * cell, r * cell, (col + 1) * cell, (r + 1) * cell};
            int winner = -1;
            double best_cov = 0.0;
            for (size_t i = 0; i < scene.objects.size(); ++i) {
                const Box& b = scene.objects[i].box;
                const double ix = std::max(0.0, std::min(b.x2, cell_box.x2) - std::max(b.x1, cell_box.x1));
                const double iy = std::max(0.0, std::min(b.y2, cell_box.y2) - std::max(b.y1, cell_box.y1));
                const double cov = (ix * iy) / (cell * cell);
                if (cov > best_cov) {
                    best_cov = cov;
                    winner = static_cast<int>(i);
                }
            }
            if (winner >= 0) {
                const SceneObject& o = scene.objects[static_cast<size_t>(winner)];
                f[o.class_id] = 1.0f;
                f[spec.n_classes + o.attribute_id] = 1.0f;
                f[spec.n_classes + spec.n_attributes] = static_cast<float>(best_cov);
            }
            f[spec.n_classes + spec.n_attributes + 1] = static_cast<float>((col + 0.5) * cell);
            f[spec.n_classes + spec.n_attributes + 2] = static_cast<float>((r + 0.5) * cell);
        }
    }
    return out;
}

namespace {

std::vector<size_t> canonical_order(const std::vector<SceneObject>& objects) {
    std::vector<size_t> idx(objects.size());
    for (size_t i = 0; i < idx.size(); ++i) {
        idx[i] = i;
    }
    std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
        const auto& oa = objects[a];
        const auto& ob = objects[b];
        if (oa.class_id != ob.class_id) return oa.class_id < ob.class_id;
        if (oa.box.x1 != ob.box.x1) return oa.box.x1 < ob.box.x1;
        if (oa.box.y1 != ob.box.y1) return oa.box.y1 < ob.box.y1;
        return a < b;
    });
    return idx;
}

void pad_to(std::vector<int>& ids, size_t len) {
    if (ids.size() > len) {
        throw std::runtime_error("target overflows fixed length " + std::to_string(len));
    }
    ids.resize(len, Vocabulary::kPad);
}

} // namespace

std::vector<int> unique_referents(const Scene& scene) {
    std::map<std::pair<int, int>, int> phrase_count;
    for (const auto& o : scene.objects) {
        phrase_count[{o.attribute_id, o.class_id}]++;
    }
    std::vector<int> out;
    for (size_t i : canonical_order(scene.objects)) {
        const auto& o = scene.objects[i];
        if (phrase_count[{o.attribute_id, o.class_id}] == 1) {
            out.push_back(static_cast<int>(i));
        }
    }
    return out;
}

TaskInstance make_target(const Scene& scene, Task task, const Vocabulary& v, int ref_object) {
    TaskInstance inst;
    inst.task = task;
    inst.scene = scene;
    inst.prompt_ids = {Vocabulary::kBos, v.lookup(task_name(task))};
    const size_t L = static_cast<size_t>(task_target_len(task));
    std::vector<int>& tgt = inst.target_ids;

    switch (task) {
        case Task::caption: {
            if (scene.objects.empty()) {
                tgt.push_back(v.lookup("empty"));
                break;
            }
            // one "<count> <attribute> <class>" phrase per class group,
            // groups ordered by class id; majority attribute, ties -> lower id
            std::map<int, std::vector<int>> groups;
            for (const auto& o : scene.objects) {
                groups[o.class_id].push_back(o.attribute_id);
            }
            const auto& counts = default_count_words();
            for (auto& [cls, attrs] : groups) {
                std::map<int, int> attr_n;
                for (int a : attrs) {
                    attr_n[a]++;
                }
                int best_a = attrs[0], best_n = 0;
                for (const auto& [a, cnt] : attr_n) {
                    if (cnt > best_n) {
                        best_n = cnt;
                        best_a = a;
                    }
                }
                size_t ci = std::min(attrs.size(), counts.size()) - 1;
                tgt.push_back(v.lookup(counts[ci]));
                tgt.push_back(v.lookup(default_attributes()[static_cast<size_t>(best_a)]));
                tgt.push_back(v.class_token(cls));
            }
            break;
        }
        case Task::detect: {
            for (size_t i : canonical_order(scene.objects)) {
                if (tgt.size() + 5 > L) {
                    inst.truncated = true;
                    break;
                }
                const auto& o = scene.objects[i];
                tgt.push_back(v.class_token(o.class_id));
                for (int id : v.encode_box(o.box)) {
                    tgt.push_back(id);
                }
            }
            break;
        }
        case Task::ground: {
            if (ref_object < 0 || ref_object >= static_cast<int>(scene.objects.size())) {
                throw std::runtime_error("make_target: ground requires a valid ref_object");
            }
            const auto& ref = scene.objects[static_cast<size_t>(ref_object)];
            int same = 0;
            for (const auto& o : scene.objects) {
                if (o.class_id == ref.class_id && o.attribute_id == ref.attribute_id) {
                    ++same;
                }
            }
            if (same != 1) {
                throw std::runtime_error("make_target: ambiguous grounding referent");
            }
            inst.ref_object = ref_object;
            inst.prompt_ids.push_back(v.lookup(default_attributes()[static_cast<size_t>(ref.attribute_id)]));
            inst.prompt_ids.push_back(v.class_token(ref.class_id));
            for (int id : v.encode_box(ref.box)) {
                tgt.push_back(id);
            }
            break;
        }
        case Task::classify: {
            tgt.push_back(v.lookup(default_scene_categories()[static_cast<size_t>(scene.scene_class_id)]));
            break;
        }
    }
    pad_to(tgt, L);
    return inst;
}

} // namespace griddiff
