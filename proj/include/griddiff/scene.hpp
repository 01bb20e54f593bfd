#pragma once
// Synthetic multi-object scenes on a G x G patch grid, plus conversion into
// fixed-length task instances (caption / detect / ground / classify).

#include "griddiff/tensor.hpp"
#include "griddiff/vocab.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace griddiff {

double iou(const Box& a, const Box& b);

struct SceneObject {
    int class_id = 0;
    int attribute_id = 0;
    Box box;
};

struct Scene {
    int grid = 8;
    int scene_class_id = 0;
    std::vector<SceneObject> objects;
    uint64_t seed = 0;
};

struct GenSpec {
    int grid = 8;
    int max_objects = 6;
    int n_classes = 5;
    int n_attributes = 6;
    double min_box = 0.125; // must be >= 1/grid
    double max_box = 0.5;

    // concatenated per-cell feature width: class one-hot + attribute one-hot
    // + coverage + 2-dim cell position
    int feature_width() const { return n_classes + n_attributes + 3; }
};

enum class Task : uint8_t { caption = 0, detect = 1, ground = 2, classify = 3 };

const char* task_name(Task t);
Task task_from_name(const std::string& s);
int task_target_len(Task t); // 16 / 32 / 8 / 8

struct TaskInstance {
    Task task = Task::caption;
    Scene scene;
    std::vector<int> prompt_ids; // [BOS] + task tag (+ referring phrase)
    std::vector<int> target_ids; // fixed length task_target_len(task), [PAD]-filled
    int ref_object = -1;         // grounding only
    bool truncated = false;      // detect targets that could not fit every object
};

// Default token inventory used by the shipped pipeline.
const std::vector<std::string>& default_class_names();
const std::vector<std::string>& default_attributes();
const std::vector<std::string>& default_scene_categories();
const std::vector<std::string>& default_count_words();
Vocabulary default_vocabulary(int coord_bins = 100);

/// Pure function of (seed, spec). Same-class object pairs keep IoU <= 0.3.
Scene generate_scene(uint64_t seed, const GenSpec& spec);

/// Deterministic per-cell features, shape (G*G, d_v). Each cell carries the
/// one-hot class/attribute of the object covering it most, the covered
/// fraction, and the normalized cell center.
Tensor<float> render_features(const Scene& scene, const GenSpec& spec, int d_v);

TaskInstance make_target(const Scene& scene, Task task, const Vocabulary& v,
                         int ref_object = -1);

/// Grounding needs a referent whose attribute+class phrase is unique in the
/// scene; returns the candidate indices in canonical order.
std::vector<int> unique_referents(const Scene& scene);

} // namespace griddiff
