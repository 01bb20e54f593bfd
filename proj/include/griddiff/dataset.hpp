#pragma once
// On-disk dataset: record-framed `instances.bin` plus `manifest.json` and the
// vocabulary used to build it. Rebuilding from the same (spec, seed, size)
// yields byte-identical files.

#include "griddiff/scene.hpp"
#include "griddiff/vocab.hpp"

#include <map>
#include <string>
#include <vector>

namespace griddiff {

struct TaskMix {
    double caption = 0.25;
    double detect = 0.25;
    double ground = 0.25;
    double classify = 0.25;

    double sum() const { return caption + detect + ground + classify; }
    double of(Task t) const;
};

struct DatasetManifest {
    uint64_t seed = 0;
    size_t size = 0;
    GenSpec spec;
    std::map<std::string, size_t> counts;
    uint64_t vocab_hash = 0;
};

/// Exact largest-remainder apportionment of `size` instances over the mix.
std::vector<size_t> apportion(const TaskMix& mix, size_t size);

void build_dataset(const GenSpec& spec, uint64_t seed, size_t size, const TaskMix& mix,
                   const Vocabulary& v, const std::string& out_dir, bool overwrite = false);

struct Dataset {
    std::vector<TaskInstance> instances;
    DatasetManifest manifest;
    Vocabulary vocab;
};

Dataset load_dataset(const std::string& dir);

// Record codec, exposed for tests of the wire format.
std::vector<uint8_t> encode_instance(const TaskInstance& inst);
TaskInstance decode_instance(const uint8_t* data, size_t len);

} // namespace griddiff
