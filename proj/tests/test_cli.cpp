#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "griddiff/dataset.hpp"
#include "griddiff/diffusion.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace griddiff;
namespace fs = std::filesystem;

#ifndef CLI_BINARY
#error "CLI_BINARY must point at the command-line tool"
#endif

namespace {

struct RunResult {
    int exit_code;
    std::string output; // stdout + stderr interleaved
};

RunResult run_cli(const std::string& args) {
    const fs::path capture =
        fs::temp_directory_path() / ("griddiff_cli_out_" + std::to_string(::getpid()) + ".txt");
    const std::string cmd =
        std::string(CLI_BINARY) + " " + args + " > " + capture.string() + " 2>&1";
    const int raw = std::system(cmd.c_str());
    RunResult r;
    r.exit_code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    std::ifstream f(capture);
    std::stringstream ss;
    ss << f.rdbuf();
    r.output = ss.str();
    fs::remove(capture);
    return r;
}

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

// a small dataset plus an untrained checkpoint, built once per binary run
const fs::path& fixture() {
    static const fs::path root = [] {
        const fs::path dir = fs::temp_directory_path() / "griddiff_cli_fixture";
        fs::remove_all(dir);
        fs::create_directories(dir);
        build_dataset(GenSpec{}, 5, 24, TaskMix{}, default_vocabulary(),
                      (dir / "data").string());
        const Dataset data = load_dataset((dir / "data").string());
        ModelConfig cfg;
        cfg.d = 16;
        cfg.n_layers = 1;
        cfg.n_heads = 4;
        cfg.d_v = 16;
        cfg.grid = data.manifest.spec.grid;
        cfg.vocab_size = static_cast<int>(data.vocab.size());
        cfg.vocab_hash = data.vocab.hash();
        const Net<float> net(cfg, 1);
        save_checkpoint(net, (dir / "model.ckpt").string());
        return dir;
    }();
    return root;
}

} // namespace

TEST_CASE("usage errors exit 1 with usage text") {
    const auto none = run_cli("");
    CHECK(none.exit_code == 1);
    CHECK(none.output.find("Usage") != std::string::npos);

    const auto bad = run_cli("frobnicate");
    CHECK(bad.exit_code == 1);

    const auto bad_flag = run_cli("gen-data --out /tmp/x --no-such-flag 3");
    CHECK(bad_flag.exit_code == 1);

    const auto missing = run_cli("eval"); // required flags absent
    CHECK(missing.exit_code == 1);
}

TEST_CASE("gen-data is byte-reproducible") {
    TempDir a("griddiff_cli_gen_a");
    TempDir b("griddiff_cli_gen_b");
    CHECK(run_cli("gen-data --seed 7 --size 50 --out " + a.path.string()).exit_code == 0);
    CHECK(run_cli("gen-data --seed 7 --size 50 --out " + b.path.string()).exit_code == 0);
    CHECK(slurp(a.path / "instances.bin") == slurp(b.path / "instances.bin"));
    CHECK(!slurp(a.path / "instances.bin").empty());
    CHECK(fs::exists(a.path / "manifest.json"));
    // rerunning over the same directory reproduces the same bytes
    const std::string before = slurp(a.path / "instances.bin");
    CHECK(run_cli("gen-data --seed 7 --size 50 --out " + a.path.string()).exit_code == 0);
    CHECK(slurp(a.path / "instances.bin") == before);
}

TEST_CASE("config file fills unset flags; explicit flags win") {
    TempDir dir("griddiff_cli_cfg");
    const fs::path cfg = dir.path / "cfg.json";
    std::ofstream(cfg) << R"({"size": 10, "seed": 3})";
    CHECK(run_cli("gen-data --config " + cfg.string() + " --out " +
                  (dir.path / "d1").string())
              .exit_code == 0);
    const Dataset d1 = load_dataset((dir.path / "d1").string());
    CHECK(d1.instances.size() == 10);
    CHECK(d1.manifest.seed == 3);
    CHECK(run_cli("gen-data --config " + cfg.string() + " --size 14 --out " +
                  (dir.path / "d2").string())
              .exit_code == 0);
    CHECK(load_dataset((dir.path / "d2").string()).instances.size() == 14);
}

TEST_CASE("decode rejects a schedule longer than the template") {
    const auto& fix = fixture();
    const auto r = run_cli("decode --model " + (fix / "model.ckpt").string() + " --data " +
                           (fix / "data").string() + " --timesteps 16 --gen-len 8");
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("exceeds") != std::string::npos);
}

TEST_CASE("decode emits a trace and eval writes reports") {
    const auto& fix = fixture();
    TempDir out("griddiff_cli_decode");
    fs::remove_all(out.path); // the tool creates --out itself
    const auto r = run_cli("decode --model " + (fix / "model.ckpt").string() + " --data " +
                           (fix / "data").string() + " --timesteps 4 --out " +
                           out.path.string());
    CHECK(r.exit_code == 0);
    CHECK(fs::exists(out.path / "trace.json"));
    CHECK(fs::exists(out.path / "manifest.json"));

    TempDir ev("griddiff_cli_eval");
    fs::remove_all(ev.path);
    const auto e = run_cli("eval --model " + (fix / "model.ckpt").string() + " --data " +
                           (fix / "data").string() + " --timesteps 2 --out " +
                           ev.path.string());
    CHECK(e.exit_code == 0);
    CHECK(fs::exists(ev.path / "report.json"));
    CHECK(fs::exists(ev.path / "report.csv"));
    const std::string csv = slurp(ev.path / "report.csv");
    CHECK(csv.rfind("task,metric,value", 0) == 0);
}

TEST_CASE("trace-viz renders ansi and well-formed svg with exact terciles") {
    TempDir dir("griddiff_cli_viz");
    const fs::path trace = dir.path / "trace.json";
    // hand-built N=9 trace: finalization steps 9..1 across nine tokens
    std::ofstream(trace) << R"({
      "schedule": {"n_steps": 9, "gen_len": 9, "mask_counts": [0,1,2,3,4,5,6,7,8,9]},
      "strategy": "low_confidence",
      "steps": [],
      "finalization_step": [9,8,7,6,5,4,3,2,1],
      "output_ids": [3,3,3,3,3,3,3,3,3],
      "output_text": "t9 t8 t7 t6 t5 t4 t3 t2 t1"
    })";
    const auto ansi = run_cli("trace-viz --trace " + trace.string());
    CHECK(ansi.exit_code == 0);
    CHECK(ansi.output.find("\x1b[33mt9") != std::string::npos); // early
    CHECK(ansi.output.find("\x1b[33mt7") != std::string::npos);
    CHECK(ansi.output.find("\x1b[35mt6") != std::string::npos); // middle
    CHECK(ansi.output.find("\x1b[35mt4") != std::string::npos);
    CHECK(ansi.output.find("\x1b[34mt3") != std::string::npos); // late
    CHECK(ansi.output.find("\x1b[34mt1") != std::string::npos);

    const fs::path svg_path = dir.path / "trace.svg";
    const auto svg = run_cli("trace-viz --trace " + trace.string() + " --mode svg --out " +
                             svg_path.string());
    CHECK(svg.exit_code == 0);
    const std::string body = slurp(svg_path);
    CHECK(body.find("<svg") != std::string::npos);
    CHECK(body.find("</svg>") != std::string::npos);
    CHECK(body.find("xmlns") != std::string::npos);

    // malformed trace: missing field reported, exit 2
    const fs::path bad = dir.path / "bad.json";
    std::ofstream(bad) << R"({"schedule": {"n_steps": 4}})";
    const auto err = run_cli("trace-viz --trace " + bad.string());
    CHECK(err.exit_code == 2);
    CHECK(err.output.find("finalization_step") != std::string::npos);
}

TEST_CASE("concurrent runs against one output directory are refused") {
    TempDir dir("griddiff_cli_lock");
    std::ofstream(dir.path / ".lock") << "";
    const auto r = run_cli("gen-data --seed 1 --size 4 --out " + dir.path.string());
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("lock") != std::string::npos);
}
