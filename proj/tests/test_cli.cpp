#include <gtest/gtest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "test_support.hpp"
#include "vtforge/image_io.hpp"
#include "vtforge/tensor_io.hpp"
#include "vtforge/weights_io.hpp"

using namespace vtforge;
namespace fs = std::filesystem;

namespace {

std::string cli_bin() {
    const char* bin = std::getenv("VTFORGE_BIN");
    if (!bin) ADD_FAILURE() << "VTFORGE_BIN not set";
    return bin ? bin : "";
}

struct CliResult {
    int exit_code = -1;
    std::string output;  // stdout + stderr
};

CliResult run_cli(const std::string& args) {
    CliResult res;
    std::string cmd = cli_bin() + " " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    if (!pipe) {
        ADD_FAILURE() << "popen failed";
        return res;
    }
    char buf[512];
    while (fgets(buf, sizeof(buf), pipe)) res.output += buf;
    int status = pclose(pipe);
    res.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return res;
}

class CliTest : public ::testing::Test {
   protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() / ("vtforge_cli_" + std::to_string(::getpid()));
        fs::create_directories(dir_);
        write_config();
        save_png_rgb8((dir_ / "img.png").string(), test_support::structured_image(16, 4, 5));
        save_png_rgb8((dir_ / "img2.png").string(), test_support::structured_image(16, 4, 6));
    }
    void TearDown() override { fs::remove_all(dir_); }

    void write_config() {
        std::ofstream out(dir_ / "config.json");
        out << R"({
  "version": 1,
  "attack": {"caption": "a small scene", "steps": 8, "k_max": 6, "seed": 3},
  "image_encoder": {"image_size": 16, "patch_size": 4, "model_dim": 16, "heads": 4,
                    "layers": 2, "mlp_ratio": 2, "projection_dim": 4, "seed": 21},
  "text_encoder": {"max_len": 16, "model_dim": 16, "heads": 4, "layers": 2,
                   "projection_dim": 4, "seed": 22},
  "sweep": {"budgets": [0.004, 0.008], "noise_sizes": [0.0, 0.008], "seeds": [3],
            "checkpoints": [0, 8]}
})";
    }

    std::string cfg() const { return (dir_ / "config.json").string(); }
    fs::path dir_;
};

}  // namespace

TEST_F(CliTest, AttackWritesFiveFilesAndRerunsBitExact) {
    auto out1 = dir_ / "out1";
    auto r = run_cli("attack --config " + cfg() + " --out " + out1.string() + " " + (dir_ / "img.png").string());
    ASSERT_EQ(r.exit_code, 0) << r.output;
    for (const char* suffix : {"_adv.png", "_adv.vtt", "_trace.csv", "_metrics.csv", "_manifest.json"})
        EXPECT_TRUE(fs::exists(out1 / ("img" + std::string(suffix)))) << suffix;

    auto out2 = dir_ / "out2";
    r = run_cli("attack --config " + cfg() + " --out " + out2.string() + " " + (dir_ / "img.png").string());
    ASSERT_EQ(r.exit_code, 0) << r.output;
    EXPECT_EQ(detail::read_file_bytes((out1 / "img_adv.png").string()),
              detail::read_file_bytes((out2 / "img_adv.png").string()));
    EXPECT_EQ(detail::read_file_bytes((out1 / "img_adv.vtt").string()),
              detail::read_file_bytes((out2 / "img_adv.vtt").string()));
}

TEST_F(CliTest, WorkerCountDoesNotChangeOutputs) {
    auto seq = dir_ / "seq";
    auto par = dir_ / "par";
    std::string imgs = (dir_ / "img.png").string() + " " + (dir_ / "img2.png").string();
    ASSERT_EQ(run_cli("attack --config " + cfg() + " --out " + seq.string() + " --workers 1 " + imgs).exit_code, 0);
    ASSERT_EQ(run_cli("attack --config " + cfg() + " --out " + par.string() + " --workers 4 " + imgs).exit_code, 0);
    for (const char* stem : {"img", "img2"})
        EXPECT_EQ(detail::read_file_bytes((seq / (stem + std::string("_adv.vtt"))).string()),
                  detail::read_file_bytes((par / (stem + std::string("_adv.vtt"))).string()));
}

TEST_F(CliTest, UnknownConfigKeyExitsOneWithKeyName) {
    std::ofstream out(dir_ / "bad.json");
    out << R"({"version":1,"attack":{"caption":"x","stepz":3}})";
    out.close();
    auto r = run_cli("attack --config " + (dir_ / "bad.json").string() + " --out " + (dir_ / "o").string() + " " +
                     (dir_ / "img.png").string());
    EXPECT_EQ(r.exit_code, 1);
    EXPECT_NE(r.output.find("stepz"), std::string::npos);
}

TEST_F(CliTest, MissingInputExitsThree) {
    auto r = run_cli("attack --config " + cfg() + " --out " + (dir_ / "o").string() + " " +
                     (dir_ / "missing.png").string());
    EXPECT_EQ(r.exit_code, 3);
}

TEST_F(CliTest, EncodeWritesTokenCsvWithOneRowPerToken) {
    auto out = dir_ / "enc";
    auto weights_path = dir_ / "weights.vtw";
    auto r = run_cli("encode --config " + cfg() + " --out " + out.string() + " --save-image-weights " +
                     weights_path.string() + " " + (dir_ / "img.png").string());
    ASSERT_EQ(r.exit_code, 0) << r.output;
    auto tokens = read_points_csv((out / "img_tokens.csv").string());
    EXPECT_EQ(tokens.rows(), 16);  // 16x16 image, patch 4
    EXPECT_EQ(tokens.cols(), 16);
    EXPECT_TRUE(fs::exists(weights_path));
}

TEST_F(CliTest, ClusterRecoversTwoBlobs) {
    std::ofstream out(dir_ / "points.csv");
    out << "token,c0,c1\n0,0,0\n1,0,1\n2,10,10\n3,10,11\n";
    out.close();
    std::ofstream cfg2(dir_ / "cfg2.json");
    cfg2 << R"({"version":1,"attack":{"caption":"x","k_min":2,"k_max":3,"seed":1}})";
    cfg2.close();
    auto r = run_cli("cluster --config " + (dir_ / "cfg2.json").string() + " --out " + (dir_ / "cl").string() +
                     " " + (dir_ / "points.csv").string());
    ASSERT_EQ(r.exit_code, 0) << r.output;
    EXPECT_NE(r.output.find("k*=2"), std::string::npos);
    EXPECT_TRUE(fs::exists(dir_ / "cl" / "points_labels.csv"));
    EXPECT_TRUE(fs::exists(dir_ / "cl" / "points_centers.csv"));
    EXPECT_TRUE(fs::exists(dir_ / "cl" / "points_summary.json"));
}

TEST_F(CliTest, EvalComparesCleanAndAdversarial) {
    auto out = dir_ / "atk";
    ASSERT_EQ(run_cli("attack --config " + cfg() + " --out " + out.string() + " " + (dir_ / "img.png").string())
                  .exit_code,
              0);
    auto r = run_cli("eval --config " + cfg() + " --out " + (dir_ / "ev").string() + " --clean " +
                     (dir_ / "img.png").string() + " --adv " + (out / "img_adv.vtt").string());
    ASSERT_EQ(r.exit_code, 0) << r.output;
    EXPECT_TRUE(fs::exists(dir_ / "ev" / "img_adv_metrics.csv"));
    EXPECT_NE(r.output.find("clip_score_proxy"), std::string::npos);
}

TEST_F(CliTest, SweepEmitsSchemaRows) {
    auto r = run_cli("sweep --config " + cfg() + " --out " + (dir_ / "sw").string() + " --experiment epsilon " +
                     (dir_ / "img.png").string());
    ASSERT_EQ(r.exit_code, 0) << r.output;
    auto csv = detail::read_file_bytes((dir_ / "sw" / "img_sweep_epsilon.csv").string());
    EXPECT_EQ(csv.rfind("experiment,seed,parameter,metric,value\n", 0), 0u);
    EXPECT_NE(csv.find("epsilon_sweep"), std::string::npos);

    r = run_cli("sweep --config " + cfg() + " --out " + (dir_ / "sw").string() + " --experiment bogus " +
                (dir_ / "img.png").string());
    EXPECT_EQ(r.exit_code, 1);
}

TEST_F(CliTest, GradcheckPassesAtDefaultTolerance) {
    auto r = run_cli("gradcheck --points 10");
    EXPECT_EQ(r.exit_code, 0) << r.output;
    EXPECT_NE(r.output.find("[ok]"), std::string::npos);
    EXPECT_EQ(r.output.find("[FAIL]"), std::string::npos);
}
