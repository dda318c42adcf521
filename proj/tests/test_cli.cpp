#include <gtest/gtest.h>

#include <sstream>

#include "maskdm/checkpoint.hpp"
#include "maskdm/cli.hpp"
#include "maskdm/config.hpp"
#include "maskdm/data.hpp"
#include "maskdm/errors.hpp"

using namespace maskdm;
namespace fs = std::filesystem;

namespace {

const char* kTwoStage = R"(# tiny two-stage plan
model = tiny
image_size = 8
channels = 1
dataset = tex.mdtn
seed = 4
batch_size = 4
lr = 2e-4
timesteps = 50

[stage 1]
mask = block2:0.5
steps = 3

[stage 2]
steps = 2
schedule = cosine
grad_clip = 1.0
)";

struct Result {
    int code;
    std::string out;
    std::string err;
};

Result run(std::vector<std::string> args) {
    args.insert(args.begin(), "maskdm");
    std::vector<const char*> argv;
    for (const auto& a : args) {
        argv.push_back(a.c_str());
    }
    std::ostringstream out, err;
    const int code = dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

std::size_t config_error_line(std::string_view text) {
    try {
        parse_config_text(text);
    } catch (const ConfigError& e) {
        return e.line();
    }
    return 0;
}

fs::path scratch(const char* name) {
    const fs::path dir = fs::temp_directory_path() / "maskdm_test_cli" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST(Config, ParsesStagesOverDefaults) {
    const RunConfig cfg = parse_config_text(kTwoStage);
    EXPECT_EQ(cfg.model_preset, "tiny");
    EXPECT_EQ(cfg.plan.model.image_h, 8u);
    EXPECT_EQ(cfg.plan.model.channels, 1u);
    EXPECT_EQ(cfg.plan.model.dim, 64u);
    EXPECT_EQ(cfg.plan.schedule.steps, 50);
    ASSERT_EQ(cfg.plan.stages.size(), 2u);
    const TrainStage& pre = cfg.plan.stages[0];
    const TrainStage& fine = cfg.plan.stages[1];
    EXPECT_EQ(pre.name, "stage1");
    EXPECT_EQ(pre.mask, MaskSpec::parse("block2:0.5"));
    EXPECT_EQ(pre.batch_size, 4u);
    EXPECT_DOUBLE_EQ(pre.lr, 2e-4);
    EXPECT_FALSE(pre.grad_clip);
    EXPECT_FALSE(fine.mask);
    EXPECT_EQ(fine.schedule, ScheduleKind::cosine);
    EXPECT_EQ(fine.grad_clip, 1.0);
    EXPECT_EQ(fine.steps, 2);
}

TEST(Config, WithoutSectionsDescribesOneStage) {
    const RunConfig cfg = parse_config_text("dataset = d\nsteps = 7\nmask = patch:0.5\n");
    ASSERT_EQ(cfg.plan.stages.size(), 1u);
    EXPECT_EQ(cfg.plan.stages[0].steps, 7);
    EXPECT_EQ(cfg.output, "out");
}

TEST(Config, EchoParsesBackToTheSameConfig) {
    const RunConfig cfg = parse_config_text(kTwoStage);
    const std::string echo = echo_config(cfg);
    EXPECT_EQ(parse_config_text(echo), cfg);
    EXPECT_EQ(echo_config(parse_config_text(echo)), echo);
    EXPECT_NE(echo.find("grad_clip = none"), std::string::npos);
}

TEST(Config, ErrorsCarryTheLineNumber) {
    EXPECT_EQ(config_error_line("dataset = d\nfoo = 1\n"), 2u);
    EXPECT_EQ(config_error_line("steps = 1\nsteps = 2\n"), 2u);
    EXPECT_EQ(config_error_line("\n\nlr = fast\n"), 3u);
    EXPECT_EQ(config_error_line("image_size = 8\nchannels = 1\nmask = block3:0.5\n"), 3u);
    EXPECT_EQ(config_error_line("[stage 1]\nseed = 3\n"), 2u);
    EXPECT_EQ(config_error_line("[stage 2]\n[stage 1]\n"), 2u);
    EXPECT_EQ(config_error_line("[phase 1]\n"), 1u);
    EXPECT_EQ(config_error_line("just words\n"), 1u);
    EXPECT_EQ(config_error_line("schedule = quadratic\n"), 1u);
    EXPECT_EQ(config_error_line("model = giant\n"), 1u);
}

TEST(Config, OnlyTheLastStageMayBeMaskFree) {
    EXPECT_THROW(parse_config_text("[stage 1]\nsteps = 1\n[stage 2]\nmask = patch:0.5\n"), ConfigError);
}

TEST(Dispatch, UsageErrorsExitWithTwo) {
    EXPECT_EQ(run({}).code, 2);
    EXPECT_EQ(run({"teleport"}).code, 2);
    EXPECT_EQ(run({"sample"}).code, 2);
    EXPECT_EQ(run({"make-toy", "--dataset", "swissroll"}).code, 2);
    EXPECT_EQ(run({"--help"}).code, 0);
}

TEST(Dispatch, RuntimeErrorsExitWithOne) {
    const fs::path dir = scratch("errors");
    const Result missing = run({"eval-fd", "--set-a", (dir / "none").string(), "--set-b", (dir / "none").string()});
    EXPECT_EQ(missing.code, 1);
    EXPECT_FALSE(missing.err.empty());
    EXPECT_EQ(run({"make-toy", "--dataset", "mnist", "--out", (dir / "x").string()}).code, 1);
    write_file(dir / "bad.cfg", "dataset = d\nwhat = 1\n");
    const Result bad = run({"pretrain", "--config", (dir / "bad.cfg").string()});
    EXPECT_EQ(bad.code, 1);
    EXPECT_NE(bad.err.find("line 2"), std::string::npos) << bad.err;
}

TEST(Dispatch, EvalFdOfASetWithItselfIsZero) {
    const fs::path dir = scratch("fd");
    ASSERT_EQ(run({"make-toy", "--dataset", "textures", "--n", "64", "--side", "8", "--out", (dir / "a.mdtn").string()})
                  .code,
              0);
    const Result r = run({"eval-fd", "--set-a", (dir / "a.mdtn").string(), "--set-b", (dir / "a.mdtn").string(),
                          "--extractor", "pixel:16", "--seed", "3"});
    EXPECT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(r.out, "0.000000\n");
}

// make-toy, pretrain, finetune --init, sample in both formats, eval-fd.
TEST(Dispatch, EndToEndPipeline) {
    const fs::path dir = scratch("pipeline");
    ASSERT_EQ(run({"make-toy", "--dataset", "textures", "--n", "32", "--side", "8", "--seed", "1", "--out",
                   (dir / "tex.mdtn").string()})
                  .code,
              0);
    write_file(dir / "plan.cfg", kTwoStage);
    const std::string cfg = (dir / "plan.cfg").string();

    const Result pre = run({"pretrain", "--config", cfg});
    ASSERT_EQ(pre.code, 0) << pre.err;
    EXPECT_TRUE(fs::exists(dir / "out" / "config.echo"));
    EXPECT_TRUE(fs::exists(dir / "out" / "metrics_stage1.csv"));
    const fs::path stage1 = dir / "out" / "stage1.mdmc";
    ASSERT_TRUE(fs::exists(stage1));
    EXPECT_EQ(load_checkpoint(stage1).step, 3);

    const Result fine = run({"finetune", "--config", cfg, "--init", stage1.string()});
    ASSERT_EQ(fine.code, 0) << fine.err;
    const fs::path stage2 = dir / "out" / "stage2.mdmc";
    ASSERT_TRUE(fs::exists(stage2));
    const Checkpoint ck = load_checkpoint(stage2);
    EXPECT_EQ(ck.stage, 1u);
    EXPECT_EQ(ck.step, 2);

    const Result ppm = run({"sample", "--ckpt", stage2.string(), "--n", "3", "--steps", "5", "--out",
                            (dir / "ppm").string()});
    ASSERT_EQ(ppm.code, 0) << ppm.err;
    EXPECT_TRUE(fs::exists(dir / "ppm" / "sample_00002.ppm"));
    EXPECT_EQ(load_ppm(dir / "ppm" / "sample_00000.ppm").shape(), (compute::Shape{3, 8, 8}));

    const Result raw = run({"sample", "--ckpt", stage2.string(), "--n", "4", "--sampler", "ddpm", "--format", "mdtn",
                            "--mask", "block2:0.5", "--fill", "-1", "--out", (dir / "raw").string()});
    ASSERT_EQ(raw.code, 0) << raw.err;
    const compute::Tensor<float> samples = load_raw_tensor(dir / "raw" / "samples.mdtn");
    EXPECT_EQ(samples.shape(), (compute::Shape{4, 1, 8, 8}));
    std::size_t filled = 0;
    for (float v : samples.data()) {
        filled += v == -1.0f ? 1 : 0;
    }
    EXPECT_GE(filled, 4u * 32u);

    const Result fd = run({"eval-fd", "--set-a", (dir / "tex.mdtn").string(), "--set-b",
                           (dir / "raw" / "samples.mdtn").string(), "--extractor", "pixel:8"});
    EXPECT_EQ(fd.code, 0) << fd.err;

    // The same plan from scratch (no --init) also runs.
    EXPECT_EQ(run({"finetune", "--config", cfg, "--out", (dir / "scratch").string()}).code, 0);
    EXPECT_TRUE(fs::exists(dir / "scratch" / "stage2.mdmc"));
    fs::remove_all(dir);
}

TEST(Dispatch, FinetuneRejectsAMismatchedCheckpoint) {
    const fs::path dir = scratch("mismatch");
    ASSERT_EQ(run({"make-toy", "--dataset", "textures", "--n", "8", "--side", "8", "--out", (dir / "tex.mdtn").string()})
                  .code,
              0);
    write_file(dir / "a.cfg", kTwoStage);
    ASSERT_EQ(run({"pretrain", "--config", (dir / "a.cfg").string()}).code, 0);
    std::string other = kTwoStage;
    other.replace(other.find("model = tiny"), 12, "model = tiny\ndepth = 2");
    write_file(dir / "b.cfg", other);
    const Result r = run({"finetune", "--config", (dir / "b.cfg").string(), "--init",
                          (dir / "out" / "stage1.mdmc").string(), "--out", (dir / "b").string()});
    EXPECT_EQ(r.code, 1);
    fs::remove_all(dir);
}
