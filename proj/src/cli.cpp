#include "maskdm/cli.hpp"

#include <CLI11.hpp>
#include <Eigen/Core>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <limits>
#include <ostream>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "maskdm/checkpoint.hpp"
#include "maskdm/config.hpp"
#include "maskdm/data.hpp"
#include "maskdm/errors.hpp"
#include "maskdm/eval.hpp"
#include "maskdm/sampler.hpp"
#include "maskdm/trainer.hpp"

namespace maskdm {

namespace fs = std::filesystem;

namespace {

// Stream of the sample rng family reserved for drawing the shared mask.
constexpr std::uint64_t kMaskStream = std::numeric_limits<std::uint64_t>::max();

struct Run {
    RunConfig config;
    fs::path output;
    Dataset data;
};

Run open_run(const fs::path& config_path, const std::string& out_override) {
    Run run{parse_config(config_path), {}, {}};
    const fs::path base = config_path.parent_path();
    auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };
    if (run.config.dataset.empty()) {
        throw ConfigError("config has no dataset");
    }
    run.output = out_override.empty() ? resolve(run.config.output) : fs::path(out_override);
    run.data = load_dataset(resolve(run.config.dataset));
    Eigen::setNbThreads(run.config.threads);
    fs::create_directories(run.output);
    write_file(run.output / "config.echo", echo_config(run.config));
    return run;
}

void train_current_stage(const Run& run, TrainState& state, std::ostream& out) {
    const TrainPlan& plan = run.config.plan;
    const std::string tag = "stage" + std::to_string(state.stage + 1);
    std::ofstream csv(run.output / ("metrics_" + tag + ".csv"), std::ios::trunc);
    write_metrics_header(csv);
    const std::int64_t every = run.config.checkpoint_every;
    while (!stage_complete(plan, state)) {
        const std::int64_t until = every > 0 ? state.step + every : -1;
        const auto log = run_stage(plan, state, run.data, until, &csv);
        if (every > 0 && !stage_complete(plan, state)) {
            save_checkpoint(run.output / "latest.mdmc", make_checkpoint(plan, state));
        }
        if (!log.empty()) {
            out << tag << " step " << log.back().step << " loss " << log.back().loss << "\n";
        }
    }
    const fs::path path = run.output / (tag + ".mdmc");
    save_checkpoint(path, make_checkpoint(plan, state));
    out << "wrote " << path.string() << "\n";
}

void cmd_pretrain(const std::string& config_path, const std::string& out_dir, std::ostream& out) {
    const Run run = open_run(config_path, out_dir);
    const TrainPlan& plan = run.config.plan;
    std::size_t masked = 0;
    while (masked < plan.stages.size() && plan.stages[masked].mask) {
        ++masked;
    }
    if (masked == 0) {
        throw ConfigError("the plan has no masked pre-training stage");
    }
    TrainState state = init_train_state(plan);
    for (std::size_t k = 0; k < masked; ++k) {
        if (k > 0) {
            advance_stage(plan, state);
        }
        train_current_stage(run, state, out);
    }
}

void cmd_finetune(const std::string& config_path, const std::string& init, const std::string& out_dir,
                  std::ostream& out) {
    const Run run = open_run(config_path, out_dir);
    const TrainPlan& plan = run.config.plan;
    const std::size_t last = plan.stages.size() - 1;
    if (plan.stages[last].mask) {
        throw ConfigError("the plan has no mask-free fine-tuning stage");
    }
    TrainState state = [&] {
        if (init.empty()) {
            return init_train_state(plan);
        }
        const Checkpoint ckpt = load_checkpoint(init);
        if (!(ckpt.model == plan.model)) {
            throw ConfigError("checkpoint " + init + " was trained with a different model configuration");
        }
        return restore_state(ckpt);
    }();
    const bool fresh = init.empty();
    state.stage = last;
    state.step = 0;
    if (!fresh && !plan.carry_optimizer) {
        state.adam = AdamState<float>::zeros(state.model.params());
    }
    train_current_stage(run, state, out);
}

struct SampleOptions {
    std::string ckpt;
    std::string sampler = "ddim";
    int steps = 0;
    std::size_t n = 16;
    std::uint64_t seed = 0;
    std::string mask;
    std::string out = "samples";
    std::string format = "ppm";
    std::string schedule;
    bool no_ema = false;
    bool no_clip = false;
    double fill = 0.0;
    std::size_t batch = 64;
};

void cmd_sample(const SampleOptions& o, std::ostream& out) {
    const Checkpoint ckpt = load_checkpoint(o.ckpt);
    const UViT<float> model(ckpt.model, o.no_ema ? ckpt.params : ckpt.ema);
    ScheduleConfig sc = ckpt.schedule;
    if (!o.schedule.empty()) {
        sc.kind = parse_schedule_kind(o.schedule);
    }
    const NoiseSchedule sched = make_schedule(sc);
    const SampleGeometry geo = SampleGeometry::of(ckpt.model);

    SampleRequest req;
    req.n = o.n;
    req.sampler = parse_sampler_kind(o.sampler);
    req.steps = o.steps;
    req.seed = o.seed;
    req.clip = !o.no_clip;
    req.fill = o.fill;
    req.batch = o.batch;
    if (req.sampler == SamplerKind::ddim && (req.steps < 0 || req.steps > sched.steps())) {
        throw ConfigError("ddim steps must lie in [1, " + std::to_string(sched.steps()) + "]");
    }
    if (!o.mask.empty()) {
        const MaskSpec spec = MaskSpec::parse(o.mask);
        spec.validate(geo.grid());
        Rng mask_rng(o.seed, kMaskStream);
        req.mask = sample_mask(geo.grid(), spec, mask_rng);
    }
    const ModelPredictor<float> predictor(model);
    const compute::Tensor<float> images = sample(predictor, sched, geo, req);

    const fs::path dir(o.out);
    if (o.format == "mdtn") {
        write_raw_tensor(dir / "samples.mdtn", images);
        out << "wrote " << (dir / "samples.mdtn").string() << "\n";
        return;
    }
    if (o.format != "ppm") {
        throw ConfigError("unknown output format '" + o.format + "' (expected ppm or mdtn)");
    }
    const std::size_t size = images.size() / o.n;
    for (std::size_t i = 0; i < o.n; ++i) {
        const auto begin = images.buffer().begin() + static_cast<std::ptrdiff_t>(i * size);
        const Image img({geo.channels, geo.height, geo.width},
                        std::vector<float>(begin, begin + static_cast<std::ptrdiff_t>(size)));
        char name[32];
        std::snprintf(name, sizeof(name), "sample_%05zu.ppm", i);
        write_ppm(dir / name, img);
    }
    out << "wrote " << o.n << " images to " << dir.string() << "\n";
}

Eigen::MatrixXd features_of(const std::string& path, const std::string& extractor, std::uint64_t seed) {
    if (extractor == "external") {
        return load_external_features(path);
    }
    if (!extractor.starts_with("pixel:")) {
        throw ConfigError("unknown extractor '" + extractor + "' (expected pixel:<dim> or external)");
    }
    const std::string dim_text = extractor.substr(6);
    std::size_t dim = 0;
    const auto res = std::from_chars(dim_text.data(), dim_text.data() + dim_text.size(), dim);
    if (res.ec != std::errc() || res.ptr != dim_text.data() + dim_text.size() || dim == 0) {
        throw ConfigError("bad extractor dimension in '" + extractor + "'");
    }
    return pixel_features(load_dataset(path).items, dim, seed);
}

void cmd_eval_fd(const std::string& a, const std::string& b, const std::string& extractor, std::uint64_t seed,
                 std::ostream& out) {
    const FeatureStats sa = gaussian_stats(features_of(a, extractor, seed));
    const FeatureStats sb = gaussian_stats(features_of(b, extractor, seed));
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f\n", frechet_distance(sa, sb));
    out << buf;
}

struct ToyOptions {
    std::string dataset;
    std::size_t n = 1000;
    std::size_t side = 16;
    std::size_t classes = 4;
    double noise = 0.01;
    std::uint64_t seed = 0;
    std::string out;
};

void cmd_make_toy(const ToyOptions& o, std::ostream& out) {
    Rng rng(o.seed);
    compute::Tensor<float> items;
    if (o.dataset == "swissroll") {
        items = swiss_roll(o.n, o.noise, rng);
    } else if (o.dataset == "textures") {
        items = textures(o.n, o.side, o.classes, rng);
    } else {
        throw ConfigError("unknown toy dataset '" + o.dataset + "' (expected swissroll or textures)");
    }
    write_raw_tensor(o.out, items);
    out << "wrote " << compute::shape_string(items.shape()) << " to " << o.out << "\n";
}

}  // namespace

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Masked diffusion pre-training, fine-tuning, sampling and evaluation", "maskdm"};
    app.require_subcommand(1);

    std::string config_path, out_dir, init;
    auto* pretrain = app.add_subcommand("pretrain", "Run the masked pre-training stages of a plan");
    pretrain->add_option("--config", config_path, "Run configuration file")->required();
    pretrain->add_option("--out", out_dir, "Output directory (overrides the config)");

    auto* finetune = app.add_subcommand("finetune", "Run the mask-free fine-tuning stage of a plan");
    finetune->add_option("--config", config_path, "Run configuration file")->required();
    finetune->add_option("--init", init, "Checkpoint to start from (scratch when omitted)");
    finetune->add_option("--out", out_dir, "Output directory (overrides the config)");

    SampleOptions so;
    auto* sample_cmd = app.add_subcommand("sample", "Draw images from a checkpoint");
    sample_cmd->add_option("--ckpt", so.ckpt, "Checkpoint file")->required();
    sample_cmd->add_option("--sampler", so.sampler, "ddpm, ddim or em_sde")->capture_default_str();
    sample_cmd->add_option("--steps", so.steps, "Steps for ddim / em_sde (0 = T)")->capture_default_str();
    sample_cmd->add_option("--n", so.n, "Number of samples")->capture_default_str();
    sample_cmd->add_option("--seed", so.seed, "Sampling seed")->capture_default_str();
    sample_cmd->add_option("--mask", so.mask, "Marginal sampling mask, e.g. block4:0.9");
    sample_cmd->add_option("--out", so.out, "Output directory")->capture_default_str();
    sample_cmd->add_option("--format", so.format, "ppm (one file per sample) or mdtn")->capture_default_str();
    sample_cmd->add_option("--schedule", so.schedule, "Override the checkpoint's noise schedule kind");
    sample_cmd->add_option("--fill", so.fill, "Value of hidden patches")->capture_default_str();
    sample_cmd->add_option("--batch", so.batch, "Samples per network call")->capture_default_str();
    sample_cmd->add_flag("--no-ema", so.no_ema, "Use the raw weights instead of the EMA");
    sample_cmd->add_flag("--no-clip", so.no_clip, "Do not clamp outputs to [-1, 1]");

    std::string set_a, set_b, extractor = "pixel:64";
    std::uint64_t fd_seed = 0;
    auto* eval_fd = app.add_subcommand("eval-fd", "Frechet distance between two image or feature sets");
    eval_fd->add_option("--set-a", set_a, "PPM directory or raw tensor file")->required();
    eval_fd->add_option("--set-b", set_b, "PPM directory or raw tensor file")->required();
    eval_fd->add_option("--extractor", extractor, "pixel:<dim> or external")->capture_default_str();
    eval_fd->add_option("--seed", fd_seed, "Projection seed (0 keeps leading pixels)")->capture_default_str();

    ToyOptions to;
    auto* make_toy = app.add_subcommand("make-toy", "Write a procedural dataset as a raw tensor file");
    make_toy->add_option("--dataset", to.dataset, "swissroll or textures")->required();
    make_toy->add_option("--n", to.n, "Number of items")->capture_default_str();
    make_toy->add_option("--side", to.side, "Texture side length")->capture_default_str();
    make_toy->add_option("--classes", to.classes, "Texture classes")->capture_default_str();
    make_toy->add_option("--noise", to.noise, "Swiss roll noise std")->capture_default_str();
    make_toy->add_option("--seed", to.seed, "Generator seed")->capture_default_str();
    make_toy->add_option("--out", to.out, "Output file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return 2;
    }

    try {
        if (pretrain->parsed()) {
            cmd_pretrain(config_path, out_dir, out);
        } else if (finetune->parsed()) {
            cmd_finetune(config_path, init, out_dir, out);
        } else if (sample_cmd->parsed()) {
            cmd_sample(so, out);
        } else if (eval_fd->parsed()) {
            cmd_eval_fd(set_a, set_b, extractor, fd_seed, out);
        } else if (make_toy->parsed()) {
            cmd_make_toy(to, out);
        }
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

void tune_allocator() {
#ifdef __GLIBC__
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    mallopt(M_TOP_PAD, 256 << 20);
#endif
}

}  // namespace maskdm
