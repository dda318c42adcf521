#include "maskdm/config.hpp"

#include <charconv>
#include <functional>
#include <map>
#include <optional>
#include <vector>

#include "maskdm/data.hpp"
#include "maskdm/errors.hpp"

namespace maskdm {

namespace {

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) {
        return {};
    }
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

template <typename U>
U parse_number(std::string_view key, std::string_view text, std::size_t line) {
    U value{};
    const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
    if (text.empty() || res.ec != std::errc() || res.ptr != text.data() + text.size()) {
        throw ConfigError("'" + std::string(key) + "' expects a number, got '" + std::string(text) + "'", line);
    }
    return value;
}

bool parse_bool(std::string_view key, std::string_view text, std::size_t line) {
    if (text == "true") {
        return true;
    }
    if (text == "false") {
        return false;
    }
    throw ConfigError("'" + std::string(key) + "' expects true or false", line);
}

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

struct Entry {
    std::string value;
    std::size_t line = 0;
};

using Section = std::map<std::string, Entry, std::less<>>;

const std::vector<std::string_view> kStageKeys = {"name",         "mask",     "steps",     "batch_size", "lr",
                                                  "warmup_steps", "grad_clip", "schedule", "ema_decay",  "hflip"};
const std::vector<std::string_view> kTopKeys = {
    "model",       "depth",       "dim",        "mlp_dim",       "heads",          "patch",
    "channels",    "image_size",  "image_h",    "image_w",       "positional",     "dataset",
    "seed",        "output",      "checkpoint_every", "threads", "timesteps",      "beta_start",
    "beta_end",    "cosine_offset", "sigma_kind", "carry_optimizer"};

bool contains(const std::vector<std::string_view>& keys, std::string_view key) {
    return std::find(keys.begin(), keys.end(), key) != keys.end();
}

// Rethrows value errors raised by library parsers with the config line attached.
template <typename F>
auto at_line(std::size_t line, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const ConfigError& e) {
        if (e.line() != 0) {
            throw;
        }
        throw ConfigError(e.what(), line);
    }
}

}  // namespace

RunConfig parse_config_text(std::string_view text) {
    Section top;
    std::vector<std::pair<long, Section>> stages;
    Section* current = &top;
    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start <= text.size()) {
        const std::size_t end = std::min(text.find('\n', start), text.size());
        std::string_view line = text.substr(start, end - start);
        start = end + 1;
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) {
            line = line.substr(0, hash);
        }
        line = trim(line);
        if (line.empty()) {
            if (end == text.size()) {
                break;
            }
            continue;
        }
        if (line.front() == '[') {
            if (line.back() != ']' || !line.starts_with("[stage ")) {
                throw ConfigError("section headers must read [stage <n>]", line_no);
            }
            const std::string_view num = trim(line.substr(7, line.size() - 8));
            const long n = parse_number<long>("stage", num, line_no);
            if (!stages.empty() && n <= stages.back().first) {
                throw ConfigError("stage numbers must increase", line_no);
            }
            stages.emplace_back(n, Section{});
            current = &stages.back().second;
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError("expected 'key = value'", line_no);
        }
        const std::string key(trim(line.substr(0, eq)));
        const std::string_view value = trim(line.substr(eq + 1));
        const bool in_stage = current != &top;
        if (!contains(kStageKeys, key) && (in_stage || !contains(kTopKeys, key))) {
            throw ConfigError("unknown key '" + key + "'" + (in_stage ? " in a stage section" : ""), line_no);
        }
        if (current->count(key) != 0) {
            throw ConfigError("duplicate key '" + key + "'", line_no);
        }
        current->emplace(key, Entry{std::string(value), line_no});
        if (end == text.size()) {
            break;
        }
    }

    RunConfig cfg;
    auto get = [&](const Section& s, std::string_view key) -> const Entry* {
        const auto it = s.find(key);
        return it == s.end() ? nullptr : &it->second;
    };

    if (const Entry* e = get(top, "model")) {
        cfg.model_preset = e->value;
    }
    UViTConfig& model = cfg.plan.model;
    model = at_line(get(top, "model") ? get(top, "model")->line : 0,
                    [&] { return UViTConfig::preset(cfg.model_preset); });
    auto size_field = [&](std::string_view key, std::size_t& dst) {
        if (const Entry* e = get(top, key)) {
            dst = parse_number<std::size_t>(key, e->value, e->line);
        }
    };
    size_field("depth", model.depth);
    size_field("dim", model.dim);
    size_field("mlp_dim", model.mlp_dim);
    size_field("heads", model.heads);
    size_field("patch", model.patch);
    size_field("channels", model.channels);
    if (const Entry* e = get(top, "image_size")) {
        model.image_h = model.image_w = parse_number<std::size_t>("image_size", e->value, e->line);
    }
    size_field("image_h", model.image_h);
    size_field("image_w", model.image_w);
    if (const Entry* e = get(top, "positional")) {
        model.positional = at_line(e->line, [&] { return parse_positional_kind(e->value); });
    }
    at_line(get(top, "model") ? get(top, "model")->line : 1, [&] { model.validate(); });

    if (const Entry* e = get(top, "dataset")) {
        cfg.dataset = e->value;
    }
    if (const Entry* e = get(top, "output")) {
        cfg.output = e->value;
    }
    if (const Entry* e = get(top, "seed")) {
        cfg.plan.seed = parse_number<std::uint64_t>("seed", e->value, e->line);
    }
    if (const Entry* e = get(top, "checkpoint_every")) {
        cfg.checkpoint_every = parse_number<std::int64_t>("checkpoint_every", e->value, e->line);
        if (cfg.checkpoint_every < 0) {
            throw ConfigError("checkpoint_every must be >= 0", e->line);
        }
    }
    if (const Entry* e = get(top, "threads")) {
        cfg.threads = parse_number<int>("threads", e->value, e->line);
        if (cfg.threads < 1) {
            throw ConfigError("threads must be >= 1", e->line);
        }
    }
    if (const Entry* e = get(top, "carry_optimizer")) {
        cfg.plan.carry_optimizer = parse_bool("carry_optimizer", e->value, e->line);
    }
    ScheduleConfig& sched = cfg.plan.schedule;
    if (const Entry* e = get(top, "timesteps")) {
        sched.steps = parse_number<int>("timesteps", e->value, e->line);
    }
    if (const Entry* e = get(top, "beta_start")) {
        sched.beta_start = parse_number<double>("beta_start", e->value, e->line);
    }
    if (const Entry* e = get(top, "beta_end")) {
        sched.beta_end = parse_number<double>("beta_end", e->value, e->line);
    }
    if (const Entry* e = get(top, "cosine_offset")) {
        sched.cosine_offset = parse_number<double>("cosine_offset", e->value, e->line);
    }
    if (const Entry* e = get(top, "sigma_kind")) {
        sched.sigma = at_line(e->line, [&] { return parse_sigma_kind(e->value); });
    }
    at_line(1, [&] { make_schedule(sched); });

    if (stages.empty()) {
        stages.emplace_back(1, Section{});
    }
    const TokenGrid grid = model.grid();
    for (const auto& [number, section] : stages) {
        TrainStage stage;
        stage.name = "stage" + std::to_string(number);
        std::size_t first_line = 0;
        auto lookup = [&](std::string_view key) -> const Entry* {
            const Entry* e = get(section, key);
            return e != nullptr ? e : get(top, key);
        };
        for (const auto& [key, entry] : section) {
            if (first_line == 0 || entry.line < first_line) {
                first_line = entry.line;
            }
        }
        if (const Entry* e = lookup("name")) {
            stage.name = e->value;
        }
        if (const Entry* e = lookup("mask"); e != nullptr && e->value != "none") {
            stage.mask = at_line(e->line, [&] { return MaskSpec::parse(e->value); });
            at_line(e->line, [&] { stage.mask->validate(grid); });
        }
        if (const Entry* e = lookup("steps")) {
            stage.steps = parse_number<std::int64_t>("steps", e->value, e->line);
        }
        if (const Entry* e = lookup("batch_size")) {
            stage.batch_size = parse_number<std::size_t>("batch_size", e->value, e->line);
        }
        if (const Entry* e = lookup("lr")) {
            stage.lr = parse_number<double>("lr", e->value, e->line);
        }
        if (const Entry* e = lookup("warmup_steps")) {
            stage.warmup_steps = parse_number<std::int64_t>("warmup_steps", e->value, e->line);
        }
        if (const Entry* e = lookup("grad_clip"); e != nullptr && e->value != "none") {
            stage.grad_clip = parse_number<double>("grad_clip", e->value, e->line);
        }
        if (const Entry* e = lookup("schedule")) {
            stage.schedule = at_line(e->line, [&] { return parse_schedule_kind(e->value); });
        }
        if (const Entry* e = lookup("ema_decay")) {
            stage.ema_decay = parse_number<double>("ema_decay", e->value, e->line);
        }
        if (const Entry* e = lookup("hflip")) {
            stage.hflip_prob = parse_number<double>("hflip", e->value, e->line);
        }
        at_line(first_line == 0 ? 1 : first_line, [&] { stage.validate(); });
        cfg.plan.stages.push_back(std::move(stage));
    }
    for (std::size_t i = 0; i + 1 < cfg.plan.stages.size(); ++i) {
        if (!cfg.plan.stages[i].mask) {
            throw ConfigError("stage '" + cfg.plan.stages[i].name +
                              "' has no mask; only the last stage may be mask-free");
        }
    }
    cfg.plan.validate();
    return cfg;
}

RunConfig parse_config(const std::filesystem::path& path) {
    const std::string text = read_file(path);
    try {
        return parse_config_text(text);
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what(), e.line());
    }
}

std::string echo_config(const RunConfig& cfg) {
    std::string out;
    auto line = [&](std::string_view key, const std::string& value) {
        out.append(key).append(" = ").append(value).push_back('\n');
    };
    const UViTConfig& m = cfg.plan.model;
    const ScheduleConfig& s = cfg.plan.schedule;
    line("model", cfg.model_preset);
    line("depth", std::to_string(m.depth));
    line("dim", std::to_string(m.dim));
    line("mlp_dim", std::to_string(m.mlp_dim));
    line("heads", std::to_string(m.heads));
    line("patch", std::to_string(m.patch));
    line("channels", std::to_string(m.channels));
    line("image_h", std::to_string(m.image_h));
    line("image_w", std::to_string(m.image_w));
    line("positional", std::string(to_string(m.positional)));
    line("dataset", cfg.dataset);
    line("output", cfg.output);
    line("seed", std::to_string(cfg.plan.seed));
    line("checkpoint_every", std::to_string(cfg.checkpoint_every));
    line("threads", std::to_string(cfg.threads));
    line("carry_optimizer", cfg.plan.carry_optimizer ? "true" : "false");
    line("timesteps", std::to_string(s.steps));
    line("beta_start", format_double(s.beta_start));
    line("beta_end", format_double(s.beta_end));
    line("cosine_offset", format_double(s.cosine_offset));
    line("sigma_kind", std::string(to_string(s.sigma)));
    for (std::size_t i = 0; i < cfg.plan.stages.size(); ++i) {
        const TrainStage& st = cfg.plan.stages[i];
        out.append("\n[stage ").append(std::to_string(i + 1)).append("]\n");
        line("name", st.name);
        line("mask", st.mask ? st.mask->to_string() : "none");
        line("steps", std::to_string(st.steps));
        line("batch_size", std::to_string(st.batch_size));
        line("lr", format_double(st.lr));
        line("warmup_steps", std::to_string(st.warmup_steps));
        line("grad_clip", st.grad_clip ? format_double(*st.grad_clip) : "none");
        line("schedule", std::string(to_string(st.schedule)));
        line("ema_decay", format_double(st.ema_decay));
        line("hflip", format_double(st.hflip_prob));
    }
    return out;
}

}  // namespace maskdm
