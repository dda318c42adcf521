#include "maskdm/checkpoint.hpp"

#include <charconv>
#include <cstring>
#include <map>

#include "maskdm/data.hpp"
#include "maskdm/errors.hpp"

namespace maskdm {

using compute::ParamSet;
using compute::Shape;
using compute::Tensor;

namespace {

template <typename U>
void put_le(std::string& out, U value) {
    for (std::size_t i = 0; i < sizeof(U); ++i) {
        out.push_back(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xFF));
    }
}

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

class Reader {
public:
    explicit Reader(std::string_view bytes) : bytes_(bytes) {}

    template <typename U>
    U le() {
        need(sizeof(U));
        std::uint64_t v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) {
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        }
        pos_ += sizeof(U);
        return static_cast<U>(v);
    }

    std::string_view take(std::size_t n) {
        need(n);
        const auto out = bytes_.substr(pos_, n);
        pos_ += n;
        return out;
    }

    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) {
            throw FormatError("checkpoint truncated");
        }
    }

    std::string_view bytes_;
    std::size_t pos_ = 0;
};

using Header = std::map<std::string, std::string, std::less<>>;

const std::string& field(const Header& header, std::string_view key) {
    const auto it = header.find(key);
    if (it == header.end()) {
        throw FormatError("checkpoint header lacks '" + std::string(key) + "'");
    }
    return it->second;
}

template <typename U>
U parse_number(const Header& header, std::string_view key) {
    const std::string& text = field(header, key);
    U value{};
    const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
    if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
        throw FormatError("checkpoint header '" + std::string(key) + "' is not a number: " + text);
    }
    return value;
}

void append_tensor(std::string& out, const std::string& name, const Tensor<float>& t) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    out.push_back(static_cast<char>(0));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) {
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    }
    const std::size_t at = out.size();
    out.resize(at + t.size() * sizeof(float));
    std::memcpy(out.data() + at, t.data().data(), t.size() * sizeof(float));
}

}  // namespace

std::string encode_checkpoint(const Checkpoint& c) {
    const std::size_t n = c.params.size();
    if (c.ema.size() != n || c.adam.m.size() != n || c.adam.v.size() != n) {
        throw ContractError("checkpoint tensor groups differ in length");
    }
    std::string header;
    auto line = [&](std::string_view key, const std::string& value) {
        header.append(key).append(" = ").append(value).push_back('\n');
    };
    line("model.depth", std::to_string(c.model.depth));
    line("model.dim", std::to_string(c.model.dim));
    line("model.mlp_dim", std::to_string(c.model.mlp_dim));
    line("model.heads", std::to_string(c.model.heads));
    line("model.patch", std::to_string(c.model.patch));
    line("model.channels", std::to_string(c.model.channels));
    line("model.image_h", std::to_string(c.model.image_h));
    line("model.image_w", std::to_string(c.model.image_w));
    line("model.positional", std::string(to_string(c.model.positional)));
    line("schedule.kind", std::string(to_string(c.schedule.kind)));
    line("schedule.steps", std::to_string(c.schedule.steps));
    line("schedule.beta_start", format_double(c.schedule.beta_start));
    line("schedule.beta_end", format_double(c.schedule.beta_end));
    line("schedule.cosine_offset", format_double(c.schedule.cosine_offset));
    line("schedule.sigma_kind", std::string(to_string(c.schedule.sigma)));
    line("seed", std::to_string(c.seed));
    line("stage", std::to_string(c.stage));
    line("step", std::to_string(c.step));
    line("adam.step", std::to_string(c.adam.step));
    line("rng", c.rng_state);

    std::string out = "MDMC";
    put_le<std::uint32_t>(out, kCheckpointVersion);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(header.size()));
    out += header;
    for (std::size_t i = 0; i < n; ++i) {
        append_tensor(out, c.params.name(i), c.params.tensor(i));
    }
    for (std::size_t i = 0; i < n; ++i) {
        append_tensor(out, "ema/" + c.ema.name(i), c.ema.tensor(i));
    }
    for (std::size_t i = 0; i < n; ++i) {
        append_tensor(out, "adam.m/" + c.params.name(i), c.adam.m[i]);
    }
    for (std::size_t i = 0; i < n; ++i) {
        append_tensor(out, "adam.v/" + c.params.name(i), c.adam.v[i]);
    }
    put_le<std::uint64_t>(out, 4 * n);
    return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
    Reader in(bytes);
    if (in.take(4) != "MDMC") {
        throw FormatError("missing MDMC magic");
    }
    const auto version = in.le<std::uint32_t>();
    if (version != kCheckpointVersion) {
        throw FormatError("unsupported checkpoint version " + std::to_string(version));
    }
    const std::string_view header_text = in.take(in.le<std::uint32_t>());

    Header header;
    std::size_t start = 0;
    while (start < header_text.size()) {
        const std::size_t end = header_text.find('\n', start);
        if (end == std::string_view::npos) {
            throw FormatError("checkpoint header line is not terminated");
        }
        const std::string_view row = header_text.substr(start, end - start);
        const std::size_t eq = row.find(" = ");
        if (eq == std::string_view::npos) {
            throw FormatError("malformed checkpoint header line: " + std::string(row));
        }
        header.emplace(std::string(row.substr(0, eq)), std::string(row.substr(eq + 3)));
        start = end + 1;
    }

    Checkpoint c;
    try {
        c.model.depth = parse_number<std::size_t>(header, "model.depth");
        c.model.dim = parse_number<std::size_t>(header, "model.dim");
        c.model.mlp_dim = parse_number<std::size_t>(header, "model.mlp_dim");
        c.model.heads = parse_number<std::size_t>(header, "model.heads");
        c.model.patch = parse_number<std::size_t>(header, "model.patch");
        c.model.channels = parse_number<std::size_t>(header, "model.channels");
        c.model.image_h = parse_number<std::size_t>(header, "model.image_h");
        c.model.image_w = parse_number<std::size_t>(header, "model.image_w");
        c.model.positional = parse_positional_kind(field(header, "model.positional"));
        c.model.validate();
        c.schedule.kind = parse_schedule_kind(field(header, "schedule.kind"));
        c.schedule.steps = parse_number<int>(header, "schedule.steps");
        c.schedule.beta_start = parse_number<double>(header, "schedule.beta_start");
        c.schedule.beta_end = parse_number<double>(header, "schedule.beta_end");
        c.schedule.cosine_offset = parse_number<double>(header, "schedule.cosine_offset");
        c.schedule.sigma = parse_sigma_kind(field(header, "schedule.sigma_kind"));
    } catch (const ConfigError& e) {
        throw FormatError(std::string("checkpoint config echo invalid: ") + e.what());
    }
    c.seed = parse_number<std::uint64_t>(header, "seed");
    c.stage = parse_number<std::size_t>(header, "stage");
    c.step = parse_number<std::int64_t>(header, "step");
    c.adam.step = parse_number<std::int64_t>(header, "adam.step");
    c.rng_state = field(header, "rng");
    Rng probe;
    probe.set_state(c.rng_state);

    const auto layout = uvit_layout(c.model);
    const std::size_t n = layout.size();
    auto read_tensor = [&](const std::string& expected_name, const Shape& expected_shape) {
        const std::string_view name = in.take(in.le<std::uint32_t>());
        if (name != expected_name) {
            throw FormatError("expected tensor '" + expected_name + "', found '" + std::string(name) + "'");
        }
        if (in.le<std::uint8_t>() != 0) {
            throw FormatError("tensor '" + expected_name + "' has an unsupported dtype");
        }
        const auto ndim = in.le<std::uint32_t>();
        Shape shape;
        for (std::uint32_t i = 0; i < ndim && i < 64; ++i) {
            shape.push_back(in.le<std::uint32_t>());
        }
        if (shape != expected_shape) {
            throw FormatError("tensor '" + expected_name + "' has shape " + compute::shape_string(shape) +
                              ", the model config needs " + compute::shape_string(expected_shape));
        }
        const std::size_t count = compute::element_count(shape);
        const std::string_view payload = in.take(count * sizeof(float));
        std::vector<float> data(count);
        std::memcpy(data.data(), payload.data(), payload.size());
        return Tensor<float>(shape, std::move(data));
    };
    const bool frozen_pos = c.model.positional == PositionalKind::sinusoidal_frozen;
    for (const auto& [name, shape] : layout) {
        c.params.add(name, read_tensor(name, shape), !(frozen_pos && name == "pos_embed"));
    }
    for (const auto& [name, shape] : layout) {
        c.ema.add(name, read_tensor("ema/" + name, shape), !(frozen_pos && name == "pos_embed"));
    }
    for (const auto& [name, shape] : layout) {
        c.adam.m.push_back(read_tensor("adam.m/" + name, shape));
    }
    for (const auto& [name, shape] : layout) {
        c.adam.v.push_back(read_tensor("adam.v/" + name, shape));
    }
    const auto count = in.le<std::uint64_t>();
    if (count != 4 * n) {
        throw FormatError("checkpoint trailer counts " + std::to_string(count) + " tensors, found " +
                          std::to_string(4 * n));
    }
    if (in.remaining() != 0) {
        throw FormatError("trailing bytes after checkpoint trailer");
    }
    return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    write_file(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

}  // namespace maskdm
