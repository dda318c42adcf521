#include "maskdm/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

#include "maskdm/errors.hpp"

namespace maskdm {

using compute::Shape;
using compute::Tensor;

namespace {

static_assert(std::endian::native == std::endian::little, "file formats assume a little-endian host");

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
}

std::uint32_t get_u32(std::string_view in, std::size_t at) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
        v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
    }
    return v;
}

std::uint8_t to_byte(float v) {
    const double scaled = (static_cast<double>(v) + 1.0) * 127.5;
    return static_cast<std::uint8_t>(std::clamp(std::lround(scaled), 0L, 255L));
}

float from_byte(std::uint8_t b) { return static_cast<float>(static_cast<double>(b) / 127.5 - 1.0); }

}  // namespace

std::string_view to_string(DatasetKind kind) {
    switch (kind) {
        case DatasetKind::image_dir: return "image_dir";
        case DatasetKind::raw_tensor_file: return "raw_tensor_file";
        case DatasetKind::swissroll: return "swissroll";
        case DatasetKind::textures: return "textures";
    }
    return "unknown";
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("cannot open " + path.string());
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error("cannot write " + path.string());
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw Error("write failed for " + path.string());
    }
}

// ------------------------------------------------------------------ Dataset

Tensor<float> Dataset::gather(std::span<const std::size_t> indices) const {
    const std::size_t stride = size() == 0 ? 0 : items.size() / size();
    Shape shape = items.shape();
    shape[0] = indices.size();
    Tensor<float> out(shape);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= size()) {
            throw ContractError("dataset index out of range");
        }
        std::copy_n(items.data().data() + indices[i] * stride, stride, out.data().data() + i * stride);
    }
    return out;
}

Image Dataset::item(std::size_t index) const {
    const std::size_t idx[1] = {index};
    return gather(idx).reshaped({channels(), height(), width()});
}

Dataset make_dataset(Tensor<float> items, DatasetKind kind) {
    if (items.rank() == 2 && items.dim(1) == 2) {
        items = items.reshaped({items.dim(0), 1, 1, 2});
    }
    if (items.rank() != 4) {
        throw FormatError("dataset tensor must be [N, C, H, W] or [N, 2], got " +
                          compute::shape_string(items.shape()));
    }
    if (items.dim(0) == 0) {
        throw FormatError("dataset is empty");
    }
    for (float v : items.data()) {
        if (!(v >= -1.0f && v <= 1.0f)) {
            throw FormatError("dataset values must lie in [-1, 1]");
        }
    }
    return Dataset{kind, std::move(items)};
}

Dataset load_dataset(const std::filesystem::path& path) {
    if (std::filesystem::is_directory(path)) {
        std::vector<std::filesystem::path> files;
        for (const auto& entry : std::filesystem::directory_iterator(path)) {
            if (entry.is_regular_file() && entry.path().extension() == ".ppm") {
                files.push_back(entry.path());
            }
        }
        std::sort(files.begin(), files.end());
        if (files.empty()) {
            throw FormatError("no .ppm files in " + path.string());
        }
        const Image first = load_ppm(files[0]);
        Tensor<float> items({files.size(), first.dim(0), first.dim(1), first.dim(2)});
        for (std::size_t i = 0; i < files.size(); ++i) {
            const Image img = i == 0 ? first : load_ppm(files[i]);
            if (img.shape() != first.shape()) {
                throw FormatError(files[i].string() + " differs in size from " + files[0].string());
            }
            std::copy(img.buffer().begin(), img.buffer().end(),
                      items.buffer().begin() + static_cast<std::ptrdiff_t>(i * first.size()));
        }
        return make_dataset(std::move(items), DatasetKind::image_dir);
    }
    return make_dataset(load_raw_tensor(path), DatasetKind::raw_tensor_file);
}

// ----------------------------------------------------------------- toy data

std::pair<double, double> swiss_roll_point(double u) {
    const double theta = 1.5 * std::numbers::pi * (1.0 + 2.0 * u);
    return {theta * std::cos(theta) / kSwissRollScale, theta * std::sin(theta) / kSwissRollScale};
}

Tensor<float> swiss_roll(std::size_t n, double noise_std, Rng& rng) {
    if (noise_std < 0.0) {
        throw ContractError("swiss_roll: noise_std must be >= 0");
    }
    Tensor<float> out({n, 2});
    for (std::size_t i = 0; i < n; ++i) {
        const auto [x, y] = swiss_roll_point(rng.uniform());
        const double nx = rng.normal();
        const double ny = rng.normal();
        out[2 * i] = static_cast<float>(x + noise_std * nx);
        out[2 * i + 1] = static_cast<float>(y + noise_std * ny);
    }
    return out;
}

Tensor<float> textures(std::size_t n, std::size_t side, std::size_t classes, Rng& rng, std::vector<int>* labels) {
    if (side == 0 || side % 4 != 0) {
        throw ContractError("textures: side must be a positive multiple of 4");
    }
    if (classes == 0) {
        throw ContractError("textures: need at least one class");
    }
    Tensor<float> out({n, 1, side, side});
    if (labels != nullptr) {
        labels->assign(n, 0);
    }
    for (std::size_t i = 0; i < n; ++i) {
        const auto cls = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(classes) - 1));
        const double angle = std::numbers::pi * static_cast<double>(cls) / static_cast<double>(classes);
        const double cycles = (2.0 + 1.5 * static_cast<double>(cls)) * (0.9 + 0.2 * rng.uniform());
        const double phase = 2.0 * std::numbers::pi * rng.uniform();
        const double kx = 2.0 * std::numbers::pi * cycles * std::cos(angle) / static_cast<double>(side);
        const double ky = 2.0 * std::numbers::pi * cycles * std::sin(angle) / static_cast<double>(side);
        float* dst = out.data().data() + i * side * side;
        for (std::size_t r = 0; r < side; ++r) {
            for (std::size_t c = 0; c < side; ++c) {
                const double v = 0.9 * std::sin(kx * (c + 0.5) + ky * (r + 0.5) + phase);
                dst[r * side + c] = static_cast<float>(v);
            }
        }
        if (labels != nullptr) {
            (*labels)[i] = static_cast<int>(cls);
        }
    }
    return out;
}

// ---------------------------------------------------------------------- PPM

Image decode_ppm(std::string_view bytes) {
    std::size_t pos = 0;
    auto skip_space = [&] {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') {
                    ++pos;
                }
            } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
                ++pos;
            } else {
                break;
            }
        }
    };
    auto read_int = [&]() -> std::size_t {
        skip_space();
        std::size_t start = pos, value = 0;
        while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
            value = value * 10 + static_cast<std::size_t>(bytes[pos] - '0');
            if (value > 1u << 24) {
                throw FormatError("PPM header value too large");
            }
            ++pos;
        }
        if (pos == start) {
            throw FormatError("malformed PPM header");
        }
        return value;
    };
    if (bytes.size() < 2 || bytes.substr(0, 2) != "P6") {
        throw FormatError("not a binary PPM (P6) file");
    }
    pos = 2;
    const std::size_t width = read_int();
    const std::size_t height = read_int();
    const std::size_t maxval = read_int();
    if (maxval != 255) {
        throw FormatError("PPM maxval must be 255, got " + std::to_string(maxval));
    }
    if (width == 0 || height == 0) {
        throw FormatError("PPM has zero size");
    }
    if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        throw FormatError("malformed PPM header");
    }
    ++pos;
    if (bytes.size() - pos != width * height * 3) {
        throw FormatError("PPM payload has " + std::to_string(bytes.size() - pos) + " bytes, expected " +
                          std::to_string(width * height * 3));
    }
    Image img({3, height, width});
    for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) {
            for (std::size_t c = 0; c < 3; ++c) {
                img[(c * height + y) * width + x] =
                    from_byte(static_cast<std::uint8_t>(bytes[pos + (y * width + x) * 3 + c]));
            }
        }
    }
    return img;
}

std::string encode_ppm(const Image& image) {
    if (image.rank() != 3 || (image.dim(0) != 1 && image.dim(0) != 3)) {
        throw ContractError("write_ppm expects a [1 or 3, H, W] image");
    }
    const std::size_t ch = image.dim(0), h = image.dim(1), w = image.dim(2);
    std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    out.reserve(out.size() + w * h * 3);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            for (std::size_t c = 0; c < 3; ++c) {
                const std::size_t src = ch == 1 ? 0 : c;
                out.push_back(static_cast<char>(to_byte(image[(src * h + y) * w + x])));
            }
        }
    }
    return out;
}

Image load_ppm(const std::filesystem::path& path) { return decode_ppm(read_file(path)); }

void write_ppm(const std::filesystem::path& path, const Image& image) { write_file(path, encode_ppm(image)); }

// --------------------------------------------------------------- raw tensor

std::string encode_raw_tensor(const Tensor<float>& tensor) {
    if (tensor.rank() > 255) {
        throw ContractError("raw tensor rank exceeds 255");
    }
    std::string out = "MDTN";
    out.push_back(static_cast<char>(1));
    out.push_back(static_cast<char>(0));
    out.push_back(static_cast<char>(tensor.rank()));
    out.push_back(static_cast<char>(0));
    for (std::size_t d : tensor.shape()) {
        put_u32(out, static_cast<std::uint32_t>(d));
    }
    const std::size_t header = out.size();
    out.resize(header + tensor.size() * sizeof(float));
    std::memcpy(out.data() + header, tensor.data().data(), tensor.size() * sizeof(float));
    return out;
}

Tensor<float> decode_raw_tensor(std::string_view bytes) {
    if (bytes.size() < 8 || bytes.substr(0, 4) != "MDTN") {
        throw FormatError("missing MDTN magic");
    }
    if (static_cast<std::uint8_t>(bytes[4]) != 1) {
        throw FormatError("unsupported raw tensor version " + std::to_string(static_cast<std::uint8_t>(bytes[4])));
    }
    if (static_cast<std::uint8_t>(bytes[5]) != 0) {
        throw FormatError("unsupported raw tensor dtype " + std::to_string(static_cast<std::uint8_t>(bytes[5])));
    }
    const std::size_t ndim = static_cast<std::uint8_t>(bytes[6]);
    if (bytes.size() < 8 + 4 * ndim) {
        throw FormatError("truncated raw tensor header");
    }
    Shape shape(ndim);
    for (std::size_t i = 0; i < ndim; ++i) {
        shape[i] = get_u32(bytes, 8 + 4 * i);
    }
    const std::size_t payload = bytes.size() - 8 - 4 * ndim;
    const std::size_t count = compute::element_count(shape);
    if (payload != count * sizeof(float)) {
        throw FormatError("raw tensor payload has " + std::to_string(payload) + " bytes, dims need " +
                          std::to_string(count * sizeof(float)));
    }
    std::vector<float> data(count);
    std::memcpy(data.data(), bytes.data() + 8 + 4 * ndim, payload);
    return Tensor<float>(std::move(shape), std::move(data));
}

Tensor<float> load_raw_tensor(const std::filesystem::path& path) { return decode_raw_tensor(read_file(path)); }

void write_raw_tensor(const std::filesystem::path& path, const Tensor<float>& tensor) {
    write_file(path, encode_raw_tensor(tensor));
}

// ------------------------------------------------------------- augmentation

std::size_t hflip(Tensor<float>& batch, double p, Rng& rng) {
    if (!(p >= 0.0 && p <= 1.0)) {
        throw ContractError("hflip probability must lie in [0, 1]");
    }
    if (batch.rank() != 4) {
        throw ShapeError("hflip expects [B, C, H, W]");
    }
    const std::size_t n = batch.dim(0), rows = batch.dim(1) * batch.dim(2), w = batch.dim(3);
    std::size_t flipped = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!rng.bernoulli(p)) {
            continue;
        }
        ++flipped;
        float* base = batch.data().data() + i * rows * w;
        for (std::size_t r = 0; r < rows; ++r) {
            std::reverse(base + r * w, base + (r + 1) * w);
        }
    }
    return flipped;
}

Image resize_bilinear(const Image& image, std::size_t out_side) {
    if (out_side == 0) {
        throw ContractError("resize_bilinear: output side must be >= 1");
    }
    if (image.rank() != 3) {
        throw ShapeError("resize_bilinear expects [C, H, W]");
    }
    const std::size_t ch = image.dim(0), h = image.dim(1), w = image.dim(2);
    struct Tap {
        std::size_t lo, hi;
        double frac;
    };
    auto taps = [&](std::size_t in, std::size_t out) {
        std::vector<Tap> result(out);
        const double ratio = static_cast<double>(in) / static_cast<double>(out);
        for (std::size_t i = 0; i < out; ++i) {
            double src = (static_cast<double>(i) + 0.5) * ratio - 0.5;
            src = std::clamp(src, 0.0, static_cast<double>(in - 1));
            const auto lo = static_cast<std::size_t>(std::floor(src));
            const std::size_t hi = std::min(lo + 1, in - 1);
            result[i] = {lo, hi, src - static_cast<double>(lo)};
        }
        return result;
    };
    const auto ty = taps(h, out_side);
    const auto tx = taps(w, out_side);
    Image out({ch, out_side, out_side});
    for (std::size_t c = 0; c < ch; ++c) {
        auto at = [&](std::size_t y, std::size_t x) { return static_cast<double>(image[(c * h + y) * w + x]); };
        for (std::size_t y = 0; y < out_side; ++y) {
            for (std::size_t x = 0; x < out_side; ++x) {
                const Tap& a = ty[y];
                const Tap& b = tx[x];
                const double top = at(a.lo, b.lo) * (1.0 - b.frac) + at(a.lo, b.hi) * b.frac;
                const double bottom = at(a.hi, b.lo) * (1.0 - b.frac) + at(a.hi, b.hi) * b.frac;
                out[(c * out_side + y) * out_side + x] = static_cast<float>(top * (1.0 - a.frac) + bottom * a.frac);
            }
        }
    }
    return out;
}

}  // namespace maskdm
