#include "maskdm/compute/graph.hpp"

#include <Eigen/Core>
#include <unsupported/Eigen/SpecialFunctions>
#include <algorithm>
#include <cmath>
#include <numbers>

namespace maskdm::compute {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using MutMap = Eigen::Map<RowMat<T>>;
// Transcendentals run on fixed, aligned chunks so every element takes the same
// vectorized code path wherever it sits in memory. Results are then independent
// of buffer alignment, which keeps training bit-reproducible.
constexpr Eigen::Index kChunk = 64;
template <typename T>
using Chunk = Eigen::Array<T, kChunk, 1>;

// out[i] = f(x)[i] chunk by chunk; tails are zero-padded.
template <typename T, typename F>
void chunked_apply(const T* x, T* out, std::size_t n, F f) {
    Chunk<T> a;
    for (std::size_t i = 0; i < n; i += kChunk) {
        const std::size_t m = std::min<std::size_t>(kChunk, n - i);
        a.setZero();
        std::copy(x + i, x + i + m, a.data());
        const Chunk<T> r = f(a);
        std::copy(r.data(), r.data() + m, out + i);
    }
}

enum class Broadcast { same, scalar, last_axis };

Broadcast classify(const Shape& a, const Shape& b, std::string_view op) {
    if (a == b) {
        return Broadcast::same;
    }
    if (element_count(b) == 1) {
        return Broadcast::scalar;
    }
    if (b.size() == 1 && !a.empty() && a.back() == b[0]) {
        return Broadcast::last_axis;
    }
    throw ShapeError(std::string(op) + ": cannot combine " + shape_string(a) + " with " +
                     shape_string(b));
}

template <typename T>
Tensor<T> permute(const Tensor<T>& in, const std::vector<std::size_t>& perm) {
    const Shape& src = in.shape();
    const std::size_t rank = src.size();
    if (rank <= 1) {
        return in;
    }
    std::vector<std::size_t> src_strides(rank, 1);
    for (std::size_t k = rank; k-- > 1;) {
        src_strides[k - 1] = src_strides[k] * src[k];
    }
    Shape dst(rank);
    std::vector<std::size_t> step(rank);
    for (std::size_t k = 0; k < rank; ++k) {
        dst[k] = src[perm[k]];
        step[k] = src_strides[perm[k]];
    }
    Tensor<T> out(dst);
    if (out.size() == 0) {
        return out;
    }
    std::vector<std::size_t> idx(rank, 0);
    std::size_t offset = 0;
    const T* from = in.data().data();
    T* to = out.data().data();
    const std::size_t inner = rank == 0 ? 1 : dst[rank - 1];
    const std::size_t inner_step = rank == 0 ? 0 : step[rank - 1];
    for (std::size_t o = 0; o < out.size(); o += inner) {
        for (std::size_t j = 0; j < inner; ++j) {
            to[o + j] = from[offset + j * inner_step];
        }
        // Advance the odometer over all but the innermost axis.
        for (std::size_t k = rank - 1; k-- > 0;) {
            ++idx[k];
            offset += step[k];
            if (idx[k] < dst[k]) {
                break;
            }
            offset -= step[k] * dst[k];
            idx[k] = 0;
        }
    }
    return out;
}

template <typename T>
void gelu_values(const Tensor<T>& x, Tensor<T>& out) {
    chunked_apply(x.data().data(), out.data().data(), x.size(), [](const Chunk<T>& v) -> Chunk<T> {
        return T(0.5) * v * (T(1) + (v * (T(1) / std::numbers::sqrt2_v<T>)).erf());
    });
}

// out += g * d gelu / dx
template <typename T>
void gelu_slopes_into(const Tensor<T>& x, const Tensor<T>& g, Tensor<T>& out) {
    const T norm = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
    std::vector<T> slope(x.size());
    chunked_apply(x.data().data(), slope.data(), x.size(), [norm](const Chunk<T>& v) -> Chunk<T> {
        return T(0.5) * (T(1) + (v * (T(1) / std::numbers::sqrt2_v<T>)).erf()) +
               v * (T(-0.5) * v.square()).exp() * norm;
    });
    for (std::size_t i = 0; i < slope.size(); ++i) {
        out[i] += g[i] * slope[i];
    }
}

template <typename T>
void add_into(Tensor<T>& dst, const Tensor<T>& src, T factor = T(1)) {
    auto d = dst.data();
    auto s = src.data();
    if (factor == T(1)) {
        for (std::size_t i = 0; i < d.size(); ++i) {
            d[i] += s[i];
        }
    } else {
        for (std::size_t i = 0; i < d.size(); ++i) {
            d[i] += factor * s[i];
        }
    }
}

// Reduce `full` (shape of the broadcast result) back onto an operand of shape `target`.
template <typename T>
void reduce_into(Tensor<T>& dst, const std::vector<T>& full, Broadcast mode) {
    auto d = dst.data();
    switch (mode) {
        case Broadcast::same:
            for (std::size_t i = 0; i < d.size(); ++i) {
                d[i] += full[i];
            }
            break;
        case Broadcast::scalar: {
            T total = T(0);
            for (T v : full) {
                total += v;
            }
            d[0] += total;
            break;
        }
        case Broadcast::last_axis: {
            const std::size_t n = d.size();
            for (std::size_t i = 0; i < full.size(); i += n) {
                for (std::size_t j = 0; j < n; ++j) {
                    d[j] += full[i + j];
                }
            }
            break;
        }
    }
}

}  // namespace

// ---------------------------------------------------------------- ParamSet

template <typename T>
std::size_t ParamSet<T>::add(std::string name, Tensor<T> init, bool trainable) {
    if (find(name) != npos) {
        throw ContractError("duplicate parameter name: " + name);
    }
    names_.push_back(std::move(name));
    tensors_.push_back(std::move(init));
    trainable_.push_back(trainable ? 1 : 0);
    return names_.size() - 1;
}

template <typename T>
std::size_t ParamSet<T>::find(std::string_view name) const {
    for (std::size_t i = 0; i < names_.size(); ++i) {
        if (names_[i] == name) {
            return i;
        }
    }
    return npos;
}

template <typename T>
std::size_t ParamSet<T>::element_count() const {
    std::size_t total = 0;
    for (const auto& t : tensors_) {
        total += t.size();
    }
    return total;
}

// ------------------------------------------------------------- GradientMap

template <typename T>
GradientMap<T>::GradientMap(const ParamSet<T>& params) {
    grads_.reserve(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        grads_.emplace_back(params.tensor(i).shape());
    }
}

template <typename T>
double GradientMap<T>::global_norm() const {
    double total = 0.0;
    for (const auto& g : grads_) {
        for (T v : g.data()) {
            total += static_cast<double>(v) * static_cast<double>(v);
        }
    }
    return std::sqrt(total);
}

template <typename T>
void GradientMap<T>::scale(T factor) {
    for (auto& g : grads_) {
        for (T& v : g.data()) {
            v *= factor;
        }
    }
}

// ------------------------------------------------------------------- Graph

std::string_view op_name(OpKind kind) {
    switch (kind) {
        case OpKind::leaf: return "leaf";
        case OpKind::matmul: return "matmul";
        case OpKind::add: return "add";
        case OpKind::mul: return "mul";
        case OpKind::scale: return "scale";
        case OpKind::reshape: return "reshape";
        case OpKind::transpose: return "transpose";
        case OpKind::concat: return "concat";
        case OpKind::gather_rows: return "gather_rows";
        case OpKind::layer_norm: return "layer_norm";
        case OpKind::softmax: return "softmax";
        case OpKind::gelu: return "gelu";
        case OpKind::sum: return "sum";
        case OpKind::mean: return "mean";
        case OpKind::squared_error: return "squared_error";
    }
    return "unknown";
}

template <typename T>
const Tensor<T>& Graph<T>::val(std::size_t id) const {
    const Node& n = nodes_.at(id);
    return n.external != nullptr ? *n.external : n.value;
}

template <typename T>
const Tensor<T>& Graph<T>::value(Var v) const {
    return val(v.id);
}

template <typename T>
Var Graph<T>::push(Node node) {
    if (assert_finite_ && node.external == nullptr && !node.value.all_finite()) {
        throw NumericsError(std::string("non-finite output from ") + std::string(op_name(node.kind)));
    }
    for (std::size_t in : node.inputs) {
        if (nodes_[in].requires_grad) {
            node.requires_grad = true;
        }
    }
    nodes_.push_back(std::move(node));
    return Var{nodes_.size() - 1};
}

template <typename T>
Var Graph<T>::constant(Tensor<T> value) {
    Node n;
    n.value = std::move(value);
    return push(std::move(n));
}

template <typename T>
Var Graph<T>::param(const ParamSet<T>& params, std::size_t id) {
    Node n;
    n.external = &params.tensor(id);
    n.param_id = id;
    n.requires_grad = params.trainable(id);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

template <typename T>
Var Graph<T>::forward_op(OpKind kind, std::span<const Var> in, const OpAttrs<T>& attrs) {
    auto need = [&](std::size_t count) {
        if (in.size() != count) {
            throw ContractError(std::string(op_name(kind)) + " expects " + std::to_string(count) +
                                " inputs");
        }
    };
    switch (kind) {
        case OpKind::leaf:
            throw ContractError("leaf nodes are created with constant() or param()");
        case OpKind::matmul: need(2); return matmul(in[0], in[1]);
        case OpKind::add: need(2); return add(in[0], in[1]);
        case OpKind::mul: need(2); return mul(in[0], in[1]);
        case OpKind::scale: need(1); return scale(in[0], attrs.factor);
        case OpKind::reshape: need(1); return reshape(in[0], attrs.shape);
        case OpKind::transpose: need(1); return transpose(in[0], attrs.perm);
        case OpKind::concat: return concat(in, attrs.axis);
        case OpKind::gather_rows: need(1); return gather_rows(in[0], attrs.rows);
        case OpKind::layer_norm: need(3); return layer_norm(in[0], in[1], in[2], attrs.eps);
        case OpKind::softmax: need(1); return softmax(in[0]);
        case OpKind::gelu: need(1); return gelu(in[0]);
        case OpKind::sum: need(1); return sum(in[0]);
        case OpKind::mean: need(1); return mean(in[0]);
        case OpKind::squared_error: need(2); return squared_error(in[0], in[1]);
    }
    throw ContractError("unknown op");
}

template <typename T>
Var Graph<T>::matmul(Var a, Var b) {
    const Tensor<T>& A = val(a.id);
    const Tensor<T>& B = val(b.id);
    Node n;
    n.kind = OpKind::matmul;
    n.inputs = {a.id, b.id};
    if (A.rank() == 2 && B.rank() == 2) {
        const std::size_t m = A.dim(0), k = A.dim(1), cols = B.dim(1);
        if (B.dim(0) != k) {
            throw ShapeError("matmul: " + shape_string(A.shape()) + " x " + shape_string(B.shape()));
        }
        n.value = Tensor<T>({m, cols});
        MutMap<T>(n.value.data().data(), m, cols).noalias() =
            ConstMap<T>(A.data().data(), m, k) * ConstMap<T>(B.data().data(), k, cols);
    } else if (A.rank() == 3 && B.rank() == 3) {
        const std::size_t batch = A.dim(0), m = A.dim(1), k = A.dim(2), cols = B.dim(2);
        if (B.dim(0) != batch || B.dim(1) != k) {
            throw ShapeError("matmul: " + shape_string(A.shape()) + " x " + shape_string(B.shape()));
        }
        n.value = Tensor<T>({batch, m, cols});
        for (std::size_t i = 0; i < batch; ++i) {
            MutMap<T>(n.value.data().data() + i * m * cols, m, cols).noalias() =
                ConstMap<T>(A.data().data() + i * m * k, m, k) *
                ConstMap<T>(B.data().data() + i * k * cols, k, cols);
        }
    } else {
        throw ShapeError("matmul: unsupported ranks " + shape_string(A.shape()) + " x " +
                         shape_string(B.shape()));
    }
    return push(std::move(n));
}

template <typename T>
Var Graph<T>::add(Var a, Var b) {
    const Tensor<T>& A = val(a.id);
    const Tensor<T>& B = val(b.id);
    const Broadcast mode = classify(A.shape(), B.shape(), "add");
    Node n;
    n.kind = OpKind::add;
    n.inputs = {a.id, b.id};
    n.value = Tensor<T>(A.shape());
    auto out = n.value.data();
    if (mode == Broadcast::last_axis) {
        const std::size_t width = B.size();
        for (std::size_t i = 0; i < out.size(); i += width) {
            for (std::size_t j = 0; j < width; ++j) {
                out[i + j] = A[i + j] + B[j];
            }
        }
    } else if (mode == Broadcast::scalar) {
        const T b = B[0];
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i] = A[i] + b;
        }
    } else {
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i] = A[i] + B[i];
        }
    }
    return push(std::move(n));
}

template <typename T>
Var Graph<T>::mul(Var a, Var b) {
    const Tensor<T>& A = val(a.id);
    const Tensor<T>& B = val(b.id);
    const Broadcast mode = classify(A.shape(), B.shape(), "mul");
    Node n;
    n.kind = OpKind::mul;
    n.inputs = {a.id, b.id};
    n.value = Tensor<T>(A.shape());
    auto out = n.value.data();
    if (mode == Broadcast::last_axis) {
        const std::size_t width = B.size();
        for (std::size_t i = 0; i < out.size(); i += width) {
            for (std::size_t j = 0; j < width; ++j) {
                out[i + j] = A[i + j] * B[j];
            }
        }
    } else if (mode == Broadcast::scalar) {
        const T b = B[0];
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i] = A[i] * b;
        }
    } else {
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i] = A[i] * B[i];
        }
    }
    return push(std::move(n));
}

template <typename T>
Var Graph<T>::scale(Var a, T factor) {
    const Tensor<T>& A = val(a.id);
    Node n;
    n.kind = OpKind::scale;
    n.inputs = {a.id};
    n.attrs.factor = factor;
    n.value = Tensor<T>(A.shape());
    auto out = n.value.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = A[i] * factor;
    }
    return push(std::move(n));
}

template <typename T>
Var Graph<T>::reshape(Var a, Shape shape) {
    Node n;
    n.kind = OpKind::reshape;
    n.inputs = {a.id};
    n.value = val(a.id).reshaped(shape);
    n.attrs.shape = std::move(shape);
    return push(std::move(n));
}

template <typename T>
Var Graph<T>::transpose(Var a, std::vector<std::size_t> perm) {
    const Tensor<T>& A = val(a.id);
    std::vector<std::size_t> check = perm;
    std::sort(check.begin(), check.end());
    for (std::size_t i = 0; i < check.size(); ++i) {
        if (check[i] != i) {
            throw ShapeError("transpose: invalid permutation");
        }
    }
    if (perm.size() != A.rank()) {
        throw ShapeError("transpose: permutation rank " + std::to_string(perm.size()) +
                         " for tensor " + shape_string(A.shape()));
    }
    Node n;
    n.kind = OpKind::transpose;
    n.inputs = {a.id};
    n.value = permute(A, perm);
    n.attrs.perm = std::move(perm);
    return push(std::move(n));
}

template <typename T>
Var Graph<T>::concat(std::span<const Var> parts, std::size_t axis) {
    if (parts.empty()) {
        throw ContractError("concat: no inputs");
    }
    const Shape& first = val(parts[0].id).shape();
    if (axis >= first.size()) {
        throw ShapeError("concat: axis out of range");
    }
    Shape out_shape = first;
    out_shape[axis] = 0;
    for (Var p : parts) {
        const Shape& s = val(p.id).shape();
        if (s.size() != first.size()) {
            throw ShapeError("concat: rank mismatch");
        }
        for (std::size_t k = 0; k < s.size(); ++k) {
            if (k != axis && s[k] != first[k]) {
                throw ShapeError("concat: " + shape_string(s) + " vs " + shape_string(first));
            }
        }
        out_shape[axis] += s[axis];
    }
    std::size_t outer = 1;
    for (std::size_t k = 0; k < axis; ++k) {
        outer *= first[k];
    }
    Node n;
    n.kind = OpKind::concat;
    n.attrs.axis = axis;
    n.value = Tensor<T>(out_shape);
    const std::size_t out_chunk = n.value.size() / std::max<std::size_t>(outer, 1);
    std::size_t col = 0;
    for (Var p : parts) {
        n.inputs.push_back(p.id);
        const Tensor<T>& P = val(p.id);
        const std::size_t chunk = P.size() / std::max<std::size_t>(outer, 1);
        for (std::size_t o = 0; o < outer; ++o) {
            std::copy_n(P.data().data() + o * chunk, chunk,
                        n.value.data().data() + o * out_chunk + col);
        }
        col += chunk;
    }
    return push(std::move(n));
}

template <typename T>
Var Graph<T>::gather_rows(Var a, std::vector<std::size_t> rows) {
    const Tensor<T>& A = val(a.id);
    if (A.rank() == 0) {
        throw ShapeError("gather_rows: scalar input");
    }
    const std::size_t width = A.dim(0) == 0 ? 0 : A.size() / A.dim(0);
    Shape out_shape = A.shape();
    out_shape[0] = rows.size();
    Node n;
    n.kind = OpKind::gather_rows;
    n.inputs = {a.id};
    n.value = Tensor<T>(out_shape);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r] >= A.dim(0)) {
            throw ShapeError("gather_rows: row " + std::to_string(rows[r]) + " of " +
                             std::to_string(A.dim(0)));
        }
        std::copy_n(A.data().data() + rows[r] * width, width, n.value.data().data() + r * width);
    }
    n.attrs.rows = std::move(rows);
    return push(std::move(n));
}

template <typename T>
Var Graph<T>::layer_norm(Var x, Var gamma, Var beta, T eps) {
    const Tensor<T>& X = val(x.id);
    const Tensor<T>& G = val(gamma.id);
    const Tensor<T>& B = val(beta.id);
    if (X.rank() == 0 || G.shape() != Shape{X.shape().back()} || B.shape() != G.shape()) {
        throw ShapeError("layer_norm: " + shape_string(X.shape()) + " with gamma " +
                         shape_string(G.shape()));
    }
    const std::size_t width = X.shape().back();
    const std::size_t rows = X.size() / width;
    Node n;
    n.kind = OpKind::layer_norm;
    n.inputs = {x.id, gamma.id, beta.id};
    n.attrs.eps = eps;
    n.value = Tensor<T>(X.shape());
    n.saved.resize(2 * rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* in = X.data().data() + r * width;
        T* out = n.value.data().data() + r * width;
        T mu = T(0);
        for (std::size_t j = 0; j < width; ++j) {
            mu += in[j];
        }
        mu /= T(width);
        T var = T(0);
        for (std::size_t j = 0; j < width; ++j) {
            var += (in[j] - mu) * (in[j] - mu);
        }
        var /= T(width);
        const T rstd = T(1) / std::sqrt(var + eps);
        for (std::size_t j = 0; j < width; ++j) {
            out[j] = (in[j] - mu) * rstd * G[j] + B[j];
        }
        n.saved[r] = mu;
        n.saved[rows + r] = rstd;
    }
    return push(std::move(n));
}

template <typename T>
Var Graph<T>::softmax(Var x) {
    const Tensor<T>& X = val(x.id);
    if (X.rank() == 0) {
        throw ShapeError("softmax: scalar input");
    }
    const std::size_t width = X.shape().back();
    const std::size_t rows = width == 0 ? 0 : X.size() / width;
    Node n;
    n.kind = OpKind::softmax;
    n.inputs = {x.id};
    n.value = Tensor<T>(X.shape());
    // Shift every row by its peak, exponentiate the whole buffer at once, then normalize.
    for (std::size_t r = 0; r < rows; ++r) {
        const T* in = X.data().data() + r * width;
        T* out = n.value.data().data() + r * width;
        const T peak = *std::max_element(in, in + width);
        for (std::size_t j = 0; j < width; ++j) {
            out[j] = in[j] - peak;
        }
    }
    chunked_apply(n.value.data().data(), n.value.data().data(), n.value.size(),
                  [](const Chunk<T>& v) -> Chunk<T> { return v.exp(); });
    for (std::size_t r = 0; r < rows; ++r) {
        T* out = n.value.data().data() + r * width;
        T total = T(0);
        for (std::size_t j = 0; j < width; ++j) {
            total += out[j];
        }
        const T inv = T(1) / total;
        for (std::size_t j = 0; j < width; ++j) {
            out[j] *= inv;
        }
    }
    return push(std::move(n));
}

template <typename T>
Var Graph<T>::gelu(Var x) {
    const Tensor<T>& X = val(x.id);
    Node n;
    n.kind = OpKind::gelu;
    n.inputs = {x.id};
    n.value = Tensor<T>(X.shape());
    gelu_values(X, n.value);
    return push(std::move(n));
}

template <typename T>
Var Graph<T>::sum(Var x) {
    const Tensor<T>& X = val(x.id);
    T total = T(0);
    for (T v : X.data()) {
        total += v;
    }
    Node n;
    n.kind = OpKind::sum;
    n.inputs = {x.id};
    n.value = Tensor<T>::scalar(total);
    return push(std::move(n));
}

template <typename T>
Var Graph<T>::mean(Var x) {
    const Tensor<T>& X = val(x.id);
    if (X.size() == 0) {
        throw ShapeError("mean: empty tensor");
    }
    T total = T(0);
    for (T v : X.data()) {
        total += v;
    }
    Node n;
    n.kind = OpKind::mean;
    n.inputs = {x.id};
    n.value = Tensor<T>::scalar(total / T(X.size()));
    return push(std::move(n));
}

template <typename T>
Var Graph<T>::squared_error(Var a, Var b) {
    const Tensor<T>& A = val(a.id);
    const Tensor<T>& B = val(b.id);
    if (A.shape() != B.shape()) {
        throw ShapeError("squared_error: " + shape_string(A.shape()) + " vs " +
                         shape_string(B.shape()));
    }
    if (A.size() == 0) {
        throw ShapeError("squared_error: empty tensors");
    }
    T total = T(0);
    for (std::size_t i = 0; i < A.size(); ++i) {
        const T d = A[i] - B[i];
        total += d * d;
    }
    Node n;
    n.kind = OpKind::squared_error;
    n.inputs = {a.id, b.id};
    n.value = Tensor<T>::scalar(total / T(A.size()));
    return push(std::move(n));
}

// ----------------------------------------------------------------- backward

template <typename T>
GradientMap<T> Graph<T>::backward(Var loss, const ParamSet<T>& params) const {
    if (loss.id >= nodes_.size()) {
        throw ContractError("backward: unknown loss node");
    }
    if (val(loss.id).size() != 1) {
        throw ContractError("backward: loss must be scalar, got " +
                            shape_string(val(loss.id).shape()));
    }
    GradientMap<T> result(params);
    std::vector<Tensor<T>> grads(loss.id + 1, Tensor<T>(Shape{0}));
    grads[loss.id] = Tensor<T>(val(loss.id).shape(), T(1));
    for (std::size_t id = loss.id + 1; id-- > 0;) {
        const Node& node = nodes_[id];
        if (!node.requires_grad || grads[id].shape() != val(id).shape()) {
            continue;
        }
        if (node.kind == OpKind::leaf) {
            if (node.param_id != npos) {
                if (node.param_id >= result.size() ||
                    params.tensor(node.param_id).shape() != grads[id].shape()) {
                    throw ContractError("backward: parameter set does not match the graph");
                }
                add_into(result[node.param_id], grads[id]);
            }
        } else {
            backward_node(node, grads[id], grads);
        }
        grads[id] = Tensor<T>(Shape{0});
    }
    return result;
}

template <typename T>
void Graph<T>::backward_node(const Node& node, const Tensor<T>& g,
                             std::vector<Tensor<T>>& grads) const {
    auto needs = [&](std::size_t slot) { return nodes_[node.inputs[slot]].requires_grad; };
    auto grad_of = [&](std::size_t slot) -> Tensor<T>& {
        const std::size_t id = node.inputs[slot];
        if (grads[id].shape() != val(id).shape()) {
            grads[id] = Tensor<T>(val(id).shape());
        }
        return grads[id];
    };

    switch (node.kind) {
        case OpKind::leaf:
            break;
        case OpKind::matmul: {
            const Tensor<T>& A = val(node.inputs[0]);
            const Tensor<T>& B = val(node.inputs[1]);
            const bool batched = A.rank() == 3;
            const std::size_t batch = batched ? A.dim(0) : 1;
            const std::size_t m = A.dim(A.rank() - 2), k = A.dim(A.rank() - 1);
            const std::size_t cols = B.dim(B.rank() - 1);
            if (needs(0)) {
                Tensor<T>& dA = grad_of(0);
                for (std::size_t i = 0; i < batch; ++i) {
                    MutMap<T>(dA.data().data() + i * m * k, m, k).noalias() +=
                        ConstMap<T>(g.data().data() + i * m * cols, m, cols) *
                        ConstMap<T>(B.data().data() + i * k * cols, k, cols).transpose();
                }
            }
            if (needs(1)) {
                Tensor<T>& dB = grad_of(1);
                for (std::size_t i = 0; i < batch; ++i) {
                    MutMap<T>(dB.data().data() + i * k * cols, k, cols).noalias() +=
                        ConstMap<T>(A.data().data() + i * m * k, m, k).transpose() *
                        ConstMap<T>(g.data().data() + i * m * cols, m, cols);
                }
            }
            break;
        }
        case OpKind::add: {
            const Broadcast mode = classify(val(node.inputs[0]).shape(), val(node.inputs[1]).shape(), "add");
            if (needs(0)) {
                add_into(grad_of(0), g);
            }
            if (needs(1)) {
                reduce_into(grad_of(1), g.buffer(), mode);
            }
            break;
        }
        case OpKind::mul: {
            const Tensor<T>& A = val(node.inputs[0]);
            const Tensor<T>& B = val(node.inputs[1]);
            const Broadcast mode = classify(A.shape(), B.shape(), "mul");
            if (needs(0)) {
                Tensor<T>& dA = grad_of(0);
                if (mode == Broadcast::same) {
                    for (std::size_t i = 0; i < g.size(); ++i) {
                        dA[i] += g[i] * B[i];
                    }
                } else if (mode == Broadcast::scalar) {
                    const T b = B[0];
                    for (std::size_t i = 0; i < g.size(); ++i) {
                        dA[i] += g[i] * b;
                    }
                } else {
                    const std::size_t width = B.size();
                    for (std::size_t i = 0; i < g.size(); i += width) {
                        for (std::size_t j = 0; j < width; ++j) {
                            dA[i + j] += g[i + j] * B[j];
                        }
                    }
                }
            }
            if (needs(1)) {
                std::vector<T> full(g.size());
                for (std::size_t i = 0; i < g.size(); ++i) {
                    full[i] = g[i] * A[i];
                }
                reduce_into(grad_of(1), full, mode);
            }
            break;
        }
        case OpKind::scale:
            if (needs(0)) {
                add_into(grad_of(0), g, node.attrs.factor);
            }
            break;
        case OpKind::reshape:
            if (needs(0)) {
                auto d = grad_of(0).data();
                for (std::size_t i = 0; i < d.size(); ++i) {
                    d[i] += g[i];
                }
            }
            break;
        case OpKind::transpose:
            if (needs(0)) {
                const auto& perm = node.attrs.perm;
                std::vector<std::size_t> inverse(perm.size());
                for (std::size_t k = 0; k < perm.size(); ++k) {
                    inverse[perm[k]] = k;
                }
                add_into(grad_of(0), permute(g, inverse));
            }
            break;
        case OpKind::concat: {
            const Shape& out_shape = node.value.shape();
            std::size_t outer = 1;
            for (std::size_t k = 0; k < node.attrs.axis; ++k) {
                outer *= out_shape[k];
            }
            outer = std::max<std::size_t>(outer, 1);
            const std::size_t out_chunk = node.value.size() / outer;
            std::size_t col = 0;
            for (std::size_t slot = 0; slot < node.inputs.size(); ++slot) {
                const std::size_t chunk = val(node.inputs[slot]).size() / outer;
                if (needs(slot)) {
                    Tensor<T>& d = grad_of(slot);
                    for (std::size_t o = 0; o < outer; ++o) {
                        for (std::size_t j = 0; j < chunk; ++j) {
                            d[o * chunk + j] += g[o * out_chunk + col + j];
                        }
                    }
                }
                col += chunk;
            }
            break;
        }
        case OpKind::gather_rows:
            if (needs(0)) {
                Tensor<T>& d = grad_of(0);
                const std::size_t width = d.dim(0) == 0 ? 0 : d.size() / d.dim(0);
                const auto& rows = node.attrs.rows;
                for (std::size_t r = 0; r < rows.size(); ++r) {
                    for (std::size_t j = 0; j < width; ++j) {
                        d[rows[r] * width + j] += g[r * width + j];
                    }
                }
            }
            break;
        case OpKind::layer_norm: {
            const Tensor<T>& X = val(node.inputs[0]);
            const Tensor<T>& G = val(node.inputs[1]);
            const std::size_t width = X.shape().back();
            const std::size_t rows = X.size() / width;
            Tensor<T>* dX = needs(0) ? &grad_of(0) : nullptr;
            Tensor<T>* dG = needs(1) ? &grad_of(1) : nullptr;
            Tensor<T>* dB = needs(2) ? &grad_of(2) : nullptr;
            std::vector<T> xhat(width), dxhat(width);
            for (std::size_t r = 0; r < rows; ++r) {
                const T mu = node.saved[r];
                const T rstd = node.saved[rows + r];
                const T* in = X.data().data() + r * width;
                const T* gr = g.data().data() + r * width;
                T mean_d = T(0), mean_dx = T(0);
                for (std::size_t j = 0; j < width; ++j) {
                    xhat[j] = (in[j] - mu) * rstd;
                    dxhat[j] = gr[j] * G[j];
                    mean_d += dxhat[j];
                    mean_dx += dxhat[j] * xhat[j];
                }
                mean_d /= T(width);
                mean_dx /= T(width);
                for (std::size_t j = 0; j < width; ++j) {
                    if (dX != nullptr) {
                        (*dX)[r * width + j] += rstd * (dxhat[j] - mean_d - xhat[j] * mean_dx);
                    }
                    if (dG != nullptr) {
                        (*dG)[j] += gr[j] * xhat[j];
                    }
                    if (dB != nullptr) {
                        (*dB)[j] += gr[j];
                    }
                }
            }
            break;
        }
        case OpKind::softmax:
            if (needs(0)) {
                Tensor<T>& d = grad_of(0);
                const Tensor<T>& Y = node.value;
                const std::size_t width = Y.shape().back();
                for (std::size_t r = 0; width > 0 && r < Y.size() / width; ++r) {
                    const T* y = Y.data().data() + r * width;
                    const T* gr = g.data().data() + r * width;
                    T dot = T(0);
                    for (std::size_t j = 0; j < width; ++j) {
                        dot += gr[j] * y[j];
                    }
                    for (std::size_t j = 0; j < width; ++j) {
                        d[r * width + j] += y[j] * (gr[j] - dot);
                    }
                }
            }
            break;
        case OpKind::gelu:
            if (needs(0)) {
                Tensor<T>& d = grad_of(0);
                gelu_slopes_into(val(node.inputs[0]), g, d);
            }
            break;
        case OpKind::sum:
            if (needs(0)) {
                for (T& v : grad_of(0).data()) {
                    v += g[0];
                }
            }
            break;
        case OpKind::mean:
            if (needs(0)) {
                Tensor<T>& d = grad_of(0);
                const T share = g[0] / T(d.size());
                for (T& v : d.data()) {
                    v += share;
                }
            }
            break;
        case OpKind::squared_error: {
            const Tensor<T>& A = val(node.inputs[0]);
            const Tensor<T>& B = val(node.inputs[1]);
            const T factor = T(2) * g[0] / T(A.size());
            if (needs(0)) {
                Tensor<T>& d = grad_of(0);
                for (std::size_t i = 0; i < A.size(); ++i) {
                    d[i] += factor * (A[i] - B[i]);
                }
            }
            if (needs(1)) {
                Tensor<T>& d = grad_of(1);
                for (std::size_t i = 0; i < A.size(); ++i) {
                    d[i] -= factor * (A[i] - B[i]);
                }
            }
            break;
        }
    }
}

template class ParamSet<float>;
template class ParamSet<double>;
template class GradientMap<float>;
template class GradientMap<double>;
template class Graph<float>;
template class Graph<double>;

}  // namespace maskdm::compute
