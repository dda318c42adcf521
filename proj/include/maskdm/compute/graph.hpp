#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "maskdm/compute/tensor.hpp"

namespace maskdm::compute {

inline constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();

// Named, ordered collection of learnable tensors (theta). Parameters are
// addressed by their insertion index everywhere in the engine.
template <typename T>
class ParamSet {
public:
    std::size_t add(std::string name, Tensor<T> init, bool trainable = true);

    std::size_t size() const noexcept { return tensors_.size(); }
    const std::string& name(std::size_t id) const { return names_.at(id); }
    bool trainable(std::size_t id) const { return trainable_.at(id) != 0; }
    Tensor<T>& tensor(std::size_t id) { return tensors_.at(id); }
    const Tensor<T>& tensor(std::size_t id) const { return tensors_.at(id); }

    // Index of `name`, or npos.
    std::size_t find(std::string_view name) const;

    std::size_t element_count() const;

    template <typename U>
    ParamSet<U> cast() const {
        ParamSet<U> out;
        for (std::size_t i = 0; i < size(); ++i) {
            out.add(names_[i], tensors_[i].template cast<U>(), trainable(i));
        }
        return out;
    }

    friend bool operator==(const ParamSet& a, const ParamSet& b) {
        return a.names_ == b.names_ && a.tensors_ == b.tensors_ && a.trainable_ == b.trainable_;
    }

private:
    std::vector<std::string> names_;
    std::vector<Tensor<T>> tensors_;
    std::vector<std::uint8_t> trainable_;
};

// Gradient per parameter id; every entry has its parameter's shape.
template <typename T>
class GradientMap {
public:
    GradientMap() = default;
    explicit GradientMap(const ParamSet<T>& params);

    std::size_t size() const noexcept { return grads_.size(); }
    Tensor<T>& operator[](std::size_t id) { return grads_.at(id); }
    const Tensor<T>& operator[](std::size_t id) const { return grads_.at(id); }

    double global_norm() const;
    void scale(T factor);

private:
    std::vector<Tensor<T>> grads_;
};

enum class OpKind : std::uint8_t {
    leaf,
    matmul,
    add,
    mul,
    scale,
    reshape,
    transpose,
    concat,
    gather_rows,
    layer_norm,
    softmax,
    gelu,
    sum,
    mean,
    squared_error,
};

std::string_view op_name(OpKind kind);

// Op-specific attributes. Only the fields relevant to a kind are read.
template <typename T>
struct OpAttrs {
    T factor = T(1);                  // scale
    Shape shape;                      // reshape
    std::vector<std::size_t> perm;    // transpose
    std::size_t axis = 0;             // concat
    std::vector<std::size_t> rows;    // gather_rows
    T eps = T(1e-5);                  // layer_norm
};

struct Var {
    std::size_t id = npos;
};

// Reverse-mode tape. Every operation appends a node holding its output and
// whatever it needs for the backward pass; inputs always precede the node
// that consumes them. Graphs are single-use and single-threaded. Parameters
// are referenced, not copied, so the ParamSet must outlive the graph and
// must not be mutated while the graph is alive.
template <typename T>
class Graph {
public:
    explicit Graph(bool assert_finite = false) : assert_finite_(assert_finite) {}

    Var constant(Tensor<T> value);
    // Reference to parameter `id`; records gradients only if the parameter is trainable.
    Var param(const ParamSet<T>& params, std::size_t id);

    Var forward_op(OpKind kind, std::span<const Var> inputs, const OpAttrs<T>& attrs = {});

    // [M,K]x[K,N] or batched [B,M,K]x[B,K,N].
    Var matmul(Var a, Var b);
    // b may match a's shape, be a single element, or be a vector over a's last axis.
    Var add(Var a, Var b);
    Var mul(Var a, Var b);
    Var scale(Var a, T factor);
    Var reshape(Var a, Shape shape);
    Var transpose(Var a, std::vector<std::size_t> perm);
    Var concat(std::span<const Var> parts, std::size_t axis);
    Var gather_rows(Var a, std::vector<std::size_t> rows);
    Var layer_norm(Var x, Var gamma, Var beta, T eps = T(1e-5));
    Var softmax(Var x);
    Var gelu(Var x);
    Var sum(Var x);
    Var mean(Var x);
    // mean((a - b)^2) over all elements.
    Var squared_error(Var a, Var b);

    const Tensor<T>& value(Var v) const;
    bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
    OpKind kind(Var v) const { return nodes_.at(v.id).kind; }
    const std::vector<std::size_t>& inputs(Var v) const { return nodes_.at(v.id).inputs; }
    std::size_t size() const noexcept { return nodes_.size(); }

    // d(loss)/d(theta) for every parameter of `params`; parameters not on a
    // path to `loss` receive zeros.
    GradientMap<T> backward(Var loss, const ParamSet<T>& params) const;

private:
    struct Node {
        OpKind kind = OpKind::leaf;
        std::vector<std::size_t> inputs;
        Tensor<T> value;
        const Tensor<T>* external = nullptr;
        std::size_t param_id = npos;
        bool requires_grad = false;
        OpAttrs<T> attrs;
        std::vector<T> saved;
    };

    Var push(Node node);
    const Tensor<T>& val(std::size_t id) const;
    void backward_node(const Node& node, const Tensor<T>& grad, std::vector<Tensor<T>>& grads) const;

    std::vector<Node> nodes_;
    bool assert_finite_;
};

extern template class ParamSet<float>;
extern template class ParamSet<double>;
extern template class GradientMap<float>;
extern template class GradientMap<double>;
extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace maskdm::compute
