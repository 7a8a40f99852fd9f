#pragma once

// Dense reverse-mode automatic differentiation over row-major matrices.
//
// A Graph is built eagerly: every op computes its value as soon as all of its
// operands have one. Inputs created without a value are placeholders; such
// graphs are run with Graph::evaluate once the placeholders are bound.
// Gradients are produced by Graph::backprop from a scalar (1x1) root.

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace triret {

class Tensor {
public:
    Tensor() = default;
    Tensor(std::size_t rows, std::size_t cols, double fill = 0.0);
    Tensor(std::size_t rows, std::size_t cols, std::vector<double> data);

    static Tensor scalar(double v) { return Tensor(1, 1, v); }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    std::vector<std::size_t> shape() const { return {rows_, cols_}; }
    bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }

    // Value of a 1x1 tensor.
    double item() const;

    std::string shape_str() const;

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

/// Raised when operand shapes are incompatible; the message names both shapes.
class ShapeError : public std::invalid_argument {
public:
    ShapeError(const std::string& op, const Tensor& a, const Tensor& b);
};

using NodeId = std::size_t;

enum class OpKind {
    input,
    matmul,
    add,          // same shape, or matrix + 1xn row vector
    sub,          // same shape
    multiply,     // elementwise, same shape
    scale,        // x * constant
    exp,
    log,
    gelu,
    logsumexp_rows,  // BxN -> Bx1, max-subtracted
    sum,             // -> 1x1
    sum_rows,        // BxN -> Bx1
    mean,            // -> 1x1
    transpose,
    concat_cols,
    l2_normalize,    // per row
    stop_gradient,
    gather_rows,     // out[i] = x[index[i]]
};

const char* op_name(OpKind kind);

using Bindings = std::map<std::string, Tensor>;
using Gradients = std::map<std::string, Tensor>;

struct EvalOptions {
    // Stop-gradient nodes keep the value cached by the previous evaluation
    // instead of re-reading their operand. Used by finite-difference checks
    // so the teacher branch stays fixed under perturbation.
    bool freeze_stop_gradients = false;
    // Visit operands last-to-first when building the topological order.
    bool reverse_operand_order = false;
};

class Graph {
public:
    static constexpr double kNormEpsilon = 1e-12;

    NodeId input(std::string name, Tensor value);
    NodeId input(std::string name);  // placeholder, bound at evaluate()

    NodeId matmul(NodeId a, NodeId b);
    NodeId add(NodeId a, NodeId b);
    NodeId sub(NodeId a, NodeId b);
    NodeId multiply(NodeId a, NodeId b);
    NodeId scale(NodeId x, double factor);
    NodeId exp(NodeId x);
    NodeId log(NodeId x);
    NodeId gelu(NodeId x);
    NodeId logsumexp_rows(NodeId x);
    NodeId sum(NodeId x);
    NodeId sum_rows(NodeId x);
    NodeId mean(NodeId x);
    NodeId transpose(NodeId x);
    NodeId concat_cols(NodeId a, NodeId b);
    NodeId l2_normalize(NodeId x);
    NodeId stop_gradient(NodeId x);
    NodeId gather_rows(NodeId x, std::vector<std::size_t> index);

    // Redirects operand `slot` of `node` to `operand`. The graph is re-validated
    // by the next evaluate(), which rejects cycles.
    void rewire(NodeId node, std::size_t slot, NodeId operand);

    // Recomputes every node reachable from `root` in topological order.
    // `inputs` overrides or binds input leaves by name; a reachable
    // placeholder left unbound is an error.
    const Tensor& evaluate(NodeId root, const Bindings& inputs = {}, EvalOptions options = {});

    // d(root)/d(input) for every named input reachable from root. The root
    // must be a scalar that was the last evaluated root or was built eagerly.
    Gradients backprop(NodeId root);

    bool has_value(NodeId id) const;
    const Tensor& value(NodeId id) const;
    // Gradient of the last backprop root w.r.t. this node; zero if unreached.
    const Tensor& grad(NodeId id) const;
    OpKind kind(NodeId id) const { return node(id).kind; }
    const std::string& input_name(NodeId id) const;
    std::optional<NodeId> find_input(const std::string& name) const;
    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        OpKind kind;
        std::vector<NodeId> operands;
        double factor = 0.0;
        std::vector<std::size_t> index;
        std::string name;
        std::optional<Tensor> value;
        Tensor grad;
    };

    NodeId push(Node n);
    const Node& node(NodeId id) const;
    Node& node(NodeId id);
    Tensor forward(const Node& n) const;
    std::vector<NodeId> topo_order(NodeId root, bool reverse_operands) const;

    std::vector<Node> nodes_;
    std::map<std::string, NodeId> inputs_by_name_;
    std::vector<NodeId> last_order_;
    std::optional<NodeId> last_root_;
};

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::string worst_input;
    std::map<std::string, double> rel_error;  // per input leaf
    bool passed = false;
};

// Compares backprop against central finite differences for every input leaf
// reachable from the scalar `root` (or only those listed in `only`).
// Relative error per leaf is ||analytic - numeric|| / max(||analytic||, ||numeric||),
// taken as 0 when both norms are below 1e-12. Stop-gradient branches are frozen
// while perturbing. Failures are reported, never thrown.
GradCheckReport grad_check(Graph& graph, NodeId root, double tolerance, double step = 1e-5,
                           std::span<const std::string> only = {});

}  // namespace triret
