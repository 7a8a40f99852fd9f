#include "triret/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <tuple>
#include <utility>

#include <fmt/format.h>

namespace triret {

Tensor::Tensor(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw std::invalid_argument(fmt::format("tensor [{}x{}] built from {} values", rows_, cols_,
                                                data_.size()));
    }
}

double Tensor::item() const {
    if (rows_ != 1 || cols_ != 1) {
        throw std::invalid_argument("item() on non-scalar tensor " + shape_str());
    }
    return data_[0];
}

std::string Tensor::shape_str() const { return fmt::format("[{}x{}]", rows_, cols_); }

ShapeError::ShapeError(const std::string& op, const Tensor& a, const Tensor& b)
    : std::invalid_argument(
          fmt::format("{}: shape mismatch {} vs {}", op, a.shape_str(), b.shape_str())) {}

const char* op_name(OpKind kind) {
    switch (kind) {
        case OpKind::input: return "input";
        case OpKind::matmul: return "matmul";
        case OpKind::add: return "add";
        case OpKind::sub: return "sub";
        case OpKind::multiply: return "multiply";
        case OpKind::scale: return "scale";
        case OpKind::exp: return "exp";
        case OpKind::log: return "log";
        case OpKind::gelu: return "gelu";
        case OpKind::logsumexp_rows: return "logsumexp_rows";
        case OpKind::sum: return "sum";
        case OpKind::sum_rows: return "sum_rows";
        case OpKind::mean: return "mean";
        case OpKind::transpose: return "transpose";
        case OpKind::concat_cols: return "concat_cols";
        case OpKind::l2_normalize: return "l2_normalize";
        case OpKind::stop_gradient: return "stop_gradient";
        case OpKind::gather_rows: return "gather_rows";
    }
    return "?";
}

namespace {

Tensor matmul_values(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows()) throw ShapeError("matmul", a, b);
    Tensor out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto orow = out.row(i);
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            auto brow = b.row(k);
            for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += aik * brow[j];
        }
    }
    return out;
}

Tensor transpose_values(const Tensor& x) {
    Tensor out(x.cols(), x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < x.cols(); ++j) out(j, i) = x(i, j);
    return out;
}

template <class F>
Tensor map_values(const Tensor& x, F f) {
    Tensor out = x;
    for (double& v : out.data()) v = f(v);
    return out;
}

template <class F>
Tensor zip_values(const Tensor& a, const Tensor& b, F f) {
    Tensor out = a;
    auto bd = b.data();
    auto od = out.data();
    for (std::size_t i = 0; i < od.size(); ++i) od[i] = f(od[i], bd[i]);
    return out;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }
double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

void require_finite(const Tensor& t, const char* op) {
    for (double v : t.data()) {
        if (!std::isfinite(v)) throw std::overflow_error(fmt::format("{}: non-finite result", op));
    }
}

}  // namespace

NodeId Graph::push(Node n) {
    for (NodeId o : n.operands) {
        if (o >= nodes_.size()) throw std::out_of_range(fmt::format("unknown node id {}", o));
    }
    const bool ready = std::all_of(n.operands.begin(), n.operands.end(),
                                   [&](NodeId o) { return nodes_[o].value.has_value(); });
    if (n.kind != OpKind::input && ready) n.value = forward(n);
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
}

const Graph::Node& Graph::node(NodeId id) const {
    if (id >= nodes_.size()) throw std::out_of_range(fmt::format("unknown node id {}", id));
    return nodes_[id];
}

Graph::Node& Graph::node(NodeId id) {
    if (id >= nodes_.size()) throw std::out_of_range(fmt::format("unknown node id {}", id));
    return nodes_[id];
}

NodeId Graph::input(std::string name, Tensor value) {
    if (inputs_by_name_.contains(name)) throw std::invalid_argument("duplicate input name: " + name);
    Node n{.kind = OpKind::input, .name = name};
    n.value = std::move(value);
    NodeId id = push(std::move(n));
    inputs_by_name_[nodes_[id].name] = id;
    return id;
}

NodeId Graph::input(std::string name) {
    if (inputs_by_name_.contains(name)) throw std::invalid_argument("duplicate input name: " + name);
    NodeId id = push(Node{.kind = OpKind::input, .name = name});
    inputs_by_name_[nodes_[id].name] = id;
    return id;
}

NodeId Graph::matmul(NodeId a, NodeId b) { return push({.kind = OpKind::matmul, .operands = {a, b}}); }
NodeId Graph::add(NodeId a, NodeId b) { return push({.kind = OpKind::add, .operands = {a, b}}); }
NodeId Graph::sub(NodeId a, NodeId b) { return push({.kind = OpKind::sub, .operands = {a, b}}); }
NodeId Graph::multiply(NodeId a, NodeId b) {
    return push({.kind = OpKind::multiply, .operands = {a, b}});
}
NodeId Graph::scale(NodeId x, double factor) {
    return push({.kind = OpKind::scale, .operands = {x}, .factor = factor});
}
NodeId Graph::exp(NodeId x) { return push({.kind = OpKind::exp, .operands = {x}}); }
NodeId Graph::log(NodeId x) { return push({.kind = OpKind::log, .operands = {x}}); }
NodeId Graph::gelu(NodeId x) { return push({.kind = OpKind::gelu, .operands = {x}}); }
NodeId Graph::logsumexp_rows(NodeId x) {
    return push({.kind = OpKind::logsumexp_rows, .operands = {x}});
}
NodeId Graph::sum(NodeId x) { return push({.kind = OpKind::sum, .operands = {x}}); }
NodeId Graph::sum_rows(NodeId x) { return push({.kind = OpKind::sum_rows, .operands = {x}}); }
NodeId Graph::mean(NodeId x) { return push({.kind = OpKind::mean, .operands = {x}}); }
NodeId Graph::transpose(NodeId x) { return push({.kind = OpKind::transpose, .operands = {x}}); }
NodeId Graph::concat_cols(NodeId a, NodeId b) {
    return push({.kind = OpKind::concat_cols, .operands = {a, b}});
}
NodeId Graph::l2_normalize(NodeId x) { return push({.kind = OpKind::l2_normalize, .operands = {x}}); }
NodeId Graph::stop_gradient(NodeId x) {
    return push({.kind = OpKind::stop_gradient, .operands = {x}});
}
NodeId Graph::gather_rows(NodeId x, std::vector<std::size_t> index) {
    return push({.kind = OpKind::gather_rows, .operands = {x}, .index = std::move(index)});
}

void Graph::rewire(NodeId id, std::size_t slot, NodeId operand) {
    Node& n = node(id);
    if (slot >= n.operands.size()) {
        throw std::out_of_range(fmt::format("node {} has no operand slot {}", id, slot));
    }
    node(operand);
    n.operands[slot] = operand;
    n.value.reset();
    last_root_.reset();
}

bool Graph::has_value(NodeId id) const { return node(id).value.has_value(); }

const Tensor& Graph::value(NodeId id) const {
    const Node& n = node(id);
    if (!n.value) throw std::logic_error(fmt::format("node {} ({}) has no value", id, op_name(n.kind)));
    return *n.value;
}

const Tensor& Graph::grad(NodeId id) const { return node(id).grad; }

const std::string& Graph::input_name(NodeId id) const {
    const Node& n = node(id);
    if (n.kind != OpKind::input) throw std::invalid_argument(fmt::format("node {} is not an input", id));
    return n.name;
}

std::optional<NodeId> Graph::find_input(const std::string& name) const {
    auto it = inputs_by_name_.find(name);
    if (it == inputs_by_name_.end()) return std::nullopt;
    return it->second;
}

Tensor Graph::forward(const Node& n) const {
    auto in = [&](std::size_t slot) -> const Tensor& { return *nodes_[n.operands[slot]].value; };
    switch (n.kind) {
        case OpKind::input:
            return *n.value;
        case OpKind::matmul:
            return matmul_values(in(0), in(1));
        case OpKind::add: {
            const Tensor& a = in(0);
            const Tensor& b = in(1);
            if (a.same_shape(b)) return zip_values(a, b, [](double x, double y) { return x + y; });
            if (b.rows() == 1 && b.cols() == a.cols()) {
                Tensor out = a;
                for (std::size_t i = 0; i < out.rows(); ++i) {
                    auto r = out.row(i);
                    for (std::size_t j = 0; j < r.size(); ++j) r[j] += b(0, j);
                }
                return out;
            }
            throw ShapeError("add", a, b);
        }
        case OpKind::sub:
            if (!in(0).same_shape(in(1))) throw ShapeError("sub", in(0), in(1));
            return zip_values(in(0), in(1), [](double x, double y) { return x - y; });
        case OpKind::multiply:
            if (!in(0).same_shape(in(1))) throw ShapeError("multiply", in(0), in(1));
            return zip_values(in(0), in(1), [](double x, double y) { return x * y; });
        case OpKind::scale: {
            const double f = n.factor;
            return map_values(in(0), [f](double x) { return x * f; });
        }
        case OpKind::exp: {
            Tensor out = map_values(in(0), [](double x) { return std::exp(x); });
            require_finite(out, "exp");
            return out;
        }
        case OpKind::log:
            for (double v : in(0).data()) {
                if (!(v > 0.0)) throw std::domain_error("log: non-positive operand");
            }
            return map_values(in(0), [](double x) { return std::log(x); });
        case OpKind::gelu:
            return map_values(in(0), [](double x) { return x * normal_cdf(x); });
        case OpKind::logsumexp_rows: {
            const Tensor& x = in(0);
            if (x.cols() == 0) throw std::invalid_argument("logsumexp_rows: empty rows");
            Tensor out(x.rows(), 1);
            for (std::size_t i = 0; i < x.rows(); ++i) {
                auto r = x.row(i);
                const double m = *std::max_element(r.begin(), r.end());
                double acc = 0.0;
                for (double v : r) acc += std::exp(v - m);
                out(i, 0) = m + std::log(acc);
            }
            return out;
        }
        case OpKind::sum: {
            double acc = 0.0;
            for (double v : in(0).data()) acc += v;
            return Tensor::scalar(acc);
        }
        case OpKind::sum_rows: {
            const Tensor& x = in(0);
            Tensor out(x.rows(), 1);
            for (std::size_t i = 0; i < x.rows(); ++i) {
                double acc = 0.0;
                for (double v : x.row(i)) acc += v;
                out(i, 0) = acc;
            }
            return out;
        }
        case OpKind::mean: {
            const Tensor& x = in(0);
            if (x.size() == 0) throw std::invalid_argument("mean: empty tensor");
            double acc = 0.0;
            for (double v : x.data()) acc += v;
            return Tensor::scalar(acc / static_cast<double>(x.size()));
        }
        case OpKind::transpose:
            return transpose_values(in(0));
        case OpKind::concat_cols: {
            const Tensor& a = in(0);
            const Tensor& b = in(1);
            if (a.rows() != b.rows()) throw ShapeError("concat_cols", a, b);
            Tensor out(a.rows(), a.cols() + b.cols());
            for (std::size_t i = 0; i < a.rows(); ++i) {
                auto r = out.row(i);
                std::copy(a.row(i).begin(), a.row(i).end(), r.begin());
                std::copy(b.row(i).begin(), b.row(i).end(), r.begin() + a.cols());
            }
            return out;
        }
        case OpKind::l2_normalize: {
            Tensor out = in(0);
            for (std::size_t i = 0; i < out.rows(); ++i) {
                auto r = out.row(i);
                double ss = 0.0;
                for (double v : r) ss += v * v;
                const double norm = std::sqrt(ss);
                if (norm <= kNormEpsilon) throw std::domain_error("degenerate embedding");
                for (double& v : r) v /= norm;
            }
            return out;
        }
        case OpKind::stop_gradient:
            return in(0);
        case OpKind::gather_rows: {
            const Tensor& x = in(0);
            Tensor out(n.index.size(), x.cols());
            for (std::size_t i = 0; i < n.index.size(); ++i) {
                if (n.index[i] >= x.rows()) {
                    throw std::out_of_range(
                        fmt::format("gather_rows: index {} out of {} rows", n.index[i], x.rows()));
                }
                std::copy(x.row(n.index[i]).begin(), x.row(n.index[i]).end(), out.row(i).begin());
            }
            return out;
        }
    }
    throw std::logic_error("unhandled op");
}

std::vector<NodeId> Graph::topo_order(NodeId root, bool reverse_operands) const {
    node(root);
    enum class Mark : unsigned char { none, active, done };
    std::vector<Mark> mark(nodes_.size(), Mark::none);
    std::vector<NodeId> order;
    // (node, next operand position)
    std::vector<std::pair<NodeId, std::size_t>> stack{{root, 0}};
    mark[root] = Mark::active;
    while (!stack.empty()) {
        auto& [id, pos] = stack.back();
        const auto& ops = nodes_[id].operands;
        if (pos == ops.size()) {
            mark[id] = Mark::done;
            order.push_back(id);
            stack.pop_back();
            continue;
        }
        const NodeId next = reverse_operands ? ops[ops.size() - 1 - pos] : ops[pos];
        ++pos;
        if (mark[next] == Mark::active) {
            throw std::invalid_argument(fmt::format("cycle detected at node {}", next));
        }
        if (mark[next] == Mark::none) {
            mark[next] = Mark::active;
            stack.emplace_back(next, 0);
        }
    }
    return order;
}

const Tensor& Graph::evaluate(NodeId root, const Bindings& inputs, EvalOptions options) {
    for (const auto& [name, tensor] : inputs) {
        auto it = inputs_by_name_.find(name);
        if (it == inputs_by_name_.end()) throw std::invalid_argument("unknown input: " + name);
        nodes_[it->second].value = tensor;
    }
    std::vector<NodeId> order = topo_order(root, options.reverse_operand_order);
    for (NodeId id : order) {
        Node& n = nodes_[id];
        if (n.kind == OpKind::input) {
            if (!n.value) throw std::invalid_argument("unbound input: " + n.name);
            continue;
        }
        if (n.kind == OpKind::stop_gradient && options.freeze_stop_gradients && n.value) continue;
        n.value = forward(n);
    }
    last_order_ = std::move(order);
    last_root_ = root;
    return *nodes_[root].value;
}

Gradients Graph::backprop(NodeId root) {
    if (!last_root_ || *last_root_ != root) {
        last_order_ = topo_order(root, false);
        for (NodeId id : last_order_) {
            if (!nodes_[id].value) {
                throw std::logic_error(fmt::format("backprop: node {} not evaluated", id));
            }
        }
        last_root_ = root;
    }
    const Tensor& root_value = value(root);
    if (root_value.rows() != 1 || root_value.cols() != 1) {
        throw std::invalid_argument("backprop: root must be scalar, got " + root_value.shape_str());
    }

    struct Contribution {
        NodeId consumer;
        std::size_t slot;
        Tensor grad;
    };
    std::vector<std::vector<Contribution>> pending(nodes_.size());
    for (Node& n : nodes_) n.grad = Tensor(n.value ? n.value->rows() : 0, n.value ? n.value->cols() : 0);
    pending[root].push_back({root, 0, Tensor::scalar(1.0)});

    Gradients out;
    for (auto it = last_order_.rbegin(); it != last_order_.rend(); ++it) {
        const NodeId id = *it;
        Node& n = nodes_[id];
        auto& contribs = pending[id];
        // Sum in a fixed (consumer, slot) order so the result does not depend on traversal order.
        std::sort(contribs.begin(), contribs.end(), [](const Contribution& a, const Contribution& b) {
            return std::tie(a.consumer, a.slot) < std::tie(b.consumer, b.slot);
        });
        for (std::size_t c = 0; c < contribs.size(); ++c) {
            if (c == 0) {
                n.grad = std::move(contribs[0].grad);
            } else {
                auto gd = n.grad.data();
                auto cd = contribs[c].grad.data();
                for (std::size_t k = 0; k < gd.size(); ++k) gd[k] += cd[k];
            }
        }
        contribs.clear();
        contribs.shrink_to_fit();

        const Tensor& g = n.grad;
        auto send = [&](std::size_t slot, Tensor t) {
            pending[n.operands[slot]].push_back({id, slot, std::move(t)});
        };
        auto in = [&](std::size_t slot) -> const Tensor& { return *nodes_[n.operands[slot]].value; };
        const Tensor& y = *n.value;

        switch (n.kind) {
            case OpKind::input:
                out[n.name] = g;
                break;
            case OpKind::matmul:
                send(0, matmul_values(g, transpose_values(in(1))));
                send(1, matmul_values(transpose_values(in(0)), g));
                break;
            case OpKind::add:
                send(0, g);
                if (in(1).same_shape(g)) {
                    send(1, g);
                } else {
                    Tensor col(1, g.cols());
                    for (std::size_t i = 0; i < g.rows(); ++i)
                        for (std::size_t j = 0; j < g.cols(); ++j) col(0, j) += g(i, j);
                    send(1, std::move(col));
                }
                break;
            case OpKind::sub:
                send(0, g);
                send(1, map_values(g, [](double v) { return -v; }));
                break;
            case OpKind::multiply:
                send(0, zip_values(g, in(1), [](double a, double b) { return a * b; }));
                send(1, zip_values(g, in(0), [](double a, double b) { return a * b; }));
                break;
            case OpKind::scale: {
                const double f = n.factor;
                send(0, map_values(g, [f](double v) { return v * f; }));
                break;
            }
            case OpKind::exp:
                send(0, zip_values(g, y, [](double a, double b) { return a * b; }));
                break;
            case OpKind::log:
                send(0, zip_values(g, in(0), [](double a, double b) { return a / b; }));
                break;
            case OpKind::gelu:
                send(0, zip_values(g, in(0), [](double a, double x) {
                         return a * (normal_cdf(x) + x * normal_pdf(x));
                     }));
                break;
            case OpKind::logsumexp_rows: {
                const Tensor& x = in(0);
                Tensor dx(x.rows(), x.cols());
                for (std::size_t i = 0; i < x.rows(); ++i)
                    for (std::size_t j = 0; j < x.cols(); ++j)
                        dx(i, j) = g(i, 0) * std::exp(x(i, j) - y(i, 0));
                send(0, std::move(dx));
                break;
            }
            case OpKind::sum:
                send(0, Tensor(in(0).rows(), in(0).cols(), g(0, 0)));
                break;
            case OpKind::sum_rows: {
                const Tensor& x = in(0);
                Tensor dx(x.rows(), x.cols());
                for (std::size_t i = 0; i < x.rows(); ++i)
                    for (double& v : dx.row(i)) v = g(i, 0);
                send(0, std::move(dx));
                break;
            }
            case OpKind::mean: {
                const Tensor& x = in(0);
                send(0, Tensor(x.rows(), x.cols(), g(0, 0) / static_cast<double>(x.size())));
                break;
            }
            case OpKind::transpose:
                send(0, transpose_values(g));
                break;
            case OpKind::concat_cols: {
                const std::size_t ca = in(0).cols();
                Tensor da(g.rows(), ca);
                Tensor db(g.rows(), g.cols() - ca);
                for (std::size_t i = 0; i < g.rows(); ++i) {
                    for (std::size_t j = 0; j < ca; ++j) da(i, j) = g(i, j);
                    for (std::size_t j = ca; j < g.cols(); ++j) db(i, j - ca) = g(i, j);
                }
                send(0, std::move(da));
                send(1, std::move(db));
                break;
            }
            case OpKind::l2_normalize: {
                const Tensor& x = in(0);
                Tensor dx(x.rows(), x.cols());
                for (std::size_t i = 0; i < x.rows(); ++i) {
                    double ss = 0.0;
                    for (double v : x.row(i)) ss += v * v;
                    const double norm = std::sqrt(ss);
                    double yg = 0.0;
                    for (std::size_t j = 0; j < x.cols(); ++j) yg += y(i, j) * g(i, j);
                    for (std::size_t j = 0; j < x.cols(); ++j)
                        dx(i, j) = (g(i, j) - y(i, j) * yg) / norm;
                }
                send(0, std::move(dx));
                break;
            }
            case OpKind::stop_gradient:
                break;
            case OpKind::gather_rows: {
                const Tensor& x = in(0);
                Tensor dx(x.rows(), x.cols());
                for (std::size_t i = 0; i < n.index.size(); ++i) {
                    auto dst = dx.row(n.index[i]);
                    auto src = g.row(i);
                    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
                }
                send(0, std::move(dx));
                break;
            }
        }
    }
    return out;
}

GradCheckReport grad_check(Graph& graph, NodeId root, double tolerance, double step,
                           std::span<const std::string> only) {
    GradCheckReport report;
    graph.evaluate(root);
    const Gradients analytic = graph.backprop(root);

    for (const auto& [name, grad] : analytic) {
        if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) continue;
        const NodeId leaf = *graph.find_input(name);
        const Tensor original = graph.value(leaf);
        Tensor numeric(original.rows(), original.cols());
        Tensor probe = original;
        for (std::size_t k = 0; k < original.size(); ++k) {
            probe.data()[k] = original.data()[k] + step;
            const double up = graph.evaluate(root, {{name, probe}}, {.freeze_stop_gradients = true}).item();
            probe.data()[k] = original.data()[k] - step;
            const double down = graph.evaluate(root, {{name, probe}}, {.freeze_stop_gradients = true}).item();
            probe.data()[k] = original.data()[k];
            numeric.data()[k] = (up - down) / (2.0 * step);
        }
        graph.evaluate(root, {{name, original}}, {.freeze_stop_gradients = true});

        double diff = 0.0;
        double na = 0.0;
        double nn = 0.0;
        for (std::size_t k = 0; k < original.size(); ++k) {
            const double a = grad.data()[k];
            const double b = numeric.data()[k];
            diff += (a - b) * (a - b);
            na += a * a;
            nn += b * b;
        }
        const double denom = std::max(std::sqrt(na), std::sqrt(nn));
        const double rel = denom < 1e-12 ? 0.0 : std::sqrt(diff) / denom;
        report.rel_error[name] = rel;
        if (rel >= report.max_rel_error) {
            report.max_rel_error = rel;
            report.worst_input = name;
        }
    }
    // Restore stop-gradient caches to the unperturbed state.
    graph.evaluate(root);
    report.passed = report.max_rel_error <= tolerance;
    return report;
}

}  // namespace triret
