#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <string>
#include <vector>

#include "nfce/errors.hpp"
#include "nfce/tensor.hpp"

namespace nfce {

// Handle to a tape node.
struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

namespace detail {

// C (m x n) += A (m x k) * B (k x n)
inline void mm_acc(const double* A, const double* B, double* C,
                   std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* a = A + i * k;
        double* c = C + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[p];
            if (av == 0.0) continue;
            const double* b = B + p * n;
            for (std::size_t j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
}

// C (m x k) += A (m x n) * B^T where B is (k x n)
inline void mm_bt_acc(const double* A, const double* B, double* C,
                      std::size_t m, std::size_t n, std::size_t k) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* a = A + i * n;
        double* c = C + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double* b = B + p * n;
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += a[j] * b[j];
            c[p] += s;
        }
    }
}

// C (k x n) += A^T * B where A is (m x k), B is (m x n)
inline void mm_at_acc(const double* A, const double* B, double* C,
                      std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* a = A + i * k;
        const double* b = B + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[p];
            if (av == 0.0) continue;
            double* c = C + p * n;
            for (std::size_t j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
}

}  // namespace detail

// Reverse-mode autodiff tape over Tensor values. Build a fresh tape per
// forward pass; grad() walks the recorded nodes once in reverse order.
// Evaluation order is fixed by construction, so identical inputs give
// bit-identical values and gradients.
class Tape {
    enum class Op {
        Leaf, Add, Mul, Scale, AddScalar, MatMul, Permute, Reshape,
        Slice, Concat, Broadcast, Sum, Mean, Relu, Tanh, Sigmoid,
        SoftmaxLast, PowConst,
    };

    struct Node {
        Op op;
        std::vector<int> parents;
        Tensor value;
        std::vector<std::size_t> attr_a;  // axes / permutation / slice begin
        std::vector<std::size_t> attr_b;  // slice extents
        double alpha = 0.0;
        bool keepdims = false;
        int param_index = -1;
    };

public:
    explicit Tape(bool check_finite = true) : check_finite_(check_finite) {
        nodes_.reserve(1024);
    }

    std::size_t node_count() const { return nodes_.size(); }

    const Tensor& val(Var v) const {
        NFCE_REQUIRE(v.id >= 0 && v.id < static_cast<int>(nodes_.size()),
                     "invalid tape handle");
        return nodes_[v.id].value;
    }

    // ---- leaves ----

    Var leaf(Tensor v) {
        Node n;
        n.op = Op::Leaf;
        n.value = std::move(v);
        return push(std::move(n), "leaf");
    }

    Var param(Tensor v, const std::string& name) {
        NFCE_REQUIRE(!name.empty(), "parameter name must be non-empty");
        for (const auto& existing : param_names_)
            NFCE_REQUIRE(existing != name, "parameter registered twice: " + name);
        Node n;
        n.op = Op::Leaf;
        n.value = std::move(v);
        n.param_index = static_cast<int>(param_names_.size());
        param_names_.push_back(name);
        return push(std::move(n), "param " + name);
    }

    // ---- primitives ----

    Var add(Var a, Var b) {
        const Tensor& x = val(a);
        const Tensor& y = val(b);
        NFCE_REQUIRE(x.same_shape(y), "add: shape mismatch " + shape_str(x.shape()) +
                                          " vs " + shape_str(y.shape()));
        Tensor out(x.shape());
        const double* xp = x.data();
        const double* yp = y.data();
        double* op_ = out.data();
        for (std::size_t i = 0; i < out.size(); ++i) op_[i] = xp[i] + yp[i];
        return push_op(Op::Add, {a.id, b.id}, std::move(out), "add");
    }

    Var mul(Var a, Var b) {
        const Tensor& x = val(a);
        const Tensor& y = val(b);
        NFCE_REQUIRE(x.same_shape(y), "mul: shape mismatch " + shape_str(x.shape()) +
                                          " vs " + shape_str(y.shape()));
        Tensor out(x.shape());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
        return push_op(Op::Mul, {a.id, b.id}, std::move(out), "mul");
    }

    Var scale(Var a, double alpha) {
        const Tensor& x = val(a);
        Tensor out(x.shape());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * alpha;
        Node n = make(Op::Scale, {a.id}, std::move(out));
        n.alpha = alpha;
        return push(std::move(n), "scale");
    }

    Var add_scalar(Var a, double alpha) {
        const Tensor& x = val(a);
        Tensor out(x.shape());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + alpha;
        Node n = make(Op::AddScalar, {a.id}, std::move(out));
        n.alpha = alpha;
        return push(std::move(n), "add_scalar");
    }

    // Matrix product over the two trailing axes. Leading axes are batch
    // dims and must match exactly; the right operand may instead be rank-2
    // (shared across the batch).
    Var matmul(Var a, Var b) {
        const Tensor& x = val(a);
        const Tensor& y = val(b);
        NFCE_REQUIRE(x.rank() >= 2, "matmul: left operand must have rank >= 2");
        NFCE_REQUIRE(y.rank() == 2 || y.rank() == x.rank(),
                     "matmul: right operand rank must be 2 or match left");
        const std::size_t m = x.shape()[x.rank() - 2];
        const std::size_t k = x.shape()[x.rank() - 1];
        const bool shared = (y.rank() == 2);
        if (!shared) {
            for (std::size_t i = 0; i + 2 < x.rank(); ++i)
                NFCE_REQUIRE(x.shape()[i] == y.shape()[i], "matmul: batch dims differ");
        }
        NFCE_REQUIRE(y.shape()[y.rank() - 2] == k,
                     "matmul: inner dims differ: " + shape_str(x.shape()) + " x " +
                         shape_str(y.shape()));
        const std::size_t n = y.shape()[y.rank() - 1];
        std::size_t batch = 1;
        for (std::size_t i = 0; i + 2 < x.rank(); ++i) batch *= x.shape()[i];

        Shape out_shape(x.shape());
        out_shape[x.rank() - 1] = n;
        Tensor out(out_shape);
        for (std::size_t g = 0; g < batch; ++g)
            detail::mm_acc(x.data() + g * m * k,
                           y.data() + (shared ? 0 : g * k * n),
                           out.data() + g * m * n, m, k, n);
        return push_op(Op::MatMul, {a.id, b.id}, std::move(out), "matmul");
    }

    Var permute(Var a, std::vector<std::size_t> axes) {
        const Tensor& x = val(a);
        NFCE_REQUIRE(axes.size() == x.rank(), "permute: axes rank mismatch");
        std::vector<bool> seen(x.rank(), false);
        Shape out_shape(x.rank());
        for (std::size_t i = 0; i < axes.size(); ++i) {
            NFCE_REQUIRE(axes[i] < x.rank() && !seen[axes[i]], "permute: invalid axes");
            seen[axes[i]] = true;
            out_shape[i] = x.shape()[axes[i]];
        }
        Tensor out(out_shape);
        permute_copy(out, x, axes);
        Node n = make(Op::Permute, {a.id}, std::move(out));
        n.attr_a = std::move(axes);
        return push(std::move(n), "permute");
    }

    // 2-D transpose convenience.
    Var transpose(Var a) {
        NFCE_REQUIRE(val(a).rank() == 2, "transpose: rank-2 input required");
        return permute(a, {1, 0});
    }

    Var reshape(Var a, Shape shape) {
        const Tensor& x = val(a);
        NFCE_REQUIRE(shape_size(shape) == x.size(),
                     "reshape: element count mismatch " + shape_str(x.shape()) +
                         " -> " + shape_str(shape));
        Tensor out(std::move(shape), x.vec());
        return push_op(Op::Reshape, {a.id}, std::move(out), "reshape");
    }

    Var slice(Var a, std::vector<std::size_t> begin, std::vector<std::size_t> extent) {
        const Tensor& x = val(a);
        NFCE_REQUIRE(begin.size() == x.rank() && extent.size() == x.rank(),
                     "slice: begin/extent rank mismatch");
        for (std::size_t i = 0; i < x.rank(); ++i)
            NFCE_REQUIRE(begin[i] + extent[i] <= x.shape()[i] && extent[i] > 0,
                         "slice: out of range on axis " + std::to_string(i));
        Tensor out(Shape(extent.begin(), extent.end()));
        copy_region(out.data(), out.shape(), x, begin, /*gather=*/true);
        Node n = make(Op::Slice, {a.id}, std::move(out));
        n.attr_a = std::move(begin);
        n.attr_b = std::move(extent);
        return push(std::move(n), "slice");
    }

    Var concat(const std::vector<Var>& parts, std::size_t axis) {
        NFCE_REQUIRE(!parts.empty(), "concat: needs at least one input");
        const Tensor& first = val(parts[0]);
        NFCE_REQUIRE(axis < first.rank(), "concat: axis out of range");
        Shape out_shape = first.shape();
        std::size_t total = first.shape()[axis];
        for (std::size_t i = 1; i < parts.size(); ++i) {
            const Tensor& t = val(parts[i]);
            NFCE_REQUIRE(t.rank() == first.rank(), "concat: rank mismatch");
            for (std::size_t d = 0; d < t.rank(); ++d)
                if (d != axis)
                    NFCE_REQUIRE(t.shape()[d] == first.shape()[d],
                                 "concat: non-axis dims differ");
            total += t.shape()[axis];
        }
        out_shape[axis] = total;
        Tensor out(out_shape);
        std::vector<std::size_t> begin(first.rank(), 0);
        for (const Var& p : parts) {
            const Tensor& t = val(p);
            copy_region(const_cast<double*>(t.data()), t.shape(), out, begin,
                        /*gather=*/false);
            begin[axis] += t.shape()[axis];
        }
        Node n = make(Op::Concat, {}, std::move(out));
        for (const Var& p : parts) n.parents.push_back(p.id);
        n.attr_a = {axis};
        return push(std::move(n), "concat");
    }

    // Right-aligned broadcast: missing leading axes are added, axes of size 1
    // expand to the target extent.
    Var broadcast_to(Var a, Shape target) {
        const Tensor& x = val(a);
        NFCE_REQUIRE(x.rank() <= target.size(), "broadcast: rank exceeds target");
        const std::size_t off = target.size() - x.rank();
        for (std::size_t i = 0; i < x.rank(); ++i)
            NFCE_REQUIRE(x.shape()[i] == target[off + i] || x.shape()[i] == 1,
                         "broadcast: incompatible shapes " + shape_str(x.shape()) +
                             " -> " + shape_str(target));
        Tensor out(target);
        broadcast_copy(out, x);
        return push_op(Op::Broadcast, {a.id}, std::move(out), "broadcast");
    }

    Var sum(Var a, std::vector<std::size_t> axes, bool keepdims = false) {
        return reduce(a, std::move(axes), keepdims, /*mean=*/false);
    }

    Var mean(Var a, std::vector<std::size_t> axes, bool keepdims = false) {
        return reduce(a, std::move(axes), keepdims, /*mean=*/true);
    }

    Var relu(Var a) {
        const Tensor& x = val(a);
        Tensor out(x.shape());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
        return push_op(Op::Relu, {a.id}, std::move(out), "relu");
    }

    Var tanh_(Var a) {
        const Tensor& x = val(a);
        Tensor out(x.shape());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x[i]);
        return push_op(Op::Tanh, {a.id}, std::move(out), "tanh");
    }

    Var sigmoid(Var a) {
        const Tensor& x = val(a);
        Tensor out(x.shape());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-x[i]));
        return push_op(Op::Sigmoid, {a.id}, std::move(out), "sigmoid");
    }

    // Numerically stable softmax over the last axis.
    Var softmax_last(Var a) {
        const Tensor& x = val(a);
        const std::size_t L = x.shape().back();
        NFCE_REQUIRE(L >= 1, "softmax: empty last axis");
        const std::size_t rows = x.size() / L;
        Tensor out(x.shape());
        for (std::size_t r = 0; r < rows; ++r) {
            const double* xr = x.data() + r * L;
            double* yr = out.data() + r * L;
            double mx = xr[0];
            for (std::size_t j = 1; j < L; ++j) mx = std::max(mx, xr[j]);
            double denom = 0.0;
            for (std::size_t j = 0; j < L; ++j) {
                yr[j] = std::exp(xr[j] - mx);
                denom += yr[j];
            }
            for (std::size_t j = 0; j < L; ++j) yr[j] /= denom;
        }
        return push_op(Op::SoftmaxLast, {a.id}, std::move(out), "softmax");
    }

    Var pow_const(Var a, double p) {
        const Tensor& x = val(a);
        Tensor out(x.shape());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::pow(x[i], p);
        Node n = make(Op::PowConst, {a.id}, std::move(out));
        n.alpha = p;
        return push(std::move(n), "pow_const");
    }

    // ---- composites ----

    Var sub(Var a, Var b) { return add(a, scale(b, -1.0)); }

    Var square(Var a) { return mul(a, a); }

    // Population variance over the given axes (composed from primitives so
    // the gradient flows through the batch statistics).
    Var variance(Var a, std::vector<std::size_t> axes, bool keepdims = false) {
        Var mu = mean(a, axes, /*keepdims=*/true);
        Var centered = sub(a, broadcast_to(mu, val(a).shape()));
        return mean(square(centered), std::move(axes), keepdims);
    }

    Var sum_all(Var a) {
        std::vector<std::size_t> axes(val(a).rank());
        for (std::size_t i = 0; i < axes.size(); ++i) axes[i] = i;
        return sum(a, std::move(axes));
    }

    Var mean_all(Var a) {
        std::vector<std::size_t> axes(val(a).rank());
        for (std::size_t i = 0; i < axes.size(); ++i) axes[i] = i;
        return mean(a, std::move(axes));
    }

    // ---- backward ----

    // Returns d(loss)/d(p) for every registered parameter p, keyed by name.
    // Parameters the loss does not depend on get zero gradients.
    std::map<std::string, Tensor> grad(Var loss) {
        const Tensor& lv = val(loss);
        NFCE_REQUIRE(lv.size() == 1, "grad: loss must be scalar, got shape " +
                                         shape_str(lv.shape()));
        if (check_finite_)
            NFCE_REQUIRE(lv.all_finite(), "grad: loss is not finite");

        std::vector<Tensor> grads(nodes_.size());
        std::vector<bool> has_grad(nodes_.size(), false);
        grads[loss.id] = Tensor::full(lv.shape(), 1.0);
        has_grad[loss.id] = true;

        for (int i = loss.id; i >= 0; --i) {
            if (!has_grad[i]) continue;
            if (check_finite_ && !grads[i].all_finite())
                throw NumericError("grad: non-finite gradient at node #" +
                                   std::to_string(i) + " (" + op_name(nodes_[i].op) + ")");
            backward_node(i, grads, has_grad);
        }

        std::map<std::string, Tensor> out;
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            if (nodes_[i].param_index < 0) continue;
            const std::string& name = param_names_[nodes_[i].param_index];
            out[name] = has_grad[i] ? std::move(grads[i]) : Tensor::zeros(nodes_[i].value.shape());
        }
        return out;
    }

private:
    Node make(Op op, std::vector<int> parents, Tensor value) {
        Node n;
        n.op = op;
        n.parents = std::move(parents);
        n.value = std::move(value);
        return n;
    }

    Var push_op(Op op, std::vector<int> parents, Tensor value, const char* what) {
        return push(make(op, std::move(parents), std::move(value)), what);
    }

    Var push(Node n, const std::string& what) {
        if (check_finite_ && !n.value.all_finite())
            throw NumericError("non-finite value produced by " + what + " at node #" +
                               std::to_string(nodes_.size()));
        nodes_.push_back(std::move(n));
        return Var{static_cast<int>(nodes_.size() - 1)};
    }

    static const char* op_name(Op op) {
        switch (op) {
            case Op::Leaf: return "leaf";
            case Op::Add: return "add";
            case Op::Mul: return "mul";
            case Op::Scale: return "scale";
            case Op::AddScalar: return "add_scalar";
            case Op::MatMul: return "matmul";
            case Op::Permute: return "permute";
            case Op::Reshape: return "reshape";
            case Op::Slice: return "slice";
            case Op::Concat: return "concat";
            case Op::Broadcast: return "broadcast";
            case Op::Sum: return "sum";
            case Op::Mean: return "mean";
            case Op::Relu: return "relu";
            case Op::Tanh: return "tanh";
            case Op::Sigmoid: return "sigmoid";
            case Op::SoftmaxLast: return "softmax";
            case Op::PowConst: return "pow_const";
        }
        return "?";
    }

    Var reduce(Var a, std::vector<std::size_t> axes, bool keepdims, bool is_mean) {
        const Tensor& x = val(a);
        NFCE_REQUIRE(!axes.empty(), "reduce: no axes given");
        std::vector<bool> reduced(x.rank(), false);
        for (std::size_t ax : axes) {
            NFCE_REQUIRE(ax < x.rank(), "reduce: axis out of range");
            NFCE_REQUIRE(!reduced[ax], "reduce: duplicate axis");
            reduced[ax] = true;
        }
        Shape out_shape;
        std::size_t count = 1;
        for (std::size_t d = 0; d < x.rank(); ++d) {
            if (reduced[d]) {
                count *= x.shape()[d];
                if (keepdims) out_shape.push_back(1);
            } else {
                out_shape.push_back(x.shape()[d]);
            }
        }
        if (out_shape.empty()) out_shape.push_back(1);

        Tensor out(out_shape);
        reduce_sum_into(out, x, reduced);
        if (is_mean) {
            const double inv = 1.0 / static_cast<double>(count);
            for (std::size_t i = 0; i < out.size(); ++i) out[i] *= inv;
        }
        Node n = make(is_mean ? Op::Mean : Op::Sum, {a.id}, std::move(out));
        n.attr_a = std::move(axes);
        n.keepdims = keepdims;
        n.alpha = static_cast<double>(count);
        return push(std::move(n), is_mean ? "mean" : "sum");
    }

    // dst (extent-shaped) <- src region at begin (gather), or
    // dst region at begin <- src block (scatter assign, gather=false with
    // roles swapped: block is copied INTO `into` at begin).
    static void copy_region(double* block, const Shape& block_shape,
                            const Tensor& whole, const std::vector<std::size_t>& begin,
                            bool gather) {
        const auto wstrides = whole.strides();
        const std::size_t rank = block_shape.size();
        const std::size_t run = block_shape[rank - 1];
        std::size_t outer = 1;
        for (std::size_t i = 0; i + 1 < rank; ++i) outer *= block_shape[i];

        std::vector<std::size_t> idx(rank, 0);
        const double* wsrc = whole.data();
        for (std::size_t o = 0; o < outer; ++o) {
            std::size_t woff = begin[rank - 1] * wstrides[rank - 1];
            for (std::size_t i = 0; i + 1 < rank; ++i)
                woff += (begin[i] + idx[i]) * wstrides[i];
            if (gather)
                std::memcpy(block + o * run, wsrc + woff, run * sizeof(double));
            else
                std::memcpy(const_cast<double*>(wsrc) + woff, block + o * run,
                            run * sizeof(double));
            for (std::size_t i = rank - 1; i-- > 0;) {
                if (++idx[i] < block_shape[i]) break;
                idx[i] = 0;
            }
        }
    }

    static void scatter_add_region(Tensor& whole, const Tensor& block,
                                   const std::vector<std::size_t>& begin) {
        const auto wstrides = whole.strides();
        const Shape& bs = block.shape();
        const std::size_t rank = bs.size();
        const std::size_t run = bs[rank - 1];
        std::size_t outer = block.size() / run;
        std::vector<std::size_t> idx(rank, 0);
        for (std::size_t o = 0; o < outer; ++o) {
            std::size_t woff = begin[rank - 1] * wstrides[rank - 1];
            for (std::size_t i = 0; i + 1 < rank; ++i)
                woff += (begin[i] + idx[i]) * wstrides[i];
            const double* b = block.data() + o * run;
            double* w = whole.data() + woff;
            for (std::size_t j = 0; j < run; ++j) w[j] += b[j];
            for (std::size_t i = rank - 1; i-- > 0;) {
                if (++idx[i] < bs[i]) break;
                idx[i] = 0;
            }
        }
    }

    static void permute_copy(Tensor& dst, const Tensor& src,
                             const std::vector<std::size_t>& axes) {
        const auto sstrides = src.strides();
        const std::size_t rank = axes.size();
        std::vector<std::size_t> dstride_in_src(rank);
        for (std::size_t i = 0; i < rank; ++i) dstride_in_src[i] = sstrides[axes[i]];
        std::vector<std::size_t> idx(rank, 0);
        const Shape& ds = dst.shape();
        for (std::size_t o = 0; o < dst.size(); ++o) {
            std::size_t soff = 0;
            for (std::size_t i = 0; i < rank; ++i) soff += idx[i] * dstride_in_src[i];
            dst[o] = src[soff];
            for (std::size_t i = rank; i-- > 0;) {
                if (++idx[i] < ds[i]) break;
                idx[i] = 0;
            }
        }
    }

    static void broadcast_copy(Tensor& dst, const Tensor& src) {
        const std::size_t off = dst.rank() - src.rank();
        const auto sstrides = src.strides();
        std::vector<std::size_t> stride(dst.rank(), 0);
        for (std::size_t i = 0; i < src.rank(); ++i)
            stride[off + i] = (src.shape()[i] == 1) ? 0 : sstrides[i];
        std::vector<std::size_t> idx(dst.rank(), 0);
        const Shape& ds = dst.shape();
        for (std::size_t o = 0; o < dst.size(); ++o) {
            std::size_t soff = 0;
            for (std::size_t i = 0; i < dst.rank(); ++i) soff += idx[i] * stride[i];
            dst[o] = src[soff];
            for (std::size_t i = dst.rank(); i-- > 0;) {
                if (++idx[i] < ds[i]) break;
                idx[i] = 0;
            }
        }
    }

    // Accumulate: for axes where `reduced` is true the destination stride is 0.
    static void reduce_sum_into(Tensor& dst, const Tensor& src,
                                const std::vector<bool>& reduced) {
        std::vector<std::size_t> dstride(src.rank(), 0);
        {
            std::size_t run = 1;
            for (std::size_t i = src.rank(); i-- > 0;) {
                if (!reduced[i]) {
                    dstride[i] = run;
                    run *= src.shape()[i];
                }
            }
        }
        std::vector<std::size_t> idx(src.rank(), 0);
        const Shape& ss = src.shape();
        for (std::size_t o = 0; o < src.size(); ++o) {
            std::size_t doff = 0;
            for (std::size_t i = 0; i < src.rank(); ++i) doff += idx[i] * dstride[i];
            dst[doff] += src[o];
            for (std::size_t i = src.rank(); i-- > 0;) {
                if (++idx[i] < ss[i]) break;
                idx[i] = 0;
            }
        }
    }

    void accumulate(std::vector<Tensor>& grads, std::vector<bool>& has, int id,
                    Tensor contribution) {
        if (!has[id]) {
            grads[id] = std::move(contribution);
            has[id] = true;
        } else {
            Tensor& g = grads[id];
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += contribution[i];
        }
    }

    void backward_node(int id, std::vector<Tensor>& grads, std::vector<bool>& has) {
        const Node& n = nodes_[id];
        const Tensor& g = grads[id];
        switch (n.op) {
            case Op::Leaf:
                break;
            case Op::Add: {
                accumulate(grads, has, n.parents[0], g);
                accumulate(grads, has, n.parents[1], g);
                break;
            }
            case Op::Mul: {
                const Tensor& x = nodes_[n.parents[0]].value;
                const Tensor& y = nodes_[n.parents[1]].value;
                Tensor gx(x.shape()), gy(y.shape());
                for (std::size_t i = 0; i < g.size(); ++i) {
                    gx[i] = g[i] * y[i];
                    gy[i] = g[i] * x[i];
                }
                accumulate(grads, has, n.parents[0], std::move(gx));
                accumulate(grads, has, n.parents[1], std::move(gy));
                break;
            }
            case Op::Scale: {
                Tensor gx(g.shape());
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * n.alpha;
                accumulate(grads, has, n.parents[0], std::move(gx));
                break;
            }
            case Op::AddScalar:
                accumulate(grads, has, n.parents[0], g);
                break;
            case Op::MatMul: {
                const Tensor& x = nodes_[n.parents[0]].value;
                const Tensor& y = nodes_[n.parents[1]].value;
                const std::size_t m = x.shape()[x.rank() - 2];
                const std::size_t k = x.shape()[x.rank() - 1];
                const std::size_t nn = y.shape()[y.rank() - 1];
                const bool shared = (y.rank() == 2);
                std::size_t batch = 1;
                for (std::size_t i = 0; i + 2 < x.rank(); ++i) batch *= x.shape()[i];
                Tensor gx(x.shape()), gy(y.shape());
                for (std::size_t b = 0; b < batch; ++b) {
                    const double* gp = g.data() + b * m * nn;
                    detail::mm_bt_acc(gp, y.data() + (shared ? 0 : b * k * nn),
                                      gx.data() + b * m * k, m, nn, k);
                    detail::mm_at_acc(x.data() + b * m * k, gp,
                                      gy.data() + (shared ? 0 : b * k * nn), m, k, nn);
                }
                accumulate(grads, has, n.parents[0], std::move(gx));
                accumulate(grads, has, n.parents[1], std::move(gy));
                break;
            }
            case Op::Permute: {
                std::vector<std::size_t> inv(n.attr_a.size());
                for (std::size_t i = 0; i < n.attr_a.size(); ++i) inv[n.attr_a[i]] = i;
                Tensor gx(nodes_[n.parents[0]].value.shape());
                permute_copy(gx, g, inv);
                accumulate(grads, has, n.parents[0], std::move(gx));
                break;
            }
            case Op::Reshape: {
                Tensor gx(nodes_[n.parents[0]].value.shape(), g.vec());
                accumulate(grads, has, n.parents[0], std::move(gx));
                break;
            }
            case Op::Slice: {
                Tensor gx(nodes_[n.parents[0]].value.shape());
                scatter_add_region(gx, g, n.attr_a);
                accumulate(grads, has, n.parents[0], std::move(gx));
                break;
            }
            case Op::Concat: {
                const std::size_t axis = n.attr_a[0];
                std::vector<std::size_t> begin(g.rank(), 0);
                for (int pid : n.parents) {
                    const Shape& ps = nodes_[pid].value.shape();
                    Tensor gp(ps);
                    copy_region(gp.data(), ps, g, begin, /*gather=*/true);
                    accumulate(grads, has, pid, std::move(gp));
                    begin[axis] += ps[axis];
                }
                break;
            }
            case Op::Broadcast: {
                const Tensor& x = nodes_[n.parents[0]].value;
                const std::size_t off = g.rank() - x.rank();
                std::vector<bool> reduced(g.rank(), false);
                for (std::size_t i = 0; i < g.rank(); ++i) {
                    if (i < off) reduced[i] = true;
                    else if (x.shape()[i - off] == 1 && g.shape()[i] != 1) reduced[i] = true;
                }
                Tensor gx(x.shape());
                reduce_sum_into(gx, g, reduced);
                accumulate(grads, has, n.parents[0], std::move(gx));
                break;
            }
            case Op::Sum:
            case Op::Mean: {
                const Tensor& x = nodes_[n.parents[0]].value;
                std::vector<bool> reduced(x.rank(), false);
                for (std::size_t ax : n.attr_a) reduced[ax] = true;
                const double w = (n.op == Op::Mean) ? 1.0 / n.alpha : 1.0;
                Tensor gx(x.shape());
                // Walk the input space; each input cell takes the grad of its
                // reduction cell.
                std::vector<std::size_t> gstride(x.rank(), 0);
                {
                    std::size_t run = 1;
                    for (std::size_t i = x.rank(); i-- > 0;) {
                        if (!reduced[i]) {
                            gstride[i] = run;
                            run *= x.shape()[i];
                        }
                    }
                }
                std::vector<std::size_t> idx(x.rank(), 0);
                for (std::size_t o = 0; o < x.size(); ++o) {
                    std::size_t goff = 0;
                    for (std::size_t i = 0; i < x.rank(); ++i) goff += idx[i] * gstride[i];
                    gx[o] = g[goff] * w;
                    for (std::size_t i = x.rank(); i-- > 0;) {
                        if (++idx[i] < x.shape()[i]) break;
                        idx[i] = 0;
                    }
                }
                accumulate(grads, has, n.parents[0], std::move(gx));
                break;
            }
            case Op::Relu: {
                const Tensor& x = nodes_[n.parents[0]].value;
                Tensor gx(x.shape());
                for (std::size_t i = 0; i < gx.size(); ++i)
                    gx[i] = x[i] > 0.0 ? g[i] : 0.0;
                accumulate(grads, has, n.parents[0], std::move(gx));
                break;
            }
            case Op::Tanh: {
                const Tensor& y = n.value;
                Tensor gx(y.shape());
                for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = g[i] * (1.0 - y[i] * y[i]);
                accumulate(grads, has, n.parents[0], std::move(gx));
                break;
            }
            case Op::Sigmoid: {
                const Tensor& y = n.value;
                Tensor gx(y.shape());
                for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = g[i] * y[i] * (1.0 - y[i]);
                accumulate(grads, has, n.parents[0], std::move(gx));
                break;
            }
            case Op::SoftmaxLast: {
                const Tensor& y = n.value;
                const std::size_t L = y.shape().back();
                const std::size_t rows = y.size() / L;
                Tensor gx(y.shape());
                for (std::size_t r = 0; r < rows; ++r) {
                    const double* yr = y.data() + r * L;
                    const double* gr = g.data() + r * L;
                    double dot = 0.0;
                    for (std::size_t j = 0; j < L; ++j) dot += gr[j] * yr[j];
                    double* gxr = gx.data() + r * L;
                    for (std::size_t j = 0; j < L; ++j) gxr[j] = yr[j] * (gr[j] - dot);
                }
                accumulate(grads, has, n.parents[0], std::move(gx));
                break;
            }
            case Op::PowConst: {
                const Tensor& x = nodes_[n.parents[0]].value;
                Tensor gx(x.shape());
                for (std::size_t i = 0; i < gx.size(); ++i)
                    gx[i] = g[i] * n.alpha * std::pow(x[i], n.alpha - 1.0);
                accumulate(grads, has, n.parents[0], std::move(gx));
                break;
            }
        }
    }

    std::vector<Node> nodes_;
    std::vector<std::string> param_names_;
    bool check_finite_;
};

}  // namespace nfce
