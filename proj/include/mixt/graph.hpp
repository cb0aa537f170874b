#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "mixt/common.hpp"
#include "mixt/tensor.hpp"

namespace mixt {

inline constexpr double kLayerNormEps = 1e-5;

// Gradient accumulator keyed by parameter index. One buffer is shared across
// the per-sample graphs of a batch; graphs add into it after backward().
struct GradBuffer {
    std::vector<Tensor> grads;

    void ensure(int index, int rows, int cols) {
        if (index >= static_cast<int>(grads.size())) grads.resize(index + 1);
        Tensor& g = grads[index];
        if (g.rows == 0 && g.cols == 0) g = Tensor::zeros(rows, cols);
        require(g.rows == rows && g.cols == cols, "GradBuffer: shape mismatch for parameter");
    }

    void scale_all(double s) {
        for (auto& g : grads)
            if (!g.data.empty()) g.scale_(s);
    }

    // Adds scale * other into this buffer (batch aggregation across
    // per-sample graphs).
    void accumulate(const GradBuffer& other, double scale) {
        for (int i = 0; i < static_cast<int>(other.grads.size()); ++i) {
            const Tensor& g = other.grads[i];
            if (g.data.empty()) continue;
            ensure(i, g.rows, g.cols);
            for (size_t k = 0; k < g.data.size(); ++k) grads[i].data[k] += scale * g.data[k];
        }
    }
};

enum class Op {
    input,
    param,
    matmul,      // a[m,k] * b[k,n]
    matmul_nt,   // a[m,k] * b[n,k]^T
    linear,      // x[m,in] * W[out,in]^T + b[1,out]
    add,
    mul,
    scale,
    relu,
    layer_norm,
    softmax_rows,
    embed_rows,
    concat_rows,
    concat_cols,
    slice_rows,
    slice_cols,
    nll_sum,
};

// Reverse-mode tape. Node ids are creation-ordered, so a reverse sweep over
// ids is a valid topological order for backward().
class Graph {
  public:
    struct Node {
        Op op;
        std::vector<int> inputs;
        Tensor value;                    // owned result (unused for param leaves)
        const Tensor* external = nullptr;  // param leaves alias the store
        Tensor grad;                     // empty until gradient first arrives
        bool needs_grad = false;
        int param_index = -1;
        double factor = 0.0;             // scale
        bool causal = false;             // softmax_rows
        std::vector<int> indices;        // embed_rows rows / nll_sum targets
        std::vector<uint8_t> mask;       // nll_sum: 1 = counted
        int start = 0, len = 0;          // slices
        Tensor ln_mean, ln_istd;         // layer_norm stash, one column each
    };

    const Tensor& value(int id) const {
        const Node& n = node(id);
        return n.external ? *n.external : n.value;
    }

    double scalar_value(int id) const {
        const Tensor& t = value(id);
        require(t.rows == 1 && t.cols == 1, "scalar_value: node is not [1,1]");
        return t.data[0];
    }

    const Tensor& grad(int id) const { return node(id).grad; }
    size_t node_count() const { return nodes_.size(); }

    int input(Tensor v) {
        Node n;
        n.op = Op::input;
        n.value = std::move(v);
        return push(std::move(n));
    }

    // The store tensor must outlive the graph. needs_grad=false makes the
    // parameter opaque to backward(), which is how the freeze mask is applied.
    int param(const Tensor* t, int param_index, bool needs_grad) {
        require(t != nullptr, "param: null tensor");
        Node n;
        n.op = Op::param;
        n.external = t;
        n.param_index = param_index;
        n.needs_grad = needs_grad;
        return push(std::move(n));
    }

    int matmul(int a, int b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        if (A.cols != B.rows)
            fail("matmul: inner dims differ: [", A.rows, ",", A.cols, "] x [", B.rows, ",", B.cols, "]");
        Node n = make(Op::matmul, {a, b}, A.rows, B.cols);
        n.value.map().noalias() = A.map() * B.map();
        return push(std::move(n));
    }

    int matmul_nt(int a, int b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        if (A.cols != B.cols)
            fail("matmul_nt: inner dims differ: [", A.rows, ",", A.cols, "] x [", B.rows, ",", B.cols, "]^T");
        Node n = make(Op::matmul_nt, {a, b}, A.rows, B.rows);
        n.value.map().noalias() = A.map() * B.map().transpose();
        return push(std::move(n));
    }

    int linear(int x, int w, int b) {
        const Tensor& X = value(x);
        const Tensor& W = value(w);
        const Tensor& Bv = value(b);
        if (X.cols != W.cols) fail("linear: x cols ", X.cols, " != weight in-dim ", W.cols);
        if (Bv.rows != 1 || Bv.cols != W.rows)
            fail("linear: bias must be [1,", W.rows, "], got [", Bv.rows, ",", Bv.cols, "]");
        Node n = make(Op::linear, {x, w, b}, X.rows, W.rows);
        n.value.map().noalias() = X.map() * W.map().transpose();
        n.value.map().rowwise() += Bv.map().row(0);
        return push(std::move(n));
    }

    int add(int a, int b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        if (!A.same_shape(B))
            fail("add: shape mismatch [", A.rows, ",", A.cols, "] vs [", B.rows, ",", B.cols, "]");
        Node n = make(Op::add, {a, b}, A.rows, A.cols);
        n.value.map() = A.map() + B.map();
        return push(std::move(n));
    }

    int mul(int a, int b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        if (!A.same_shape(B))
            fail("mul: shape mismatch [", A.rows, ",", A.cols, "] vs [", B.rows, ",", B.cols, "]");
        Node n = make(Op::mul, {a, b}, A.rows, A.cols);
        n.value.map() = A.map().cwiseProduct(B.map());
        return push(std::move(n));
    }

    int scale(int a, double s) {
        const Tensor& A = value(a);
        Node n = make(Op::scale, {a}, A.rows, A.cols);
        n.factor = s;
        n.value.map() = A.map() * s;
        return push(std::move(n));
    }

    int relu(int a) {
        const Tensor& A = value(a);
        Node n = make(Op::relu, {a}, A.rows, A.cols);
        n.value.map() = A.map().cwiseMax(0.0);
        return push(std::move(n));
    }

    int layer_norm(int x, int gamma, int beta) {
        const Tensor& X = value(x);
        const Tensor& G = value(gamma);
        const Tensor& Bv = value(beta);
        if (G.rows != 1 || G.cols != X.cols || Bv.rows != 1 || Bv.cols != X.cols)
            fail("layer_norm: gamma/beta must be [1,", X.cols, "]");
        Node n = make(Op::layer_norm, {x, gamma, beta}, X.rows, X.cols);
        n.ln_mean = Tensor(X.rows, 1);
        n.ln_istd = Tensor(X.rows, 1);
        for (int r = 0; r < X.rows; ++r) {
            const double mean = X.map().row(r).mean();
            const double var = (X.map().row(r).array() - mean).square().mean();
            const double istd = 1.0 / std::sqrt(var + kLayerNormEps);
            n.ln_mean.data[r] = mean;
            n.ln_istd.data[r] = istd;
            n.value.map().row(r) =
                ((X.map().row(r).array() - mean) * istd) * G.map().row(0).array() +
                Bv.map().row(0).array();
        }
        return push(std::move(n));
    }

    // Row softmax. causal requires a square matrix and zeroes out j > i.
    int softmax_rows(int x, bool causal = false) {
        const Tensor& X = value(x);
        if (causal && X.rows != X.cols)
            fail("softmax_rows: causal mask needs square scores, got [", X.rows, ",", X.cols, "]");
        Node n = make(Op::softmax_rows, {x}, X.rows, X.cols);
        n.causal = causal;
        for (int r = 0; r < X.rows; ++r) {
            const int limit = causal ? r + 1 : X.cols;
            double mx = X.at(r, 0);
            for (int c = 1; c < limit; ++c) mx = std::max(mx, X.at(r, c));
            double sum = 0.0;
            for (int c = 0; c < limit; ++c) {
                const double e = std::exp(X.at(r, c) - mx);
                n.value.at(r, c) = e;
                sum += e;
            }
            for (int c = 0; c < limit; ++c) n.value.at(r, c) /= sum;
            for (int c = limit; c < X.cols; ++c) n.value.at(r, c) = 0.0;
        }
        return push(std::move(n));
    }

    int embed_rows(int table, const std::vector<int>& idx) {
        const Tensor& T = value(table);
        Node n = make(Op::embed_rows, {table}, static_cast<int>(idx.size()), T.cols);
        n.indices = idx;
        for (size_t i = 0; i < idx.size(); ++i) {
            if (idx[i] < 0 || idx[i] >= T.rows)
                fail("embed_rows: index ", idx[i], " out of range [0,", T.rows, ")");
            n.value.map().row(static_cast<int>(i)) = T.map().row(idx[i]);
        }
        return push(std::move(n));
    }

    int concat_rows(const std::vector<int>& parts) {
        require(!parts.empty(), "concat_rows: empty part list");
        const int cols = value(parts[0]).cols;
        int rows = 0;
        for (int p : parts) {
            if (value(p).cols != cols)
                fail("concat_rows: part has ", value(p).cols, " cols, expected ", cols);
            rows += value(p).rows;
        }
        Node n = make(Op::concat_rows, parts, rows, cols);
        int r = 0;
        for (int p : parts) {
            const Tensor& P = value(p);
            n.value.map().middleRows(r, P.rows) = P.map();
            r += P.rows;
        }
        return push(std::move(n));
    }

    int concat_cols(const std::vector<int>& parts) {
        require(!parts.empty(), "concat_cols: empty part list");
        const int rows = value(parts[0]).rows;
        int cols = 0;
        for (int p : parts) {
            if (value(p).rows != rows)
                fail("concat_cols: part has ", value(p).rows, " rows, expected ", rows);
            cols += value(p).cols;
        }
        Node n = make(Op::concat_cols, parts, rows, cols);
        int c = 0;
        for (int p : parts) {
            const Tensor& P = value(p);
            n.value.map().middleCols(c, P.cols) = P.map();
            c += P.cols;
        }
        return push(std::move(n));
    }

    int slice_rows(int a, int start, int len) {
        const Tensor& A = value(a);
        if (start < 0 || len < 0 || start + len > A.rows)
            fail("slice_rows: [", start, ",", start + len, ") out of ", A.rows, " rows");
        Node n = make(Op::slice_rows, {a}, len, A.cols);
        n.start = start;
        n.len = len;
        n.value.map() = A.map().middleRows(start, len);
        return push(std::move(n));
    }

    int slice_cols(int a, int start, int len) {
        const Tensor& A = value(a);
        if (start < 0 || len < 0 || start + len > A.cols)
            fail("slice_cols: [", start, ",", start + len, ") out of ", A.cols, " cols");
        Node n = make(Op::slice_cols, {a}, A.rows, len);
        n.start = start;
        n.len = len;
        n.value.map() = A.map().middleCols(start, len);
        return push(std::move(n));
    }

    // Sum of -log softmax(logits[i])[targets[i]] over rows where mask[i] != 0.
    // An empty mask counts every row. Result is a [1,1] scalar.
    int nll_sum(int logits, const std::vector<int>& targets, const std::vector<uint8_t>& mask = {}) {
        const Tensor& L = value(logits);
        if (static_cast<int>(targets.size()) != L.rows)
            fail("nll_sum: ", targets.size(), " targets for ", L.rows, " logit rows");
        if (!mask.empty() && mask.size() != targets.size())
            fail("nll_sum: mask size ", mask.size(), " != target count ", targets.size());
        Node n = make(Op::nll_sum, {logits}, 1, 1);
        n.indices = targets;
        n.mask = mask;
        double total = 0.0;
        for (int r = 0; r < L.rows; ++r) {
            if (!mask.empty() && !mask[r]) continue;
            if (targets[r] < 0 || targets[r] >= L.cols)
                fail("nll_sum: target ", targets[r], " out of range [0,", L.cols, ")");
            total += row_logsumexp(L, r) - L.at(r, targets[r]);
        }
        n.value.data[0] = total;
        return push(std::move(n));
    }

    // Accumulates d(loss)/d(node) into every reachable node with needs_grad.
    void backward(int loss_id) {
        const Tensor& loss = value(loss_id);
        require(loss.rows == 1 && loss.cols == 1, "backward: loss must be [1,1]");
        if (!node(loss_id).needs_grad) return;  // everything upstream is frozen
        touch_grad(loss_id).data[0] = 1.0;
        for (int id = loss_id; id >= 0; --id) {
            Node& n = nodes_[id];
            if (!n.needs_grad || n.grad.data.empty()) continue;
            propagate(n);
        }
    }

    // Adds leaf gradients into buf, keyed by param index.
    void add_param_grads(GradBuffer& buf) const {
        for (const Node& n : nodes_) {
            if (n.op != Op::param || n.grad.data.empty()) continue;
            const Tensor& v = *n.external;
            buf.ensure(n.param_index, v.rows, v.cols);
            buf.grads[n.param_index].add_(n.grad);
        }
    }

  private:
    std::vector<Node> nodes_;

    const Node& node(int id) const {
        require(id >= 0 && id < static_cast<int>(nodes_.size()), "graph: bad node id");
        return nodes_[id];
    }

    Node make(Op op, std::vector<int> inputs, int rows, int cols) {
        Node n;
        n.op = op;
        n.inputs = std::move(inputs);
        n.value = Tensor(rows, cols);
        for (int i : n.inputs) n.needs_grad = n.needs_grad || node(i).needs_grad;
        return n;
    }

    int push(Node n) {
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    Tensor& touch_grad(int id) {
        Node& n = nodes_[id];
        if (n.grad.data.empty()) {
            const Tensor& v = value(id);
            n.grad = Tensor::zeros(v.rows, v.cols);
        }
        return n.grad;
    }

    // Grad sink for input i of node n; returns nullptr when i is frozen.
    Tensor* sink(const Node& n, size_t slot) {
        const int id = n.inputs[slot];
        if (!nodes_[id].needs_grad) return nullptr;
        return &touch_grad(id);
    }

    static double row_logsumexp(const Tensor& L, int r) {
        const double mx = L.map().row(r).maxCoeff();
        double sum = 0.0;
        for (int c = 0; c < L.cols; ++c) sum += std::exp(L.at(r, c) - mx);
        return mx + std::log(sum);
    }

    void propagate(Node& n) {
        const Tensor& g = n.grad;
        switch (n.op) {
            case Op::input:
            case Op::param:
                break;
            case Op::matmul: {
                const Tensor& A = value(n.inputs[0]);
                const Tensor& B = value(n.inputs[1]);
                if (Tensor* da = sink(n, 0)) da->map().noalias() += g.map() * B.map().transpose();
                if (Tensor* db = sink(n, 1)) db->map().noalias() += A.map().transpose() * g.map();
                break;
            }
            case Op::matmul_nt: {
                const Tensor& A = value(n.inputs[0]);
                const Tensor& B = value(n.inputs[1]);
                if (Tensor* da = sink(n, 0)) da->map().noalias() += g.map() * B.map();
                if (Tensor* db = sink(n, 1)) db->map().noalias() += g.map().transpose() * A.map();
                break;
            }
            case Op::linear: {
                const Tensor& X = value(n.inputs[0]);
                const Tensor& W = value(n.inputs[1]);
                if (Tensor* dx = sink(n, 0)) dx->map().noalias() += g.map() * W.map();
                if (Tensor* dw = sink(n, 1)) dw->map().noalias() += g.map().transpose() * X.map();
                if (Tensor* db = sink(n, 2)) db->map().row(0) += g.map().colwise().sum();
                break;
            }
            case Op::add: {
                if (Tensor* da = sink(n, 0)) da->map() += g.map();
                if (Tensor* db = sink(n, 1)) db->map() += g.map();
                break;
            }
            case Op::mul: {
                const Tensor& A = value(n.inputs[0]);
                const Tensor& B = value(n.inputs[1]);
                if (Tensor* da = sink(n, 0)) da->map() += g.map().cwiseProduct(B.map());
                if (Tensor* db = sink(n, 1)) db->map() += g.map().cwiseProduct(A.map());
                break;
            }
            case Op::scale: {
                if (Tensor* da = sink(n, 0)) da->map() += g.map() * n.factor;
                break;
            }
            case Op::relu: {
                const Tensor& A = value(n.inputs[0]);
                if (Tensor* da = sink(n, 0))
                    da->map().array() += g.map().array() * (A.map().array() > 0.0).cast<double>();
                break;
            }
            case Op::layer_norm: {
                const Tensor& X = value(n.inputs[0]);
                const Tensor& G = value(n.inputs[1]);
                Tensor* dx = sink(n, 0);
                Tensor* dg = sink(n, 1);
                Tensor* db = sink(n, 2);
                const int d = X.cols;
                using RowArray = Eigen::Array<double, 1, Eigen::Dynamic>;
                for (int r = 0; r < X.rows; ++r) {
                    const double mean = n.ln_mean.data[r];
                    const double istd = n.ln_istd.data[r];
                    RowArray xhat = (X.map().row(r).array() - mean) * istd;
                    RowArray gy = g.map().row(r).array();
                    if (dg) dg->map().row(0).array() += gy * xhat;
                    if (db) db->map().row(0).array() += gy;
                    if (dx) {
                        RowArray dxhat = gy * G.map().row(0).array();
                        const double m1 = dxhat.sum() / d;
                        const double m2 = (dxhat * xhat).sum() / d;
                        dx->map().row(r).array() += istd * (dxhat - m1 - xhat * m2);
                    }
                }
                break;
            }
            case Op::softmax_rows: {
                const Tensor& P = n.value;
                if (Tensor* dx = sink(n, 0)) {
                    for (int r = 0; r < P.rows; ++r) {
                        const double dot = g.map().row(r).dot(P.map().row(r));
                        dx->map().row(r).array() +=
                            P.map().row(r).array() * (g.map().row(r).array() - dot);
                    }
                }
                break;
            }
            case Op::embed_rows: {
                if (Tensor* dt = sink(n, 0)) {
                    for (size_t i = 0; i < n.indices.size(); ++i)
                        dt->map().row(n.indices[i]) += g.map().row(static_cast<int>(i));
                }
                break;
            }
            case Op::concat_rows: {
                int r = 0;
                for (size_t i = 0; i < n.inputs.size(); ++i) {
                    const int rows = value(n.inputs[i]).rows;
                    if (Tensor* dp = sink(n, i)) dp->map() += g.map().middleRows(r, rows);
                    r += rows;
                }
                break;
            }
            case Op::concat_cols: {
                int c = 0;
                for (size_t i = 0; i < n.inputs.size(); ++i) {
                    const int cols = value(n.inputs[i]).cols;
                    if (Tensor* dp = sink(n, i)) dp->map() += g.map().middleCols(c, cols);
                    c += cols;
                }
                break;
            }
            case Op::slice_rows: {
                if (Tensor* da = sink(n, 0)) da->map().middleRows(n.start, n.len) += g.map();
                break;
            }
            case Op::slice_cols: {
                if (Tensor* da = sink(n, 0)) da->map().middleCols(n.start, n.len) += g.map();
                break;
            }
            case Op::nll_sum: {
                const Tensor& L = value(n.inputs[0]);
                if (Tensor* dl = sink(n, 0)) {
                    const double gy = g.data[0];
                    for (int r = 0; r < L.rows; ++r) {
                        if (!n.mask.empty() && !n.mask[r]) continue;
                        const double lse = row_logsumexp(L, r);
                        for (int c = 0; c < L.cols; ++c)
                            dl->at(r, c) += gy * std::exp(L.at(r, c) - lse);
                        dl->at(r, n.indices[r]) -= gy;
                    }
                }
                break;
            }
        }
    }
};

}  // namespace mixt
