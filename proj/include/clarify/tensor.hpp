#pragma once
// Dense row-major matrices with reverse-mode differentiation.
//
// Every tensor is 2-D: a vector is 1 x n and a scalar is 1 x 1. Ops build a
// graph of shared nodes; backward() walks it once in reverse topological order.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "core.hpp"
#include "rng.hpp"

namespace clarify {

struct ShapeError : InputError {
    using InputError::InputError;
};

struct Node {
    std::size_t rows = 0, cols = 0;
    std::vector<double> value;
    std::vector<double> grad;  // empty until something flows into it
    bool requires_grad = false;
    bool consumed = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    void ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), 0.0);
    }
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

    Tensor(std::size_t rows, std::size_t cols, std::vector<double> values, bool requires_grad = false)
        : node_(std::make_shared<Node>()) {
        if (values.size() != rows * cols)
            throw ShapeError("tensor [" + std::to_string(rows) + "x" + std::to_string(cols) + "] given " +
                             std::to_string(values.size()) + " values");
        node_->rows = rows;
        node_->cols = cols;
        node_->value = std::move(values);
        node_->requires_grad = requires_grad;
    }

    static Tensor zeros(std::size_t rows, std::size_t cols, bool requires_grad = false) {
        return Tensor(rows, cols, std::vector<double>(rows * cols, 0.0), requires_grad);
    }
    static Tensor scalar(double v, bool requires_grad = false) { return Tensor(1, 1, {v}, requires_grad); }
    static Tensor row(std::vector<double> v, bool requires_grad = false) {
        const auto n = v.size();
        return Tensor(1, n, std::move(v), requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    std::size_t rows() const { return node_->rows; }
    std::size_t cols() const { return node_->cols; }
    std::size_t size() const { return node_->value.size(); }
    std::vector<std::size_t> shape() const { return {rows(), cols()}; }
    std::string shape_str() const { return "[" + std::to_string(rows()) + "x" + std::to_string(cols()) + "]"; }

    const std::vector<double>& values() const { return node_->value; }
    std::vector<double>& mutable_values() { return node_->value; }
    double at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }
    double item() const {
        if (size() != 1) throw ShapeError("item() on " + shape_str());
        return node_->value[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    bool has_grad() const { return !node_->grad.empty(); }
    // Zeros when nothing has flowed back yet.
    std::vector<double> grad() const {
        return node_->grad.empty() ? std::vector<double>(size(), 0.0) : node_->grad;
    }
    void zero_grad() { node_->grad.clear(); }

    Tensor detach() const { return Tensor(rows(), cols(), values(), false); }

    Node* node() const { return node_.get(); }
    const std::shared_ptr<Node>& ptr() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

namespace tensor_detail {

inline Tensor make(std::size_t rows, std::size_t cols, std::vector<double> value, std::vector<Tensor> parents,
                   std::function<void(Node&)> backward) {
    auto n = std::make_shared<Node>();
    n->rows = rows;
    n->cols = cols;
    n->value = std::move(value);
    for (const auto& p : parents) n->requires_grad = n->requires_grad || p.requires_grad();
    if (n->requires_grad) {
        for (auto& p : parents) n->parents.push_back(p.ptr());
        n->backward = std::move(backward);
    }
    return Tensor(std::move(n));
}

inline void require_same(const char* op, const Tensor& a, const Tensor& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

}  // namespace tensor_detail

// ─── backward ────────────────────────────────────────────────────────────────

inline void backward(const Tensor& loss) {
    if (!loss.defined()) throw std::logic_error("backward on an undefined tensor");
    if (loss.size() != 1) throw ShapeError("backward needs a scalar loss, got " + loss.shape_str());
    Node* root = loss.node();
    if (root->consumed) throw std::logic_error("backward already ran on this graph; rebuild it before calling again");
    if (!root->requires_grad) throw std::logic_error("loss is detached: no input requires a gradient");

    std::vector<Node*> order;
    std::unordered_set<Node*> seen{root};
    std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            Node* p = n->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    root->ensure_grad();
    root->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward && !n->grad.empty()) n->backward(*n);
    }
    // Interior nodes drop their closures and gradients; leaves keep theirs.
    for (Node* n : order) {
        if (!n->backward) continue;
        n->backward = nullptr;
        n->parents.clear();
        n->grad.clear();
        n->grad.shrink_to_fit();
        n->consumed = true;
    }
    root->consumed = true;
}

// ─── elementwise ─────────────────────────────────────────────────────────────

inline Tensor add(const Tensor& a, const Tensor& b) {
    tensor_detail::require_same("add", a, b);
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
    return tensor_detail::make(a.rows(), a.cols(), std::move(out), {a, b}, [](Node& self) {
        for (auto& p : self.parents) {
            if (!p->requires_grad) continue;
            p->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
        }
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    tensor_detail::require_same("sub", a, b);
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
    return tensor_detail::make(a.rows(), a.cols(), std::move(out), {a, b}, [](Node& self) {
        for (int k = 0; k < 2; ++k) {
            auto& p = self.parents[static_cast<std::size_t>(k)];
            if (!p->requires_grad) continue;
            p->ensure_grad();
            const double s = k == 0 ? 1.0 : -1.0;
            for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += s * self.grad[i];
        }
    });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    tensor_detail::require_same("mul", a, b);
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
    return tensor_detail::make(a.rows(), a.cols(), std::move(out), {a, b}, [](Node& self) {
        auto& A = *self.parents[0];
        auto& B = *self.parents[1];
        if (A.requires_grad) {
            A.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) A.grad[i] += self.grad[i] * B.value[i];
        }
        if (B.requires_grad) {
            B.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) B.grad[i] += self.grad[i] * A.value[i];
        }
    });
}

// a + broadcast of the 1 x n row b over every row of a.
inline Tensor add_row(const Tensor& a, const Tensor& b) {
    if (b.rows() != 1 || b.cols() != a.cols())
        throw ShapeError("add_row: cannot broadcast " + b.shape_str() + " over " + a.shape_str());
    const std::size_t n = a.cols();
    std::vector<double> out(a.values());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.values()[i % n];
    return tensor_detail::make(a.rows(), n, std::move(out), {a, b}, [n](Node& self) {
        auto& A = *self.parents[0];
        auto& B = *self.parents[1];
        if (A.requires_grad) {
            A.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) A.grad[i] += self.grad[i];
        }
        if (B.requires_grad) {
            B.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) B.grad[i % n] += self.grad[i];
        }
    });
}

inline Tensor scale(const Tensor& a, double s) {
    std::vector<double> out(a.values());
    for (auto& v : out) v *= s;
    return tensor_detail::make(a.rows(), a.cols(), std::move(out), {a}, [s](Node& self) {
        auto& A = *self.parents[0];
        A.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) A.grad[i] += s * self.grad[i];
    });
}

inline Tensor add_scalar(const Tensor& a, double s) {
    std::vector<double> out(a.values());
    for (auto& v : out) v += s;
    return tensor_detail::make(a.rows(), a.cols(), std::move(out), {a}, [](Node& self) {
        auto& A = *self.parents[0];
        A.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) A.grad[i] += self.grad[i];
    });
}

inline Tensor relu(const Tensor& a) {
    std::vector<double> out(a.values());
    for (auto& v : out) v = v > 0.0 ? v : 0.0;
    return tensor_detail::make(a.rows(), a.cols(), std::move(out), {a}, [](Node& self) {
        auto& A = *self.parents[0];
        A.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            if (A.value[i] > 0.0) A.grad[i] += self.grad[i];
    });
}

inline Tensor tanh(const Tensor& a) {
    std::vector<double> out(a.values());
    for (auto& v : out) v = std::tanh(v);
    return tensor_detail::make(a.rows(), a.cols(), std::move(out), {a}, [](Node& self) {
        auto& A = *self.parents[0];
        A.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            A.grad[i] += self.grad[i] * (1.0 - self.value[i] * self.value[i]);
    });
}

// ─── reductions ──────────────────────────────────────────────────────────────

inline Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.values()) s += v;
    return tensor_detail::make(1, 1, {s}, {a}, [](Node& self) {
        auto& A = *self.parents[0];
        A.ensure_grad();
        for (auto& g : A.grad) g += self.grad[0];
    });
}

inline Tensor mean(const Tensor& a) {
    if (a.size() == 0) throw ShapeError("mean of an empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

inline Tensor element(const Tensor& a, std::size_t r, std::size_t c) {
    if (r >= a.rows() || c >= a.cols())
        throw ShapeError("element (" + std::to_string(r) + "," + std::to_string(c) + ") outside " + a.shape_str());
    const std::size_t idx = r * a.cols() + c;
    return tensor_detail::make(1, 1, {a.values()[idx]}, {a}, [idx](Node& self) {
        auto& A = *self.parents[0];
        A.ensure_grad();
        A.grad[idx] += self.grad[0];
    });
}

// ─── products and layout ─────────────────────────────────────────────────────

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows()) throw ShapeError("matmul: shape mismatch " + a.shape_str() + " x " + b.shape_str());
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    std::vector<double> out(m * n, 0.0);
    const double* A = a.values().data();
    const double* B = b.values().data();
    for (std::size_t i = 0; i < m; ++i) {
        double* o = out.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = A[i * k + p];
            if (av == 0.0) continue;
            const double* brow = B + p * n;
            for (std::size_t j = 0; j < n; ++j) o[j] += av * brow[j];
        }
    }
    return tensor_detail::make(m, n, std::move(out), {a, b}, [m, k, n](Node& self) {
        auto& Ap = *self.parents[0];
        auto& Bp = *self.parents[1];
        const double* G = self.grad.data();
        if (Ap.requires_grad) {
            Ap.ensure_grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const double* brow = Bp.value.data() + p * n;
                    const double* grow = G + i * n;
                    double s = 0.0;
                    for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
                    Ap.grad[i * k + p] += s;
                }
        }
        if (Bp.requires_grad) {
            Bp.ensure_grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const double av = Ap.value[i * k + p];
                    if (av == 0.0) continue;
                    double* bg = Bp.grad.data() + p * n;
                    const double* grow = G + i * n;
                    for (std::size_t j = 0; j < n; ++j) bg[j] += av * grow[j];
                }
        }
    });
}

// Same row-major values under a new shape.
inline Tensor reshape(const Tensor& a, std::size_t rows, std::size_t cols) {
    if (rows * cols != a.size()) throw ShapeError("reshape " + a.shape_str() + " to [" + std::to_string(rows) + "x" + std::to_string(cols) + "]");
    return tensor_detail::make(rows, cols, a.values(), {a}, [](Node& self) {
        auto& A = *self.parents[0];
        A.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) A.grad[i] += self.grad[i];
    });
}

inline Tensor transpose(const Tensor& a) {
    const std::size_t r = a.rows(), c = a.cols();
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a.values()[i * c + j];
    return tensor_detail::make(c, r, std::move(out), {a}, [r, c](Node& self) {
        auto& A = *self.parents[0];
        A.ensure_grad();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) A.grad[i * c + j] += self.grad[j * r + i];
    });
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows of nothing");
    const std::size_t c = parts[0].cols();
    std::size_t r = 0;
    for (const auto& p : parts) {
        if (p.cols() != c) throw ShapeError("concat_rows: shape mismatch " + parts[0].shape_str() + " vs " + p.shape_str());
        r += p.rows();
    }
    std::vector<double> out;
    out.reserve(r * c);
    for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
    return tensor_detail::make(r, c, std::move(out), parts, [](Node& self) {
        std::size_t off = 0;
        for (auto& p : self.parents) {
            const std::size_t n = p->value.size();
            if (p->requires_grad) {
                p->ensure_grad();
                for (std::size_t i = 0; i < n; ++i) p->grad[i] += self.grad[off + i];
            }
            off += n;
        }
    });
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols of nothing");
    const std::size_t r = parts[0].rows();
    std::size_t c = 0;
    for (const auto& p : parts) {
        if (p.rows() != r) throw ShapeError("concat_cols: shape mismatch " + parts[0].shape_str() + " vs " + p.shape_str());
        c += p.cols();
    }
    std::vector<double> out(r * c);
    std::size_t off = 0;
    for (const auto& p : parts) {
        for (std::size_t i = 0; i < r; ++i)
            std::copy_n(p.values().begin() + static_cast<std::ptrdiff_t>(i * p.cols()), p.cols(),
                        out.begin() + static_cast<std::ptrdiff_t>(i * c + off));
        off += p.cols();
    }
    return tensor_detail::make(r, c, std::move(out), parts, [r, c](Node& self) {
        std::size_t off = 0;
        for (auto& p : self.parents) {
            const std::size_t pc = p->cols;
            if (p->requires_grad) {
                p->ensure_grad();
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < pc; ++j) p->grad[i * pc + j] += self.grad[i * c + off + j];
            }
            off += pc;
        }
    });
}

inline Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
    if (begin > end || end > a.rows())
        throw ShapeError("slice_rows [" + std::to_string(begin) + "," + std::to_string(end) + ") of " + a.shape_str());
    const std::size_t c = a.cols();
    std::vector<double> out(a.values().begin() + static_cast<std::ptrdiff_t>(begin * c),
                            a.values().begin() + static_cast<std::ptrdiff_t>(end * c));
    return tensor_detail::make(end - begin, c, std::move(out), {a}, [begin, c](Node& self) {
        auto& A = *self.parents[0];
        A.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) A.grad[begin * c + i] += self.grad[i];
    });
}

inline Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
    if (begin > end || end > a.cols())
        throw ShapeError("slice_cols [" + std::to_string(begin) + "," + std::to_string(end) + ") of " + a.shape_str());
    const std::size_t r = a.rows(), c = a.cols(), w = end - begin;
    std::vector<double> out(r * w);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < w; ++j) out[i * w + j] = a.values()[i * c + begin + j];
    return tensor_detail::make(r, w, std::move(out), {a}, [r, c, w, begin](Node& self) {
        auto& A = *self.parents[0];
        A.ensure_grad();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < w; ++j) A.grad[i * c + begin + j] += self.grad[i * w + j];
    });
}

// Splits columns into `parts` equal blocks.
inline std::vector<Tensor> split_cols(const Tensor& a, std::size_t parts) {
    if (parts == 0 || a.cols() % parts != 0)
        throw ShapeError("split_cols: " + a.shape_str() + " into " + std::to_string(parts) + " parts");
    const std::size_t w = a.cols() / parts;
    std::vector<Tensor> out;
    for (std::size_t p = 0; p < parts; ++p) out.push_back(slice_cols(a, p * w, (p + 1) * w));
    return out;
}

// ─── row-wise normalizers ────────────────────────────────────────────────────

inline Tensor softmax_rows(const Tensor& a) {
    const std::size_t r = a.rows(), c = a.cols();
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < r; ++i) {
        const double* x = a.values().data() + i * c;
        double* y = out.data() + i * c;
        const double mx = *std::max_element(x, x + c);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) z += (y[j] = std::exp(x[j] - mx));
        for (std::size_t j = 0; j < c; ++j) y[j] /= z;
    }
    return tensor_detail::make(r, c, std::move(out), {a}, [r, c](Node& self) {
        auto& A = *self.parents[0];
        A.ensure_grad();
        for (std::size_t i = 0; i < r; ++i) {
            const double* y = self.value.data() + i * c;
            const double* g = self.grad.data() + i * c;
            double dot = 0.0;
            for (std::size_t j = 0; j < c; ++j) dot += g[j] * y[j];
            for (std::size_t j = 0; j < c; ++j) A.grad[i * c + j] += y[j] * (g[j] - dot);
        }
    });
}

inline Tensor log_softmax_rows(const Tensor& a) {
    const std::size_t r = a.rows(), c = a.cols();
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < r; ++i) {
        const double* x = a.values().data() + i * c;
        const double mx = *std::max_element(x, x + c);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) z += std::exp(x[j] - mx);
        const double lz = mx + std::log(z);
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x[j] - lz;
    }
    return tensor_detail::make(r, c, std::move(out), {a}, [r, c](Node& self) {
        auto& A = *self.parents[0];
        A.ensure_grad();
        for (std::size_t i = 0; i < r; ++i) {
            const double* y = self.value.data() + i * c;
            const double* g = self.grad.data() + i * c;
            double gs = 0.0;
            for (std::size_t j = 0; j < c; ++j) gs += g[j];
            for (std::size_t j = 0; j < c; ++j) A.grad[i * c + j] += g[j] - std::exp(y[j]) * gs;
        }
    });
}

inline constexpr double kLayerNormEps = 1e-12;

// Per-row standardization, then gain and bias (both 1 x cols).
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = kLayerNormEps) {
    const std::size_t r = x.rows(), c = x.cols();
    if (gain.rows() != 1 || gain.cols() != c || bias.rows() != 1 || bias.cols() != c)
        throw ShapeError("layer_norm: shape mismatch " + x.shape_str() + " with gain " + gain.shape_str() + ", bias " +
                         bias.shape_str());
    std::vector<double> xhat(x.size()), inv_std(r), out(x.size());
    for (std::size_t i = 0; i < r; ++i) {
        const double* xi = x.values().data() + i * c;
        double mu = 0.0;
        for (std::size_t j = 0; j < c; ++j) mu += xi[j];
        mu /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) var += (xi[j] - mu) * (xi[j] - mu);
        var /= static_cast<double>(c);
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < c; ++j) {
            xhat[i * c + j] = (xi[j] - mu) * inv_std[i];
            out[i * c + j] = xhat[i * c + j] * gain.values()[j] + bias.values()[j];
        }
    }
    return tensor_detail::make(
        r, c, std::move(out), {x, gain, bias},
        [r, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
            auto& X = *self.parents[0];
            auto& G = *self.parents[1];
            auto& B = *self.parents[2];
            if (G.requires_grad) G.ensure_grad();
            if (B.requires_grad) B.ensure_grad();
            if (X.requires_grad) X.ensure_grad();
            std::vector<double> dxhat(c);
            for (std::size_t i = 0; i < r; ++i) {
                const double* g = self.grad.data() + i * c;
                const double* xh = xhat.data() + i * c;
                double s1 = 0.0, s2 = 0.0;
                for (std::size_t j = 0; j < c; ++j) {
                    if (G.requires_grad) G.grad[j] += g[j] * xh[j];
                    if (B.requires_grad) B.grad[j] += g[j];
                    dxhat[j] = g[j] * G.value[j];
                    s1 += dxhat[j];
                    s2 += dxhat[j] * xh[j];
                }
                if (!X.requires_grad) continue;
                const double n = static_cast<double>(c);
                for (std::size_t j = 0; j < c; ++j)
                    X.grad[i * c + j] += inv_std[i] * (dxhat[j] - s1 / n - xh[j] * s2 / n);
            }
        });
}

// ─── grouped ops ─────────────────────────────────────────────────────────────

// A contiguous block of rows treated as one sequence.
struct Segment {
    std::size_t begin = 0;
    std::size_t len = 0;
};

namespace tensor_detail {

inline void check_segments(const char* op, const std::vector<Segment>& segs, std::size_t rows,
                           const std::vector<std::uint8_t>& mask) {
    if (mask.size() != rows)
        throw ShapeError(std::string(op) + ": mask of " + std::to_string(mask.size()) + " entries for " +
                         std::to_string(rows) + " rows");
    for (const auto& s : segs)
        if (s.begin + s.len > rows)
            throw ShapeError(std::string(op) + ": segment [" + std::to_string(s.begin) + "," +
                             std::to_string(s.begin + s.len) + ") beyond " + std::to_string(rows) + " rows");
}

// Attention probabilities laid out per segment, head, query row, key row.
inline std::vector<double> attention_probs(const Tensor& q, const Tensor& k, const std::vector<Segment>& segs,
                                           const std::vector<std::uint8_t>& mask, std::size_t heads) {
    const std::size_t d = q.cols(), dh = d / heads;
    const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
    std::size_t total = 0;
    for (const auto& s : segs) total += heads * s.len * s.len;
    std::vector<double> probs(total, 0.0);
    std::size_t off = 0;
    std::vector<double> sc;
    for (const auto& s : segs) {
        for (std::size_t h = 0; h < heads; ++h) {
            for (std::size_t i = 0; i < s.len; ++i) {
                const double* qi = q.values().data() + (s.begin + i) * d + h * dh;
                double* p = probs.data() + off + (h * s.len + i) * s.len;
                double mx = -std::numeric_limits<double>::infinity();
                sc.assign(s.len, 0.0);
                for (std::size_t j = 0; j < s.len; ++j) {
                    if (!mask[s.begin + j]) continue;
                    const double* kj = k.values().data() + (s.begin + j) * d + h * dh;
                    double dot = 0.0;
                    for (std::size_t t = 0; t < dh; ++t) dot += qi[t] * kj[t];
                    sc[j] = dot * inv;
                    mx = std::max(mx, sc[j]);
                }
                if (!std::isfinite(mx)) continue;  // no visible keys
                double z = 0.0;
                for (std::size_t j = 0; j < s.len; ++j)
                    if (mask[s.begin + j]) z += (p[j] = std::exp(sc[j] - mx));
                for (std::size_t j = 0; j < s.len; ++j) p[j] /= z;
            }
        }
        off += heads * s.len * s.len;
    }
    return probs;
}

}  // namespace tensor_detail

// Scaled dot-product attention within each segment, one head per block of
// d / heads columns. Keys whose mask entry is 0 are invisible; every row still
// produces an output from the visible keys of its segment. Rows outside all
// segments get zeros.
inline Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const std::vector<Segment>& segs,
                        const std::vector<std::uint8_t>& mask, std::size_t heads) {
    tensor_detail::require_same("attention q/k", q, k);
    tensor_detail::require_same("attention q/v", q, v);
    if (heads == 0 || q.cols() % heads != 0)
        throw ShapeError("attention: " + std::to_string(heads) + " heads do not divide width " + std::to_string(q.cols()));
    tensor_detail::check_segments("attention", segs, q.rows(), mask);
    const std::size_t d = q.cols(), dh = d / heads;
    auto probs = tensor_detail::attention_probs(q, k, segs, mask, heads);
    std::vector<double> out(q.size(), 0.0);
    std::size_t off = 0;
    for (const auto& s : segs) {
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t i = 0; i < s.len; ++i) {
                const double* p = probs.data() + off + (h * s.len + i) * s.len;
                double* o = out.data() + (s.begin + i) * d + h * dh;
                for (std::size_t j = 0; j < s.len; ++j) {
                    if (p[j] == 0.0) continue;
                    const double* vj = v.values().data() + (s.begin + j) * d + h * dh;
                    for (std::size_t t = 0; t < dh; ++t) o[t] += p[j] * vj[t];
                }
            }
        off += heads * s.len * s.len;
    }
    return tensor_detail::make(
        q.rows(), d, std::move(out), {q, k, v},
        [segs, heads, d, dh, probs = std::move(probs)](Node& self) {
            auto& Q = *self.parents[0];
            auto& K = *self.parents[1];
            auto& V = *self.parents[2];
            Q.ensure_grad();
            K.ensure_grad();
            V.ensure_grad();
            const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
            std::size_t off = 0;
            std::vector<double> dp;
            for (const auto& s : segs) {
                for (std::size_t h = 0; h < heads; ++h)
                    for (std::size_t i = 0; i < s.len; ++i) {
                        const double* p = probs.data() + off + (h * s.len + i) * s.len;
                        const double* go = self.grad.data() + (s.begin + i) * d + h * dh;
                        dp.assign(s.len, 0.0);
                        double dot = 0.0;
                        for (std::size_t j = 0; j < s.len; ++j) {
                            if (p[j] == 0.0) continue;
                            const std::size_t row = (s.begin + j) * d + h * dh;
                            double acc = 0.0;
                            for (std::size_t t = 0; t < dh; ++t) {
                                acc += go[t] * V.value[row + t];
                                V.grad[row + t] += p[j] * go[t];
                            }
                            dp[j] = acc;
                            dot += p[j] * acc;
                        }
                        const std::size_t qrow = (s.begin + i) * d + h * dh;
                        for (std::size_t j = 0; j < s.len; ++j) {
                            if (p[j] == 0.0) continue;
                            const double ds = p[j] * (dp[j] - dot) * inv;
                            const std::size_t krow = (s.begin + j) * d + h * dh;
                            for (std::size_t t = 0; t < dh; ++t) {
                                Q.grad[qrow + t] += ds * K.value[krow + t];
                                K.grad[krow + t] += ds * Q.value[qrow + t];
                            }
                        }
                    }
                off += heads * s.len * s.len;
            }
        });
}

// Attention probabilities for inspection: entry [seg][head][i][j].
inline std::vector<std::vector<std::vector<std::vector<double>>>> attention_weights(
    const Tensor& q, const Tensor& k, const std::vector<Segment>& segs, const std::vector<std::uint8_t>& mask,
    std::size_t heads) {
    tensor_detail::require_same("attention q/k", q, k);
    if (heads == 0 || q.cols() % heads != 0)
        throw ShapeError("attention: " + std::to_string(heads) + " heads do not divide width " + std::to_string(q.cols()));
    tensor_detail::check_segments("attention", segs, q.rows(), mask);
    const auto flat = tensor_detail::attention_probs(q, k, segs, mask, heads);
    std::vector<std::vector<std::vector<std::vector<double>>>> out;
    std::size_t off = 0;
    for (const auto& s : segs) {
        auto& seg = out.emplace_back(heads, std::vector<std::vector<double>>(s.len, std::vector<double>(s.len)));
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t i = 0; i < s.len; ++i)
                for (std::size_t j = 0; j < s.len; ++j) seg[h][i][j] = flat[off + (h * s.len + i) * s.len + j];
        off += heads * s.len * s.len;
    }
    return out;
}

// out[s] = sum of coef[r] * x[r] over the rows r of segment s. Rows with a zero
// coefficient are skipped outright, so padding cannot leak in.
inline Tensor segment_pool(const Tensor& x, const std::vector<Segment>& segs, const std::vector<double>& coef) {
    if (coef.size() != x.rows())
        throw ShapeError("segment_pool: " + std::to_string(coef.size()) + " coefficients for " + x.shape_str());
    for (const auto& s : segs)
        if (s.begin + s.len > x.rows()) throw ShapeError("segment_pool: segment beyond " + x.shape_str());
    const std::size_t c = x.cols();
    std::vector<double> out(segs.size() * c, 0.0);
    for (std::size_t si = 0; si < segs.size(); ++si)
        for (std::size_t r = segs[si].begin; r < segs[si].begin + segs[si].len; ++r) {
            if (coef[r] == 0.0) continue;
            for (std::size_t j = 0; j < c; ++j) out[si * c + j] += coef[r] * x.values()[r * c + j];
        }
    return tensor_detail::make(segs.size(), c, std::move(out), {x}, [segs, coef, c](Node& self) {
        auto& X = *self.parents[0];
        X.ensure_grad();
        for (std::size_t si = 0; si < segs.size(); ++si)
            for (std::size_t r = segs[si].begin; r < segs[si].begin + segs[si].len; ++r) {
                if (coef[r] == 0.0) continue;
                for (std::size_t j = 0; j < c; ++j) X.grad[r * c + j] += coef[r] * self.grad[si * c + j];
            }
    });
}

// Mean of the table rows listed in each bag.
inline Tensor embedding_bag(const Tensor& table, const std::vector<std::vector<std::uint32_t>>& bags) {
    const std::size_t e = table.cols();
    std::vector<double> out(bags.size() * e, 0.0);
    for (std::size_t b = 0; b < bags.size(); ++b) {
        if (bags[b].empty()) throw ShapeError("embedding_bag: empty bag");
        const double w = 1.0 / static_cast<double>(bags[b].size());
        for (auto id : bags[b]) {
            if (id >= table.rows())
                throw ShapeError("embedding_bag: row " + std::to_string(id) + " outside " + table.shape_str());
            for (std::size_t j = 0; j < e; ++j) out[b * e + j] += w * table.values()[id * e + j];
        }
    }
    return tensor_detail::make(bags.size(), e, std::move(out), {table}, [bags, e](Node& self) {
        auto& T = *self.parents[0];
        T.ensure_grad();
        for (std::size_t b = 0; b < bags.size(); ++b) {
            const double w = 1.0 / static_cast<double>(bags[b].size());
            for (auto id : bags[b])
                for (std::size_t j = 0; j < e; ++j) T.grad[id * e + j] += w * self.grad[b * e + j];
        }
    });
}

// ─── gradient checking ───────────────────────────────────────────────────────

// |analytic - numeric| / max(|analytic|, |numeric|, floor), maximized over every
// entry of every parameter, using central differences with step h.
inline double max_gradient_error(const std::function<Tensor()>& loss_fn, std::vector<Tensor> params, double h = 1e-5,
                                 double floor = 1e-6) {
    for (auto& p : params) p.zero_grad();
    backward(loss_fn());
    double worst = 0.0;
    for (auto& p : params) {
        const auto analytic = p.grad();
        auto& v = p.mutable_values();
        for (std::size_t i = 0; i < v.size(); ++i) {
            const double keep = v[i];
            v[i] = keep + h;
            const double up = loss_fn().item();
            v[i] = keep - h;
            const double down = loss_fn().item();
            v[i] = keep;
            const double numeric = (up - down) / (2.0 * h);
            const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
            worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
        }
    }
    return worst;
}

}  // namespace clarify
