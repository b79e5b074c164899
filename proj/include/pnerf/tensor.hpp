#pragma once

// Minimal reverse-mode autodiff over dense row-major float tensors.
// Ops record backward closures on the active Tape; backward() replays
// them in reverse order, accumulating gradients additively on fan-out.

#include <Eigen/Dense>

#include <cassert>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace pnerf {

using MatX = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatX>;
using CMapM = Eigen::Map<const MatX>;

inline std::string shape_str(const std::vector<int>& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
    return out + "]";
}

struct TensorData {
    std::vector<int> shape;
    std::vector<float> value;
    std::vector<float> grad;  // empty until first accumulation
    bool requires_grad = false;

    int64_t numel() const {
        return std::accumulate(shape.begin(), shape.end(), int64_t{1},
                               std::multiplies<int64_t>());
    }
    int rows() const { return shape.empty() ? 1 : shape[0]; }
    int cols() const {
        int64_t c = 1;
        for (size_t i = 1; i < shape.size(); ++i) c *= shape[i];
        return static_cast<int>(c);
    }
    void ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), 0.0f);
    }
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorData> d) : d_(std::move(d)) {}

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
        auto d = std::make_shared<TensorData>();
        d->shape = std::move(shape);
        d->value.assign(d->numel(), 0.0f);
        d->requires_grad = requires_grad;
        return Tensor(d);
    }
    static Tensor from(std::vector<int> shape, std::vector<float> value,
                       bool requires_grad = false) {
        auto d = std::make_shared<TensorData>();
        d->shape = std::move(shape);
        d->value = std::move(value);
        d->requires_grad = requires_grad;
        if (d->numel() != static_cast<int64_t>(d->value.size()))
            throw std::invalid_argument("tensor data length " +
                                        std::to_string(d->value.size()) +
                                        " does not match shape " + shape_str(d->shape));
        return Tensor(d);
    }
    static Tensor scalar(float v, bool requires_grad = false) {
        return from({1}, {v}, requires_grad);
    }

    bool valid() const { return d_ != nullptr; }
    const std::vector<int>& shape() const { return d_->shape; }
    int rows() const { return d_->rows(); }
    int cols() const { return d_->cols(); }
    int64_t numel() const { return d_->numel(); }
    bool requires_grad() const { return d_->requires_grad; }

    std::vector<float>& value() { return d_->value; }
    const std::vector<float>& value() const { return d_->value; }
    std::vector<float>& grad() { d_->ensure_grad(); return d_->grad; }
    bool has_grad() const { return !d_->grad.empty(); }
    void zero_grad() { d_->grad.clear(); }

    float item() const {
        assert(numel() == 1);
        return d_->value[0];
    }

    MapM mat() { return MapM(d_->value.data(), rows(), cols()); }
    CMapM mat() const { return CMapM(d_->value.data(), rows(), cols()); }
    MapM gmat() { d_->ensure_grad(); return MapM(d_->grad.data(), rows(), cols()); }

    // Value copy that does not participate in the graph.
    Tensor detach() const {
        auto d = std::make_shared<TensorData>();
        d->shape = d_->shape;
        d->value = d_->value;
        d->requires_grad = false;
        return Tensor(d);
    }

    std::shared_ptr<TensorData> data_ptr() const { return d_; }

private:
    std::shared_ptr<TensorData> d_;
};

// Ordered op record; reverse iteration is reverse-topological because
// ops are appended in execution order.
class Tape {
public:
    void push(std::function<void()> backward) { records_.push_back(std::move(backward)); }
    bool empty() const { return records_.empty(); }
    size_t size() const { return records_.size(); }
    void clear() { records_.clear(); }

    void run_backward() {
        for (auto it = records_.rbegin(); it != records_.rend(); ++it) (*it)();
        records_.clear();
    }

    static Tape*& current() {
        static thread_local Tape* t = nullptr;
        return t;
    }

private:
    std::vector<std::function<void()>> records_;
};

// RAII scope making a tape active for recording.
class TapeScope {
public:
    explicit TapeScope(Tape& t) : prev_(Tape::current()) { Tape::current() = &t; }
    ~TapeScope() { Tape::current() = prev_; }

private:
    Tape* prev_;
};

namespace detail {

inline void check_finite(const Tensor& t, const char* op) {
#ifndef NDEBUG
    for (float v : t.value())
        if (!std::isfinite(v))
            throw std::runtime_error(std::string("non-finite value produced by ") + op);
#else
    (void)t;
    (void)op;
#endif
}

inline bool tracing(const Tensor& a) {
    return Tape::current() != nullptr && a.requires_grad();
}
inline bool tracing(const Tensor& a, const Tensor& b) {
    return Tape::current() != nullptr && (a.requires_grad() || b.requires_grad());
}

inline Tensor make_out(std::vector<int> shape, bool req) {
    Tensor t = Tensor::zeros(std::move(shape));
    if (req) {
        auto d = t.data_ptr();
        d->requires_grad = true;
    }
    return t;
}

// Output grad viewed as a matrix; empty grad reads as zeros.
inline MatX out_grad(const std::shared_ptr<TensorData>& d) {
    if (d->grad.empty()) return MatX::Zero(d->rows(), d->cols());
    return CMapM(d->grad.data(), d->rows(), d->cols());
}

}  // namespace detail

// ---- forward ops -----------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows())
        throw std::invalid_argument("matmul shape mismatch: " + shape_str(a.shape()) +
                                    " x " + shape_str(b.shape()));
    bool rec = detail::tracing(a, b);
    Tensor out = detail::make_out({a.rows(), b.cols()}, rec);
    out.mat().noalias() = a.mat() * b.mat();
    detail::check_finite(out, "matmul");
    if (rec) {
        auto ad = a.data_ptr(), bd = b.data_ptr(), od = out.data_ptr();
        Tape::current()->push([ad, bd, od] {
            MatX go = detail::out_grad(od);
            if (ad->requires_grad) {
                ad->ensure_grad();
                MapM(ad->grad.data(), ad->rows(), ad->cols()).noalias() +=
                    go * CMapM(bd->value.data(), bd->rows(), bd->cols()).transpose();
            }
            if (bd->requires_grad) {
                bd->ensure_grad();
                MapM(bd->grad.data(), bd->rows(), bd->cols()).noalias() +=
                    CMapM(ad->value.data(), ad->rows(), ad->cols()).transpose() * go;
            }
        });
    }
    return out;
}

// add with broadcast: equal shapes, row-vector (1,C) against (N,C), or scalar.
inline Tensor add(const Tensor& a, const Tensor& b) {
    bool b_scalar = b.numel() == 1;
    bool b_row = !b_scalar && b.rows() == 1 && b.cols() == a.cols();
    bool same = a.rows() == b.rows() && a.cols() == b.cols();
    if (!(same || b_row || b_scalar))
        throw std::invalid_argument("add shape mismatch: " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
    bool rec = detail::tracing(a, b);
    Tensor out = detail::make_out(a.shape(), rec);
    if (same)
        out.mat() = a.mat() + b.mat();
    else if (b_row)
        out.mat() = a.mat().rowwise() + b.mat().row(0);
    else
        out.mat() = a.mat().array() + b.item();
    detail::check_finite(out, "add");
    if (rec) {
        auto ad = a.data_ptr(), bd = b.data_ptr(), od = out.data_ptr();
        Tape::current()->push([ad, bd, od, same, b_row] {
            MatX go = detail::out_grad(od);
            if (ad->requires_grad) {
                ad->ensure_grad();
                MapM(ad->grad.data(), ad->rows(), ad->cols()) += go;
            }
            if (bd->requires_grad) {
                bd->ensure_grad();
                MapM bg(bd->grad.data(), bd->rows(), bd->cols());
                if (same)
                    bg += go;
                else if (b_row)
                    bg.row(0) += go.colwise().sum();
                else
                    bg(0, 0) += go.sum();
            }
        });
    }
    return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw std::invalid_argument("sub shape mismatch: " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
    bool rec = detail::tracing(a, b);
    Tensor out = detail::make_out(a.shape(), rec);
    out.mat() = a.mat() - b.mat();
    if (rec) {
        auto ad = a.data_ptr(), bd = b.data_ptr(), od = out.data_ptr();
        Tape::current()->push([ad, bd, od] {
            MatX go = detail::out_grad(od);
            if (ad->requires_grad) {
                ad->ensure_grad();
                MapM(ad->grad.data(), ad->rows(), ad->cols()) += go;
            }
            if (bd->requires_grad) {
                bd->ensure_grad();
                MapM(bd->grad.data(), bd->rows(), bd->cols()) -= go;
            }
        });
    }
    return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw std::invalid_argument("mul shape mismatch: " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
    bool rec = detail::tracing(a, b);
    Tensor out = detail::make_out(a.shape(), rec);
    out.mat() = a.mat().cwiseProduct(b.mat());
    detail::check_finite(out, "mul");
    if (rec) {
        auto ad = a.data_ptr(), bd = b.data_ptr(), od = out.data_ptr();
        Tape::current()->push([ad, bd, od] {
            MatX go = detail::out_grad(od);
            if (ad->requires_grad) {
                ad->ensure_grad();
                MapM(ad->grad.data(), ad->rows(), ad->cols()).array() +=
                    go.array() * CMapM(bd->value.data(), bd->rows(), bd->cols()).array();
            }
            if (bd->requires_grad) {
                bd->ensure_grad();
                MapM(bd->grad.data(), bd->rows(), bd->cols()).array() +=
                    go.array() * CMapM(ad->value.data(), ad->rows(), ad->cols()).array();
            }
        });
    }
    return out;
}

inline Tensor div(const Tensor& a, const Tensor& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw std::invalid_argument("div shape mismatch: " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
    bool rec = detail::tracing(a, b);
    Tensor out = detail::make_out(a.shape(), rec);
    out.mat() = a.mat().cwiseQuotient(b.mat());
    detail::check_finite(out, "div");
    if (rec) {
        auto ad = a.data_ptr(), bd = b.data_ptr(), od = out.data_ptr();
        Tape::current()->push([ad, bd, od] {
            MatX go = detail::out_grad(od);
            CMapM bv(bd->value.data(), bd->rows(), bd->cols());
            if (ad->requires_grad) {
                ad->ensure_grad();
                MapM(ad->grad.data(), ad->rows(), ad->cols()).array() +=
                    go.array() / bv.array();
            }
            if (bd->requires_grad) {
                bd->ensure_grad();
                CMapM av(ad->value.data(), ad->rows(), ad->cols());
                MapM(bd->grad.data(), bd->rows(), bd->cols()).array() -=
                    go.array() * av.array() / (bv.array() * bv.array());
            }
        });
    }
    return out;
}

inline Tensor scale(const Tensor& a, float s) {
    bool rec = detail::tracing(a);
    Tensor out = detail::make_out(a.shape(), rec);
    out.mat() = a.mat() * s;
    if (rec) {
        auto ad = a.data_ptr(), od = out.data_ptr();
        Tape::current()->push([ad, od, s] {
            if (!ad->requires_grad) return;
            ad->ensure_grad();
            MapM(ad->grad.data(), ad->rows(), ad->cols()) += detail::out_grad(od) * s;
        });
    }
    return out;
}

namespace detail {

template <class Fwd, class Bwd>
Tensor unary_op(const Tensor& a, const char* name, Fwd fwd, Bwd dval) {
    bool rec = tracing(a);
    Tensor out = make_out(a.shape(), rec);
    for (int64_t i = 0; i < a.numel(); ++i) out.value()[i] = fwd(a.value()[i]);
    check_finite(out, name);
    if (rec) {
        auto ad = a.data_ptr(), od = out.data_ptr();
        Tape::current()->push([ad, od, dval] {
            if (!ad->requires_grad) return;
            ad->ensure_grad();
            MatX go = out_grad(od);
            for (int64_t i = 0; i < ad->numel(); ++i)
                ad->grad[i] += go(i / ad->cols(), i % ad->cols()) *
                               dval(ad->value[i], od->value[i]);
        });
    }
    return out;
}

}  // namespace detail

inline Tensor relu(const Tensor& a) {
    return detail::unary_op(
        a, "relu", [](float x) { return x > 0 ? x : 0.0f; },
        [](float x, float) { return x > 0 ? 1.0f : 0.0f; });
}

inline Tensor softplus(const Tensor& a) {
    return detail::unary_op(
        a, "softplus",
        [](float x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
        [](float x, float) { return 1.0f / (1.0f + std::exp(-x)); });
}

inline Tensor sigmoid(const Tensor& a) {
    return detail::unary_op(
        a, "sigmoid", [](float x) { return 1.0f / (1.0f + std::exp(-x)); },
        [](float, float y) { return y * (1.0f - y); });
}

inline Tensor exp_(const Tensor& a) {
    return detail::unary_op(
        a, "exp", [](float x) { return std::exp(x); },
        [](float, float y) { return y; });
}

inline Tensor log_(const Tensor& a) {
    return detail::unary_op(
        a, "log", [](float x) { return std::log(x); },
        [](float x, float) { return 1.0f / x; });
}

// log(max(x, floor)); gradient is zero where the floor is active.
inline Tensor log_clamped(const Tensor& a, float floor) {
    return detail::unary_op(
        a, "log_clamped",
        [floor](float x) { return std::log(x < floor ? floor : x); },
        [floor](float x, float) { return x < floor ? 0.0f : 1.0f / x; });
}

inline Tensor clamp_min(const Tensor& a, float lo) {
    return detail::unary_op(
        a, "clamp_min", [lo](float x) { return x < lo ? lo : x; },
        [lo](float x, float) { return x < lo ? 0.0f : 1.0f; });
}

// softmax over the last axis.
inline Tensor softmax(const Tensor& a) {
    bool rec = detail::tracing(a);
    Tensor out = detail::make_out(a.shape(), rec);
    for (int r = 0; r < a.rows(); ++r) {
        auto row = a.mat().row(r);
        float m = row.maxCoeff();
        Eigen::RowVectorXf e = (row.array() - m).exp();
        out.mat().row(r) = e / e.sum();
    }
    detail::check_finite(out, "softmax");
    if (rec) {
        auto ad = a.data_ptr(), od = out.data_ptr();
        Tape::current()->push([ad, od] {
            if (!ad->requires_grad) return;
            ad->ensure_grad();
            MatX go = detail::out_grad(od);
            CMapM y(od->value.data(), od->rows(), od->cols());
            MapM ag(ad->grad.data(), ad->rows(), ad->cols());
            for (int r = 0; r < od->rows(); ++r) {
                float dot = go.row(r).cwiseProduct(y.row(r)).sum();
                ag.row(r).array() += y.row(r).array() * (go.row(r).array() - dot);
            }
        });
    }
    return out;
}

inline Tensor log_softmax(const Tensor& a) {
    bool rec = detail::tracing(a);
    Tensor out = detail::make_out(a.shape(), rec);
    for (int r = 0; r < a.rows(); ++r) {
        auto row = a.mat().row(r);
        float m = row.maxCoeff();
        float lse = m + std::log((row.array() - m).exp().sum());
        out.mat().row(r) = row.array() - lse;
    }
    detail::check_finite(out, "log_softmax");
    if (rec) {
        auto ad = a.data_ptr(), od = out.data_ptr();
        Tape::current()->push([ad, od] {
            if (!ad->requires_grad) return;
            ad->ensure_grad();
            MatX go = detail::out_grad(od);
            CMapM lp(od->value.data(), od->rows(), od->cols());
            MapM ag(ad->grad.data(), ad->rows(), ad->cols());
            for (int r = 0; r < od->rows(); ++r) {
                float gsum = go.row(r).sum();
                ag.row(r).array() +=
                    go.row(r).array() - lp.row(r).array().exp() * gsum;
            }
        });
    }
    return out;
}

// sum over all entries -> scalar, or over one axis.
inline Tensor sum(const Tensor& a) {
    bool rec = detail::tracing(a);
    Tensor out = detail::make_out({1}, rec);
    out.value()[0] = a.mat().sum();
    if (rec) {
        auto ad = a.data_ptr(), od = out.data_ptr();
        Tape::current()->push([ad, od] {
            if (!ad->requires_grad) return;
            ad->ensure_grad();
            float g = od->grad.empty() ? 0.0f : od->grad[0];
            MapM(ad->grad.data(), ad->rows(), ad->cols()).array() += g;
        });
    }
    return out;
}

inline Tensor mean(const Tensor& a) { return scale(sum(a), 1.0f / float(a.numel())); }

// axis=0: column sums (1,C); axis=1: row sums (N,1).
inline Tensor sum_axis(const Tensor& a, int axis) {
    if (axis != 0 && axis != 1) throw std::invalid_argument("sum_axis: axis must be 0 or 1");
    bool rec = detail::tracing(a);
    Tensor out = detail::make_out(axis == 0 ? std::vector<int>{1, a.cols()}
                                            : std::vector<int>{a.rows(), 1},
                                  rec);
    if (axis == 0)
        out.mat() = a.mat().colwise().sum();
    else
        out.mat() = a.mat().rowwise().sum();
    if (rec) {
        auto ad = a.data_ptr(), od = out.data_ptr();
        Tape::current()->push([ad, od, axis] {
            if (!ad->requires_grad) return;
            ad->ensure_grad();
            MatX go = detail::out_grad(od);
            MapM ag(ad->grad.data(), ad->rows(), ad->cols());
            if (axis == 0)
                ag.rowwise() += go.row(0);
            else
                ag.colwise() += go.col(0);
        });
    }
    return out;
}

inline Tensor concat_cols(const Tensor& a, const Tensor& b) {
    if (a.rows() != b.rows())
        throw std::invalid_argument("concat shape mismatch: " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
    bool rec = detail::tracing(a, b);
    Tensor out = detail::make_out({a.rows(), a.cols() + b.cols()}, rec);
    out.mat().leftCols(a.cols()) = a.mat();
    out.mat().rightCols(b.cols()) = b.mat();
    if (rec) {
        auto ad = a.data_ptr(), bd = b.data_ptr(), od = out.data_ptr();
        Tape::current()->push([ad, bd, od] {
            MatX go = detail::out_grad(od);
            if (ad->requires_grad) {
                ad->ensure_grad();
                MapM(ad->grad.data(), ad->rows(), ad->cols()) +=
                    go.leftCols(ad->cols());
            }
            if (bd->requires_grad) {
                bd->ensure_grad();
                MapM(bd->grad.data(), bd->rows(), bd->cols()) +=
                    go.rightCols(bd->cols());
            }
        });
    }
    return out;
}

// Select rows of a by index.
inline Tensor gather_rows(const Tensor& a, const std::vector<int>& idx) {
    bool rec = detail::tracing(a);
    Tensor out = detail::make_out({static_cast<int>(idx.size()), a.cols()}, rec);
    for (size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || idx[i] >= a.rows())
            throw std::out_of_range("gather_rows index out of range");
        out.mat().row(static_cast<int>(i)) = a.mat().row(idx[i]);
    }
    if (rec) {
        auto ad = a.data_ptr(), od = out.data_ptr();
        Tape::current()->push([ad, od, idx] {
            if (!ad->requires_grad) return;
            ad->ensure_grad();
            MatX go = detail::out_grad(od);
            MapM ag(ad->grad.data(), ad->rows(), ad->cols());
            for (size_t i = 0; i < idx.size(); ++i)
                ag.row(idx[i]) += go.row(static_cast<int>(i));
        });
    }
    return out;
}

inline MatX one_hot(const std::vector<int>& labels, int num_classes) {
    MatX m = MatX::Zero(static_cast<int>(labels.size()), num_classes);
    for (size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= num_classes)
            throw std::out_of_range("one_hot label out of range");
        m(static_cast<int>(i), labels[i]) = 1.0f;
    }
    return m;
}

// ---- backward --------------------------------------------------------------

inline void backward(Tensor loss) {
    if (loss.numel() != 1)
        throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                    shape_str(loss.shape()));
    Tape* tape = Tape::current();
    if (!tape || tape->empty()) throw std::runtime_error("backward: empty tape");
    loss.grad()[0] = 1.0f;
    tape->run_backward();
}

}  // namespace pnerf
