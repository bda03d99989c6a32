#pragma once

// Reverse-mode autodiff over Eigen matrices, plus the Adam optimizer and a
// finite-difference gradient checker. The tape is rebuilt every step:
// parameters live outside as plain matrices, get pushed in as inputs, and
// their gradients are read back after backward().
//
// Nodes are appended in construction order, so reverse index order is a
// valid topological order for backpropagation.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "iqtk/error.hpp"
#include "iqtk/rng.hpp"

namespace iqtk::nn {

using Mat = Eigen::MatrixXd;

class Tape {
  public:
    struct Var {
        int idx = -1;
    };

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var input(Mat value) {
        return push(std::move(value), {});
    }

    const Mat& value(Var v) const { return at(v).value; }
    const Mat& grad(Var v) const { return at(v).grad; }

    // ---- elementwise -----------------------------------------------------

    Var add(Var a, Var b) {
        require_same_shape(a, b, "add");
        Mat out = value(a) + value(b);
        return push(std::move(out), [this, a, b](const Mat& g) {
            at(a).grad += g;
            at(b).grad += g;
        });
    }

    Var sub(Var a, Var b) {
        require_same_shape(a, b, "sub");
        Mat out = value(a) - value(b);
        return push(std::move(out), [this, a, b](const Mat& g) {
            at(a).grad += g;
            at(b).grad -= g;
        });
    }

    Var mul(Var a, Var b) {
        require_same_shape(a, b, "mul");
        Mat out = value(a).cwiseProduct(value(b));
        return push(std::move(out), [this, a, b](const Mat& g) {
            at(a).grad += g.cwiseProduct(value(b));
            at(b).grad += g.cwiseProduct(value(a));
        });
    }

    // out = a * mul + add, elementwise scalars
    Var affine(Var a, double mul_by, double add_by) {
        Mat out = (value(a).array() * mul_by + add_by).matrix();
        return push(std::move(out), [this, a, mul_by](const Mat& g) {
            at(a).grad += g * mul_by;
        });
    }

    Var scale(Var a, double s) { return affine(a, s, 0.0); }

    // ---- linear algebra ---------------------------------------------------

    Var matmul(Var a, Var b) {
        if (value(a).cols() != value(b).rows()) {
            throw DimensionError("matmul: inner dimensions disagree (" +
                                 shape_str(a) + " x " + shape_str(b) + ")");
        }
        Mat out = value(a) * value(b);
        return push(std::move(out), [this, a, b](const Mat& g) {
            at(a).grad += g * value(b).transpose();
            at(b).grad += value(a).transpose() * g;
        });
    }

    Var transpose(Var a) {
        Mat out = value(a).transpose();
        return push(std::move(out), [this, a](const Mat& g) {
            at(a).grad += g.transpose();
        });
    }

    // broadcast a 1 x C row over every row of an R x C matrix (bias add)
    Var add_rowvec(Var m, Var row) {
        if (value(row).rows() != 1 || value(row).cols() != value(m).cols()) {
            throw DimensionError("add_rowvec: need 1x" + std::to_string(value(m).cols()) +
                                 " row, got " + shape_str(row));
        }
        Mat out = value(m).rowwise() + value(row).row(0);
        return push(std::move(out), [this, m, row](const Mat& g) {
            at(m).grad += g;
            at(row).grad.row(0) += g.colwise().sum();
        });
    }

    // pick rows by index (embedding lookup); duplicates accumulate gradient
    Var select_rows(Var a, std::vector<Eigen::Index> rows) {
        const Mat& src = value(a);
        for (auto r : rows) {
            if (r < 0 || r >= src.rows()) {
                throw DimensionError("select_rows: index out of range");
            }
        }
        Mat out(static_cast<Eigen::Index>(rows.size()), src.cols());
        for (Eigen::Index i = 0; i < out.rows(); ++i) {
            out.row(i) = src.row(rows[static_cast<std::size_t>(i)]);
        }
        return push(std::move(out), [this, a, rows](const Mat& g) {
            for (Eigen::Index i = 0; i < g.rows(); ++i) {
                at(a).grad.row(rows[static_cast<std::size_t>(i)]) += g.row(i);
            }
        });
    }

    // K x C -> 1 x C column means
    Var mean_rows(Var a) {
        const auto k = static_cast<double>(value(a).rows());
        Mat out = value(a).colwise().mean();
        return push(std::move(out), [this, a, k](const Mat& g) {
            at(a).grad += (Mat::Ones(value(a).rows(), 1) / k) * g;
        });
    }

    Var sum_all(Var a) {
        Mat out(1, 1);
        out(0, 0) = value(a).sum();
        return push(std::move(out), [this, a](const Mat& g) {
            at(a).grad.array() += g(0, 0);
        });
    }

    Var mean_all(Var a) {
        const auto n = static_cast<double>(value(a).size());
        Mat out(1, 1);
        out(0, 0) = value(a).mean();
        return push(std::move(out), [this, a, n](const Mat& g) {
            at(a).grad.array() += g(0, 0) / n;
        });
    }

    // ---- nonlinearities ---------------------------------------------------

    Var relu(Var a) {
        Mat out = value(a).cwiseMax(0.0);
        return push(std::move(out), [this, a](const Mat& g) {
            at(a).grad += (value(a).array() > 0.0).cast<double>().matrix().cwiseProduct(g);
        });
    }

    Var tanh_(Var a) {
        Mat out = value(a).array().tanh().matrix();
        const int self = next_index();
        return push(std::move(out), [this, a, self](const Mat& g) {
            const Mat& y = nodes_[static_cast<std::size_t>(self)].value;
            at(a).grad += g.cwiseProduct((1.0 - y.array().square()).matrix());
        });
    }

    Var sigmoid(Var a) {
        Mat out = value(a).unaryExpr([](double x) { return stable_sigmoid(x); });
        const int self = next_index();
        return push(std::move(out), [this, a, self](const Mat& g) {
            const Mat& y = nodes_[static_cast<std::size_t>(self)].value;
            at(a).grad += g.cwiseProduct((y.array() * (1.0 - y.array())).matrix());
        });
    }

    // row-wise softmax, max-shifted for stability
    Var softmax_rows(Var a) {
        Mat out = value(a);
        for (Eigen::Index r = 0; r < out.rows(); ++r) {
            const double mx = out.row(r).maxCoeff();
            out.row(r) = (out.row(r).array() - mx).exp();
            out.row(r) /= out.row(r).sum();
        }
        const int self = next_index();
        return push(std::move(out), [this, a, self](const Mat& g) {
            const Mat& y = nodes_[static_cast<std::size_t>(self)].value;
            for (Eigen::Index r = 0; r < y.rows(); ++r) {
                const double dot = g.row(r).dot(y.row(r));
                at(a).grad.row(r) +=
                    (y.row(r).array() * (g.row(r).array() - dot)).matrix();
            }
        });
    }

    // ---- losses (scalar outputs) -------------------------------------------

    // mean over all elements of the stable binary cross-entropy with logits:
    //   l(z, t) = max(z, 0) - z t + log(1 + exp(-|z|))
    Var bce_with_logits(Var logits, const Mat& targets) {
        if (targets.rows() != value(logits).rows() || targets.cols() != value(logits).cols()) {
            throw DimensionError("bce_with_logits: target shape mismatch");
        }
        const Mat& z = value(logits);
        double total = 0.0;
        for (Eigen::Index i = 0; i < z.rows(); ++i) {
            for (Eigen::Index j = 0; j < z.cols(); ++j) {
                const double zz = z(i, j);
                total += std::max(zz, 0.0) - zz * targets(i, j) +
                         std::log1p(std::exp(-std::abs(zz)));
            }
        }
        const auto n = static_cast<double>(z.size());
        Mat out(1, 1);
        out(0, 0) = total / n;
        return push(std::move(out), [this, logits, targets, n](const Mat& g) {
            const Mat& zv = value(logits);
            const Mat p = zv.unaryExpr([](double x) { return stable_sigmoid(x); });
            at(logits).grad += (p - targets) * (g(0, 0) / n);
        });
    }

    // mean over rows of softmax cross-entropy against integer class targets
    Var softmax_ce(Var logits, const std::vector<int>& target_class) {
        const Mat& z = value(logits);
        if (static_cast<Eigen::Index>(target_class.size()) != z.rows()) {
            throw DimensionError("softmax_ce: one target class per row required");
        }
        Mat probs = z;
        double total = 0.0;
        for (Eigen::Index r = 0; r < z.rows(); ++r) {
            const int cls = target_class[static_cast<std::size_t>(r)];
            if (cls < 0 || cls >= z.cols()) {
                throw DimensionError("softmax_ce: target class out of range");
            }
            const double mx = z.row(r).maxCoeff();
            const double lse = mx + std::log((z.row(r).array() - mx).exp().sum());
            total += lse - z(r, cls);
            probs.row(r) = (z.row(r).array() - mx).exp();
            probs.row(r) /= probs.row(r).sum();
        }
        const auto n = static_cast<double>(z.rows());
        Mat out(1, 1);
        out(0, 0) = total / n;
        return push(std::move(out), [this, logits, probs, target_class, n](const Mat& g) {
            Mat d = probs;
            for (Eigen::Index r = 0; r < d.rows(); ++r) {
                d(r, target_class[static_cast<std::size_t>(r)]) -= 1.0;
            }
            at(logits).grad += d * (g(0, 0) / n);
        });
    }

    // ---- backward -----------------------------------------------------------

    void backward(Var loss) {
        if (value(loss).size() != 1) {
            throw DimensionError("backward: loss must be a 1x1 scalar");
        }
        for (auto& n : nodes_) {
            n.grad.setZero(n.value.rows(), n.value.cols());
        }
        nodes_[static_cast<std::size_t>(loss.idx)].grad(0, 0) = 1.0;
        for (int i = loss.idx; i >= 0; --i) {
            auto& n = nodes_[static_cast<std::size_t>(i)];
            if (n.back) n.back(n.grad);
        }
    }

    std::size_t size() const { return nodes_.size(); }

    static double stable_sigmoid(double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
    }

  private:
    struct Node {
        Mat value;
        Mat grad;
        std::function<void(const Mat&)> back;
    };

    std::vector<Node> nodes_;

    Node& at(Var v) { return nodes_.at(static_cast<std::size_t>(v.idx)); }
    const Node& at(Var v) const { return nodes_.at(static_cast<std::size_t>(v.idx)); }
    int next_index() const { return static_cast<int>(nodes_.size()); }

    Var push(Mat value, std::function<void(const Mat&)> back) {
        Node n;
        n.value = std::move(value);
        n.back = std::move(back);
        nodes_.push_back(std::move(n));
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    std::string shape_str(Var v) const {
        return std::to_string(value(v).rows()) + "x" + std::to_string(value(v).cols());
    }

    void require_same_shape(Var a, Var b, const char* op) {
        if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols()) {
            throw DimensionError(std::string(op) + ": shape mismatch (" + shape_str(a) +
                                 " vs " + shape_str(b) + ")");
        }
    }
};

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

class Adam {
  public:
    explicit Adam(double lr = 0.001, double beta1 = 0.9, double beta2 = 0.999,
                  double eps = 1e-8)
        : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
        if (lr < 0.0) throw InvalidSpecError("adam: learning rate must be nonnegative");
    }

    double learning_rate() const { return lr_; }

    // params[i] is updated in place using grads[i]
    void step(const std::vector<Mat*>& params, const std::vector<const Mat*>& grads) {
        if (params.size() != grads.size()) {
            throw DimensionError("adam: params/grads count mismatch");
        }
        if (m_.empty()) {
            for (const Mat* p : params) {
                m_.push_back(Mat::Zero(p->rows(), p->cols()));
                v_.push_back(Mat::Zero(p->rows(), p->cols()));
            }
        }
        if (m_.size() != params.size()) {
            throw DimensionError("adam: parameter count changed between steps");
        }
        ++t_;
        const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            Mat& p = *params[i];
            const Mat& g = *grads[i];
            if (g.rows() != p.rows() || g.cols() != p.cols()) {
                throw DimensionError("adam: gradient shape mismatch");
            }
            m_[i] = b1_ * m_[i] + (1.0 - b1_) * g;
            v_[i] = b2_ * v_[i] + (1.0 - b2_) * g.cwiseProduct(g);
            const Mat mhat = m_[i] / c1;
            const Mat vhat = v_[i] / c2;
            p.array() -= lr_ * mhat.array() / (vhat.array().sqrt() + eps_);
        }
    }

  private:
    double lr_, b1_, b2_, eps_;
    long t_ = 0;
    std::vector<Mat> m_, v_;
};

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

namespace init {

inline Mat glorot(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
    const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < cols; ++j) {
            m(i, j) = rng.uniform(-a, a);
        }
    }
    return m;
}

inline Mat zeros(Eigen::Index rows, Eigen::Index cols) { return Mat::Zero(rows, cols); }

}  // namespace init

// ---------------------------------------------------------------------------
// Gradient check
// ---------------------------------------------------------------------------

// Builds the loss twice per perturbed element and compares the analytic
// gradient with central finite differences. `make_loss` receives a tape and
// the parameter Vars (inputs pushed in the given order) and returns the
// scalar loss Var. Returns the worst relative error across all elements.
template <typename MakeLoss>
double max_relative_gradient_error(const std::vector<Mat>& params, MakeLoss make_loss,
                                   double h = 1e-5) {
    std::vector<Mat> analytic;
    {
        Tape tape;
        std::vector<Tape::Var> vars;
        vars.reserve(params.size());
        for (const auto& p : params) vars.push_back(tape.input(p));
        const auto loss = make_loss(tape, vars);
        tape.backward(loss);
        for (const auto& v : vars) analytic.push_back(tape.grad(v));
    }
    const auto eval_loss = [&](const std::vector<Mat>& at) {
        Tape tape;
        std::vector<Tape::Var> vars;
        vars.reserve(at.size());
        for (const auto& p : at) vars.push_back(tape.input(p));
        return tape.value(make_loss(tape, vars))(0, 0);
    };
    double worst = 0.0;
    std::vector<Mat> probe = params;
    for (std::size_t k = 0; k < params.size(); ++k) {
        for (Eigen::Index i = 0; i < params[k].rows(); ++i) {
            for (Eigen::Index j = 0; j < params[k].cols(); ++j) {
                const double orig = probe[k](i, j);
                probe[k](i, j) = orig + h;
                const double up = eval_loss(probe);
                probe[k](i, j) = orig - h;
                const double down = eval_loss(probe);
                probe[k](i, j) = orig;
                const double numeric = (up - down) / (2.0 * h);
                const double a = analytic[k](i, j);
                const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
                worst = std::max(worst, std::abs(a - numeric) / denom);
            }
        }
    }
    return worst;
}

}  // namespace iqtk::nn
